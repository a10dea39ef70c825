from __future__ import annotations

from typing import Any, Dict, Sequence

import numpy as np

from .base import IDomain
from .errors import InvalidArgumentError


class _TimePath(IDomain):
    def __init__(self, times: Sequence[float], values: np.ndarray) -> None:
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or self.times.shape[0] < 2:
            raise InvalidArgumentError("A path needs at least two time samples")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgumentError("Path times must increase strictly")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Path values must be finite")
        self.values = values

    @property
    def delta(self) -> float:
        return float(self.times[-1] - self.times[0])

    def __len__(self) -> int:
        return int(self.times.shape[0])


class TraitPath(_TimePath):
    """Samples x(t_k) with shape (k, d); x(t_0) is the anchor x0."""

    def __init__(self, times: Sequence[float], values: Sequence[Sequence[float]] | np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        super().__init__(times, values)
        if values.shape[0] != self.times.shape[0]:
            raise InvalidArgumentError("Trait path values and times differ in length")

    @property
    def anchor(self) -> np.ndarray:
        return self.values[0]

    @property
    def dimension(self) -> int:
        return int(self.values.shape[1])

    def distance(self, other: "TraitPath") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def shifted(self, offset: float | Sequence[float]) -> "TraitPath":
        return TraitPath(self.times, self.values + np.asarray(offset, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        return {"times": self.times.tolist(), "values": self.values.tolist()}


class ResourcePath(_TimePath):
    def __init__(self, times: Sequence[float], values: Sequence[float] | np.ndarray) -> None:
        values = np.asarray(values, dtype=float).reshape(-1)
        super().__init__(times, values)
        if values.shape[0] != self.times.shape[0]:
            raise InvalidArgumentError("Resource path values and times differ in length")

    def at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def distance(self, other: "ResourcePath") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def to_dict(self) -> Dict[str, Any]:
        return {"times": self.times.tolist(), "values": self.values.tolist()}
