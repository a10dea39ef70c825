from __future__ import annotations

from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .base import IDomain
from .errors import InvalidArgumentError


class GridSpec(IDomain):
    """Axis-aligned box [lo, hi] sampled by n uniform nodes per axis (d in {1, 2})."""

    def __init__(self, lo: Sequence[float], hi: Sequence[float], n: Sequence[int]) -> None:
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.n = tuple(int(value) for value in np.atleast_1d(n))
        if not (self.lo.shape == self.hi.shape and len(self.n) == self.lo.shape[0]):
            raise InvalidArgumentError("Grid bounds and node counts disagree in dimension")
        if self.dimension not in (1, 2):
            raise InvalidArgumentError(f"Grids support d in {{1, 2}}, got d={self.dimension}")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise InvalidArgumentError("Grid bounds must be finite")
        if np.any(self.hi <= self.lo):
            raise InvalidArgumentError("Grid box is empty")
        if min(self.n) < 5:
            raise InvalidArgumentError("At least 5 nodes per axis are required")

    @property
    def dimension(self) -> int:
        return int(self.lo.shape[0])

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.n

    @property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.asarray(self.n, dtype=float) - 1.0)

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lo, self.hi, self.n)]

    def mesh(self) -> List[np.ndarray]:
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates with shape (*n, d)."""
        return np.stack(self.mesh(), axis=-1)

    def node(self, index: Sequence[int]) -> np.ndarray:
        return self.lo + np.asarray(index, dtype=float) * self.h

    def contains(self, x: Sequence[float], margin: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo + margin) and np.all(x <= self.hi - margin))

    def refined(self) -> "GridSpec":
        return GridSpec(self.lo, self.hi, [2 * n - 1 for n in self.n])

    def field(self, values: np.ndarray, t: float = 0.0) -> "GridField":
        return GridField(self.lo, self.hi, self.n, values, t)

    def to_dict(self) -> Dict[str, Any]:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "n": list(self.n)}


class GridField(GridSpec):
    """Scalar field (u, u_eps or n_eps) sampled on a GridSpec at time t."""

    def __init__(
        self,
        lo: Sequence[float],
        hi: Sequence[float],
        n: Sequence[int],
        values: np.ndarray,
        t: float = 0.0,
    ) -> None:
        super().__init__(lo, hi, n)
        values = np.asarray(values, dtype=float)
        if values.shape != self.n:
            raise InvalidArgumentError(f"Field values have shape {values.shape}, expected {self.n}")
        self.values = values
        self.t = float(t)

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.lo, self.hi, self.n)

    def with_values(self, values: np.ndarray, t: float | None = None) -> "GridField":
        return GridField(self.lo, self.hi, self.n, values, self.t if t is None else t)

    def copy(self) -> "GridField":
        return self.with_values(self.values.copy())

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload.update({"t": self.t, "max": float(self.values.max()), "min": float(self.values.min())})
        return payload
