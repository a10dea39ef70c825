from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .base import IDomain
from .errors import InvalidArgumentError
from .grid import GridField


class QuadraticAnsatz(IDomain):
    """u(t, x) = -(x-m)^T A (x-m) + p; p stays 0 when I(t) comes from the constraint."""

    def __init__(self, m: Sequence[float], A: Sequence[Sequence[float]] | np.ndarray, t: float, p: float = 0.0) -> None:
        self.m = np.atleast_1d(np.asarray(m, dtype=float))
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.t = float(t)
        self.p = float(p)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        offset = np.asarray(points, dtype=float) - self.m
        return self.p - np.einsum("...i,ij,...j->...", offset, self.A, offset)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        offset = np.asarray(points, dtype=float) - self.m
        return -2.0 * np.einsum("ij,...j->...i", self.A, offset)

    def upper_triangle(self) -> List[float]:
        rows, cols = np.triu_indices(self.A.shape[0])
        return self.A[rows, cols].tolist()

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "m": self.m.tolist(), "A": self.A.tolist(), "p": self.p}


class TrajectorySample(IDomain):
    def __init__(
        self,
        t: float,
        xbar: Sequence[float],
        I: float,
        rho: float,
        constraint_residual: float,
        R_residual: float,
        A: Optional[np.ndarray] = None,
    ) -> None:
        self.t = float(t)
        self.xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
        self.I = float(I)
        self.rho = float(rho)
        self.constraint_residual = float(constraint_residual)
        self.R_residual = float(R_residual)
        self.A = None if A is None else np.atleast_2d(np.asarray(A, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "t": self.t,
            "xbar": self.xbar.tolist(),
            "I": self.I,
            "rho": self.rho,
            "constraint_residual": self.constraint_residual,
            "R_residual": self.R_residual,
        }
        if self.A is not None:
            payload["A"] = self.A.tolist()
        return payload


class ProjectionEvent(IDomain):
    def __init__(self, t: float, shift: float) -> None:
        self.t = float(t)
        self.shift = float(shift)

    def to_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "shift": self.shift}


class TrajectoryRecord(IDomain):
    """Time series of (t, xbar, I, rho, residuals) with optional snapshots and run diagnostics."""

    def __init__(self, dimension: int, source: str) -> None:
        self.dimension = int(dimension)
        self.source = source
        self.samples: List[TrajectorySample] = []
        self.snapshots: List[GridField] = []
        self.projections: List[ProjectionEvent] = []
        self.ansatz_history: List[QuadraticAnsatz] = []
        self.diagnostics: Dict[str, Any] = {}
        self.metadata: Dict[str, Any] = {}

    def add(self, sample: TrajectorySample) -> None:
        if self.samples and sample.t <= self.samples[-1].t:
            raise InvalidArgumentError(
                f"Trajectory times must increase strictly: {sample.t} after {self.samples[-1].t}"
            )
        self.samples.append(sample)

    def add_snapshot(self, field: GridField) -> None:
        self.snapshots.append(field)

    def times(self) -> np.ndarray:
        return np.array([sample.t for sample in self.samples])

    def resources(self) -> np.ndarray:
        return np.array([sample.I for sample in self.samples])

    def traits(self) -> np.ndarray:
        return np.array([sample.xbar for sample in self.samples]).reshape(len(self.samples), self.dimension)

    def constraint_residuals(self) -> np.ndarray:
        return np.array([sample.constraint_residual for sample in self.samples])

    def R_residuals(self) -> np.ndarray:
        return np.array([sample.R_residual for sample in self.samples])

    @property
    def final(self) -> TrajectorySample:
        return self.samples[-1]

    def at(self, t: float) -> Tuple[np.ndarray, float]:
        """Linear interpolation of (xbar, I) at t inside the recorded span."""
        times = self.times()
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise InvalidArgumentError(f"t={t} outside recorded span [{times[0]}, {times[-1]}]")
        traits = self.traits()
        xbar = np.array([np.interp(t, times, traits[:, axis]) for axis in range(self.dimension)])
        return xbar, float(np.interp(t, times, self.resources()))

    def restrict(self, t_end: float) -> "TrajectoryRecord":
        record = TrajectoryRecord(self.dimension, self.source)
        record.samples = [sample for sample in self.samples if sample.t <= t_end + 1e-12]
        record.metadata = dict(self.metadata)
        return record

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source,
            "dimension": self.dimension,
            "samples": len(self.samples),
            "t_final": self.samples[-1].t if self.samples else None,
            "projections": [event.to_dict() for event in self.projections],
            "snapshot_times": [field.t for field in self.snapshots],
            "diagnostics": self.diagnostics,
            "metadata": self.metadata,
        }
