from __future__ import annotations

from typing import Any, Dict, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .base import IDomain
from .errors import InvalidArgumentError
from .grid import GridField, GridSpec


class InitialData(IDomain):
    """Initial condition u0 with its sandwich constants, I0, the initial peak and the mass prefactor r.

    u0 is either the quadratic -(x-m0)^T A0 (x-m0) or a tabulated concave field.
    """

    def __init__(
        self,
        I0: float,
        xbar0: Sequence[float],
        r: float,
        L0_lower: float,
        L1_lower: float,
        L0_upper: float,
        L1_upper: float,
        m0: Optional[Sequence[float]] = None,
        A0: Optional[Sequence[Sequence[float]] | np.ndarray] = None,
        field: Optional[GridField] = None,
        center: Optional[Sequence[float]] = None,
        offset: float = 0.0,
    ) -> None:
        if (m0 is None) == (field is None):
            raise InvalidArgumentError("Initial data needs exactly one of a quadratic form or a tabulated field")
        if m0 is not None and A0 is None:
            raise InvalidArgumentError("Quadratic initial data needs A0")
        if not r > 0:
            raise InvalidArgumentError("Hopf-Cole prefactor r must be positive")
        self.I0 = float(I0)
        self.xbar0 = np.atleast_1d(np.asarray(xbar0, dtype=float))
        self.r = float(r)
        # L0_lower, L1_lower bound u0 from below; L0_upper, L1_upper from above.
        self.L0_lower = float(L0_lower)
        self.L1_lower = float(L1_lower)
        self.L0_upper = float(L0_upper)
        self.L1_upper = float(L1_upper)
        self.m0 = None if m0 is None else np.atleast_1d(np.asarray(m0, dtype=float))
        self.A0 = None if A0 is None else np.atleast_2d(np.asarray(A0, dtype=float))
        self.field = field
        self.center = self.xbar0 if center is None else np.atleast_1d(np.asarray(center, dtype=float))
        # Constant added to a quadratic u0; nonzero values break max u0 = 0.
        self.offset = float(offset)
        self._interpolator: Optional[RegularGridInterpolator] = None

    @property
    def is_quadratic(self) -> bool:
        return self.m0 is not None

    @property
    def dimension(self) -> int:
        return int(self.xbar0.shape[0])

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """u0 at points of shape (..., d)."""
        points = np.asarray(points, dtype=float)
        if self.is_quadratic:
            y = points - self.m0
            return self.offset - np.einsum("...i,ij,...j->...", y, self.A0, y)
        if self._interpolator is None:
            method = "cubic" if min(self.field.n) >= 4 else "linear"
            self._interpolator = RegularGridInterpolator(
                tuple(self.field.axes()), self.field.values, method=method, bounds_error=True
            )
        flat = points.reshape(-1, self.dimension)
        try:
            values = self._interpolator(flat)
        except ValueError as error:
            raise InvalidArgumentError("Requested grid lies outside the tabulated initial field") from error
        return values.reshape(points.shape[:-1])

    def sample(self, spec: GridSpec) -> GridField:
        if self.field is not None and self.field.n == spec.n and np.allclose(self.field.lo, spec.lo) and np.allclose(
            self.field.hi, spec.hi
        ):
            return spec.field(self.field.values.copy(), 0.0)
        return spec.field(self.evaluate(spec.points()), 0.0)

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "I0": self.I0,
            "xbar0": self.xbar0.tolist(),
            "r": self.r,
            "L0_lower": self.L0_lower,
            "L1_lower": self.L1_lower,
            "L0_upper": self.L0_upper,
            "L1_upper": self.L1_upper,
            "kind": "quadratic" if self.is_quadratic else "field",
        }
        if self.is_quadratic:
            payload.update({"m0": self.m0.tolist(), "A0": self.A0.tolist(), "offset": self.offset})
        else:
            payload["grid"] = self.field.spec.to_dict()
        return payload
