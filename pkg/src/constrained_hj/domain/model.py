from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .base import IDomain
from .enums import PsiKind
from .errors import InvalidArgumentError


class RateModel(IDomain):
    """Reproduction rate R(x, I) = a - (1 + kappa*I)(x-theta)^T B (x-theta) - c*I and weight psi(x).

    kappa = 0 is the canonical family. psi is either a positive constant or the per-coordinate
    polynomial psi(x) = c_0 + sum_i sum_{k>=1} c_k x_i^k.
    """

    def __init__(
        self,
        a: float,
        B: Sequence[Sequence[float]] | np.ndarray,
        theta: Sequence[float] | np.ndarray,
        c: float,
        psi_kind: str = PsiKind.CONST,
        psi_coefficients: Sequence[float] = (1.0,),
        kappa: float = 0.0,
    ) -> None:
        self.a = float(a)
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.c = float(c)
        self.kappa = float(kappa)
        self.psi_kind = psi_kind
        self.psi_coefficients = tuple(float(value) for value in psi_coefficients)

        d = self.theta.shape[0]
        if self.B.shape != (d, d):
            raise InvalidArgumentError(f"B must be {d}x{d}, got {self.B.shape}")
        scalars = np.array([self.a, self.c, self.kappa])
        if not (np.all(np.isfinite(scalars)) and np.all(np.isfinite(self.B)) and np.all(np.isfinite(self.theta))):
            raise InvalidArgumentError("Model parameters must be finite")
        if self.kappa < 0:
            raise InvalidArgumentError("kappa must be non-negative")
        if psi_kind not in list(PsiKind):
            raise InvalidArgumentError(f"Unknown psi kind {psi_kind!r}")
        if not self.psi_coefficients:
            raise InvalidArgumentError("psi needs at least one coefficient")
        if psi_kind == PsiKind.CONST and len(self.psi_coefficients) != 1:
            raise InvalidArgumentError("Constant psi takes exactly one value")
        if self.psi_coefficients[0] <= 0:
            raise InvalidArgumentError("psi must be positive: constant term must be > 0")

    @property
    def dimension(self) -> int:
        return int(self.theta.shape[0])

    @property
    def is_canonical(self) -> bool:
        return self.kappa == 0.0

    @property
    def resource_ceiling(self) -> float:
        """I_M with max_x R(x, I_M) = 0; the maximizer is theta for both families."""
        if self.c <= 0:
            return float("inf")
        return self.a / self.c

    @property
    def curvature_spectrum(self) -> np.ndarray:
        symmetric = 0.5 * (self.B + self.B.T)
        return np.linalg.eigvalsh(symmetric)

    def to_dict(self) -> Dict[str, Any]:
        if self.psi_kind == PsiKind.CONST:
            psi: Dict[str, Any] = {"kind": self.psi_kind, "value": self.psi_coefficients[0]}
        else:
            psi = {"kind": self.psi_kind, "coefficients": list(self.psi_coefficients)}
        return {
            "a": self.a,
            "B": self.B.tolist(),
            "theta": self.theta.tolist(),
            "c": self.c,
            "kappa": self.kappa,
            "psi": psi,
        }


class ConstantStatus(IDomain):
    def __init__(self, name: str, value: float, satisfied: bool, note: str = "") -> None:
        self.name = name
        self.value = float(value)
        self.satisfied = bool(satisfied)
        self.note = note

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "value": self.value, "satisfied": self.satisfied, "note": self.note}


class Violation(IDomain):
    def __init__(self, check: str, amount: float, x: Sequence[float], I: Optional[float] = None) -> None:
        self.check = check
        self.amount = float(amount)
        self.x = [float(value) for value in x]
        self.I = None if I is None else float(I)

    def to_dict(self) -> Dict[str, Any]:
        return {"check": self.check, "amount": self.amount, "x": self.x, "I": self.I}


class HypothesisReport(IDomain):
    def __init__(
        self,
        constants: List[ConstantStatus],
        box_lo: Sequence[float],
        box_hi: Sequence[float],
        I_range: Sequence[float],
        worst_violation: Optional[Violation] = None,
        notes: Optional[List[str]] = None,
    ) -> None:
        self.constants = constants
        self.box_lo = [float(value) for value in box_lo]
        self.box_hi = [float(value) for value in box_hi]
        self.I_range = [float(value) for value in I_range]
        self.worst_violation = worst_violation
        self.notes = notes or []

    @property
    def admissible(self) -> bool:
        return all(status.satisfied for status in self.constants)

    def get(self, name: str) -> ConstantStatus:
        for status in self.constants:
            if status.name == name:
                return status
        raise KeyError(name)

    def value(self, name: str) -> float:
        return self.get(name).value

    def failures(self) -> List[str]:
        return [status.name for status in self.constants if not status.satisfied]

    def merge(self, other: "HypothesisReport") -> "HypothesisReport":
        worst = self.worst_violation
        if other.worst_violation is not None and (worst is None or other.worst_violation.amount > worst.amount):
            worst = other.worst_violation
        return HypothesisReport(
            constants=self.constants + other.constants,
            box_lo=self.box_lo,
            box_hi=self.box_hi,
            I_range=self.I_range,
            worst_violation=worst,
            notes=self.notes + other.notes,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "admissible": self.admissible,
            "constants": {status.name: status.to_dict() for status in self.constants},
            "probe_box": {"lo": self.box_lo, "hi": self.box_hi, "I_range": self.I_range},
            "worst_violation": None if self.worst_violation is None else self.worst_violation.to_dict(),
            "failures": self.failures(),
            "notes": self.notes,
        }
