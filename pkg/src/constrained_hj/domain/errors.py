from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .model import HypothesisReport


class ConstrainedHJError(Exception):
    invariant: Optional[str] = None

    def __init__(self, message: str, invariant: Optional[str] = None) -> None:
        super().__init__(message)
        if invariant is not None:
            self.invariant = invariant


class InvalidArgumentError(ConstrainedHJError, ValueError):
    invariant = "finite-input"


class ConfigurationError(InvalidArgumentError):
    invariant = "config-document"


class OracleInapplicableError(InvalidArgumentError):
    invariant = "quadratic-ansatz"


class InadmissibleInitialDataError(InvalidArgumentError):
    invariant = "initial-data"


class NumericalError(ConstrainedHJError, RuntimeError):
    invariant = "numerical"


class NoPositiveRootError(NumericalError):
    invariant = "positive-resource-root"

    def __init__(self, message: str, time: Optional[float] = None) -> None:
        super().__init__(message)
        self.time = time


class PeakEscapedDomainError(NumericalError):
    invariant = "interior-peak"


class StepRejectedError(NumericalError):
    invariant = "cfl"

    def __init__(self, message: str, suggested_dt: float) -> None:
        super().__init__(message)
        self.suggested_dt = suggested_dt


class OutOfDomainError(NumericalError):
    invariant = "stencil-inside-box"


class IntegrationFailureError(NumericalError):
    invariant = "spd-curvature"


class BallEscapeError(NumericalError):
    invariant = "fixed-point-ball"


class DivisionGuardError(NumericalError):
    invariant = "distinct-resource-paths"


class InadmissibleInitialMassError(NumericalError):
    invariant = "initial-mass-below-ceiling"


class InvariantViolationError(NumericalError):
    pass


class HypothesisError(ConstrainedHJError):
    invariant = "model-hypotheses"

    def __init__(self, message: str, report: "HypothesisReport") -> None:
        super().__init__(message)
        self.report = report
