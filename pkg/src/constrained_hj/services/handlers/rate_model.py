from __future__ import annotations

import logging
import math
import sys
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from constrained_hj.domain.enums import PsiKind
from constrained_hj.domain.errors import (
    InvalidArgumentError,
    InvariantViolationError,
    NoPositiveRootError,
)
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import ConstantStatus, HypothesisReport, RateModel, Violation
from constrained_hj.services.config import settings

from .stencils import second_differences

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

ROOT_MAX_ITERATIONS = 100
PROBE_TOLERANCE = 1e-12


def load_model(document: Mapping[str, Any] | Any) -> RateModel:
    if hasattr(document, "model_dump"):
        document = document.model_dump()
    try:
        psi = document.get("psi") or {"kind": PsiKind.CONST, "value": 1.0}
        kind = psi.get("kind", PsiKind.CONST)
        if kind == PsiKind.CONST:
            coefficients: Sequence[float] = (psi.get("value", 1.0),)
        else:
            coefficients = psi.get("coefficients") or ()
        return RateModel(
            a=document["a"],
            B=document["B"],
            theta=document["theta"],
            c=document["c"],
            psi_kind=kind,
            psi_coefficients=coefficients,
            kappa=document.get("kappa", 0.0),
        )
    except KeyError as error:
        raise InvalidArgumentError(f"Model document misses field {error}") from error


def resource_ceiling(model: RateModel) -> float:
    return model.resource_ceiling


def _as_points(model: RateModel, x: Any) -> Tuple[np.ndarray, bool]:
    points = np.asarray(x, dtype=float)
    single = points.ndim <= 1 and (points.size == model.dimension)
    if model.dimension == 1 and (points.ndim == 0 or points.shape[-1] != 1):
        points = points[..., None]
    if points.shape[-1] != model.dimension:
        raise InvalidArgumentError(f"Trait points must have last axis {model.dimension}, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidArgumentError("Trait values must be finite")
    return points, single


def _check_resource(I: Any) -> np.ndarray:
    resource = np.asarray(I, dtype=float)
    if not np.all(np.isfinite(resource)):
        raise InvalidArgumentError("Resource values must be finite")
    if np.any(resource < 0):
        raise InvalidArgumentError("Resource values must be non-negative")
    return resource


def _selection(model: RateModel, points: np.ndarray) -> np.ndarray:
    offset = points - model.theta
    return np.einsum("...i,ij,...j->...", offset, model.B, offset)


def _scalar_or_array(values: np.ndarray, single: bool):
    if single:
        return float(np.asarray(values).reshape(-1)[0])
    return values


def eval_R(model: RateModel, x: Any, I: Any):
    """a - (1 + kappa I)(x-theta)^T B (x-theta) - c I at one point or an array of points."""
    points, single = _as_points(model, x)
    resource = _check_resource(I)
    values = model.a - (1.0 + model.kappa * resource) * _selection(model, points) - model.c * resource
    return _scalar_or_array(values, single)


def eval_grad_x_R(model: RateModel, x: Any, I: Any) -> np.ndarray:
    points, _ = _as_points(model, x)
    resource = _check_resource(I)
    offset = points - model.theta
    symmetric = 0.5 * (model.B + model.B.T)
    gradient = -2.0 * np.einsum("ij,...j->...i", symmetric, offset)
    return gradient * np.asarray(1.0 + model.kappa * resource)[..., None]


def eval_hess_x_R(model: RateModel, x: Any, I: Any) -> np.ndarray:
    _as_points(model, x)
    resource = float(_check_resource(I))
    return -2.0 * (1.0 + model.kappa * resource) * 0.5 * (model.B + model.B.T)


def eval_dI_R(model: RateModel, x: Any, I: Any):
    points, single = _as_points(model, x)
    _check_resource(I)
    values = -(model.c + model.kappa * _selection(model, points))
    return _scalar_or_array(values, single)


def eval_psi(model: RateModel, x: Any):
    points, single = _as_points(model, x)
    if model.psi_kind == PsiKind.CONST:
        values = np.full(points.shape[:-1], model.psi_coefficients[0])
    else:
        values = np.full(points.shape[:-1], model.psi_coefficients[0])
        for power, coefficient in enumerate(model.psi_coefficients[1:], start=1):
            if coefficient:
                values = values + coefficient * np.sum(points**power, axis=-1)
    return _scalar_or_array(values, single)


def solve_I_for_zero(model: RateModel, x: Any, tol: Optional[float] = None) -> float:
    """Unique I > 0 with |R(x, I)| <= tol by safeguarded Newton with a bisection fallback."""
    tol = settings.CONSTRAINED_HJ_TOL_ROOT if tol is None else tol
    point = np.atleast_1d(np.asarray(x, dtype=float))
    if point.shape != (model.dimension,):
        raise InvalidArgumentError(f"Expected a single trait vector of length {model.dimension}")

    def rate(I: float) -> Tuple[float, float]:
        return eval_R(model, point, I), eval_dI_R(model, point, I)

    low = 0.0
    f_low, df_low = rate(low)
    if f_low <= 0.0:
        raise NoPositiveRootError(f"R(x, 0) = {f_low:.3e} <= 0 at x={point.tolist()}; the trait left the viable region")
    if abs(f_low) <= tol:
        return low

    high = model.resource_ceiling
    if math.isfinite(high):
        high = high * (1.0 + 1e-6) + tol
    else:
        high = 1.0
    f_high, _ = rate(high)
    expansions = 0
    while f_high > 0.0:
        expansions += 1
        if expansions > 60:
            raise NoPositiveRootError(f"R(x, I) stays positive for all probed I at x={point.tolist()}")
        high *= 2.0
        f_high, _ = rate(high)

    I = low - f_low / df_low if df_low < 0 else 0.5 * (low + high)
    if not low < I < high:
        I = 0.5 * (low + high)
    for iteration in range(ROOT_MAX_ITERATIONS):
        f, df = rate(I)
        if abs(f) <= tol:
            logger.debug("solve_I_for_zero converged in %d iterations", iteration + 1)
            return float(I)
        if f > 0.0:
            low = I
        else:
            high = I
        newton = I - f / df if df < 0 else None
        I = newton if newton is not None and low < newton < high else 0.5 * (low + high)
    raise InvariantViolationError(
        f"Root solve did not reach |R| <= {tol:g} at x={point.tolist()}", invariant="root-tolerance"
    )


def curvature_bounds(model: RateModel) -> Tuple[float, float, float]:
    spectrum = model.curvature_spectrum
    ceiling = model.resource_ceiling
    top = ceiling if math.isfinite(ceiling) else 0.0
    return float(spectrum[0]), float((1.0 + model.kappa * top) * spectrum[-1]), top


def _probe(model: RateModel, box_lo: np.ndarray, box_hi: np.ndarray, count: int, seed: int) -> np.ndarray:
    generator = np.random.default_rng(seed)
    random_points = box_lo + (box_hi - box_lo) * generator.random((count, model.dimension))
    corners = np.array(np.meshgrid(*zip(box_lo, box_hi), indexing="ij")).reshape(model.dimension, -1).T
    centre = np.clip(model.theta, box_lo, box_hi)[None, :]
    return np.concatenate([random_points, corners, centre], axis=0)


def validate_hypotheses(
    model: RateModel,
    box_lo: Sequence[float],
    box_hi: Sequence[float],
    I_range: Optional[Sequence[float]] = None,
    probe_points: Optional[int] = None,
    seed: Optional[int] = None,
) -> HypothesisReport:
    """Derives the structural constants on the box and probes the sandwiches numerically."""
    logger.info("start validate_hypotheses")
    box_lo = np.atleast_1d(np.asarray(box_lo, dtype=float))
    box_hi = np.atleast_1d(np.asarray(box_hi, dtype=float))
    if box_lo.shape != (model.dimension,) or box_hi.shape != (model.dimension,) or np.any(box_hi < box_lo):
        raise InvalidArgumentError("Probe box must be nonempty and match the model dimension")
    ceiling = model.resource_ceiling
    if I_range is None:
        I_range = (0.0, ceiling if math.isfinite(ceiling) else 1.0)
    I_lo, I_hi = float(I_range[0]), float(I_range[1])
    count = settings.CONSTRAINED_HJ_PROBE_POINTS if probe_points is None else probe_points
    seed = settings.CONSTRAINED_HJ_SEED if seed is None else seed

    K1_upper, K1_lower, I_top = curvature_bounds(model)
    points = _probe(model, box_lo, box_hi, count, seed)
    selection = _selection(model, points)
    sensitivity = model.c + model.kappa * selection
    symmetric = bool(np.allclose(model.B, model.B.T, atol=1e-14))
    offset = points - model.theta
    K3 = float(np.max(np.abs(2.0 * model.kappa * offset @ model.B.T)) + np.max(np.abs(2.0 * model.kappa * model.B)))
    psi_min = float(np.min(eval_psi(model, points)))

    constants: List[ConstantStatus] = [
        ConstantStatus("B_symmetric", float(np.max(np.abs(model.B - model.B.T))), symmetric),
        ConstantStatus("K0_upper", model.a, model.a > 0, "max_x R(x, 0) in theta-centred coordinates"),
        ConstantStatus("K1_upper", K1_upper, K1_upper > 0, "concavity: D2R <= -2 K1_upper"),
        ConstantStatus("K1_lower", K1_lower, K1_lower >= K1_upper and math.isfinite(K1_lower)),
        ConstantStatus("K2_upper", float(np.min(sensitivity)), float(np.min(sensitivity)) > 0, "dI R <= -K2_upper"),
        ConstantStatus("K2_lower", float(np.max(sensitivity)), math.isfinite(float(np.max(sensitivity)))),
        ConstantStatus("K3", K3, math.isfinite(K3), "bound on the mixed derivative dI grad_x R"),
        ConstantStatus("I_M", ceiling, math.isfinite(ceiling) and ceiling > 0, "max_x R(x, I_M) = 0 at theta"),
        ConstantStatus("psi_min", psi_min, psi_min > 0),
    ]

    generator = np.random.default_rng(seed + 1)
    resources = I_lo + (I_hi - I_lo) * generator.random(points.shape[0])
    worst: Optional[Violation] = None

    def track(check: str, amounts: np.ndarray) -> float:
        nonlocal worst
        index = int(np.argmax(amounts))
        amount = float(amounts[index])
        if amount > PROBE_TOLERANCE and (worst is None or amount > worst.amount):
            worst = Violation(check, amount, points[index], resources[index])
        return max(amount, 0.0)

    step = 1e-3 * max(1.0, I_top)
    rate_now = eval_R(model, points, resources)
    rate_next = eval_R(model, points, resources + step)
    increments = rate_next - rate_now
    monotone = float(np.max(increments))
    if monotone >= 0.0:
        track("monotone_in_I", increments + PROBE_TOLERANCE)

    spectrum = model.curvature_spectrum
    hess_low = -2.0 * (1.0 + model.kappa * resources) * spectrum[-1]
    hess_high = -2.0 * (1.0 + model.kappa * resources) * spectrum[0]
    hessian = track(
        "hessian_sandwich",
        np.maximum(-2.0 * K1_lower - hess_low, hess_high + 2.0 * K1_upper),
    )

    bounded = resources <= I_top if I_top > 0 else np.ones_like(resources, dtype=bool)
    squared = np.sum(offset**2, axis=-1)
    lower_gap = -K1_lower * squared - rate_now
    upper_gap = rate_now - (model.a - K1_upper * squared)
    quadratic = track(
        "quadratic_sandwich",
        np.where(bounded, np.maximum(lower_gap, upper_gap) - PROBE_TOLERANCE * squared, -np.inf),
    )

    constants += [
        ConstantStatus("monotone_in_I", monotone, monotone < 0.0, "max of R(x, I + dI) - R(x, I)"),
        ConstantStatus("hessian_sandwich", hessian, hessian <= PROBE_TOLERANCE * (1.0 + abs(K1_lower))),
        ConstantStatus("quadratic_sandwich", quadratic, quadratic <= PROBE_TOLERANCE),
    ]
    notes = [
        "constants are measured in coordinates centred at theta",
        "bounds on third derivatives hold for the polynomial family and are not probed",
    ]
    report = HypothesisReport(constants, box_lo, box_hi, (I_lo, I_hi), worst, notes)
    logger.info("finish validate_hypotheses: admissible=%s failures=%s", report.admissible, report.failures())
    return report


def validate_initial_data(model: RateModel, init: InitialData, spec: GridSpec, tol: float = 1e-8) -> HypothesisReport:
    """Checks max u0 = 0, R(xbar0, I0) = 0, the u0 sandwiches and their compatibility with R."""
    logger.info("start validate_initial_data")
    field = init.sample(spec)
    K1_upper, K1_lower, _ = curvature_bounds(model)
    peak_value = float(init.evaluate(init.xbar0[None, :])[0])
    grid_max = float(field.values.max())
    top = max(peak_value, grid_max)

    R_residual = abs(eval_R(model, init.xbar0, init.I0)) if init.I0 >= 0 else float("inf")
    squared = np.sum((spec.points() - init.center) ** 2, axis=-1)
    upper_gap = float(np.max(field.values - (init.L0_upper - init.L1_upper * squared)))
    lower_gap = float(np.max(-init.L0_lower - init.L1_lower * squared - field.values))
    curvature = second_differences(field.values, spec.h)
    hess_high = max(float(np.max(values)) for values in curvature)
    hess_low = min(float(np.min(values)) for values in curvature)
    hessian_gap = max(hess_high + 2.0 * init.L1_upper, -2.0 * init.L1_lower - hess_low)
    compatibility = max(4.0 * init.L1_upper**2 - K1_upper, K1_lower - 4.0 * init.L1_lower**2)

    constants = [
        ConstantStatus("max_u0_zero", top, abs(top) <= tol, "max u0 = u0(xbar0) = 0"),
        ConstantStatus("R_at_peak", R_residual, R_residual <= 10.0 * settings.CONSTRAINED_HJ_TOL_ROOT),
        ConstantStatus("I0_positive", init.I0, init.I0 > 0),
        ConstantStatus("r_positive", init.r, init.r > 0),
        ConstantStatus("u0_quadratic_sandwich", max(upper_gap, lower_gap), max(upper_gap, lower_gap) <= tol),
        ConstantStatus("u0_hessian_sandwich", hessian_gap, hessian_gap <= 1e-6),
        ConstantStatus(
            "sandwich_compatibility",
            compatibility,
            compatibility <= 1e-12 * (1.0 + K1_lower),
            "4 L1_upper^2 <= K1_upper and K1_lower <= 4 L1_lower^2",
        ),
    ]
    report = HypothesisReport(constants, spec.lo, spec.hi, (init.I0, init.I0))
    logger.info("finish validate_initial_data: admissible=%s failures=%s", report.admissible, report.failures())
    return report
