from __future__ import annotations

import logging
import math
import sys
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from constrained_hj.domain.enums import HamiltonianScheme
from constrained_hj.domain.errors import (
    InvalidArgumentError,
    InvariantViolationError,
    StepRejectedError,
)
from constrained_hj.domain.grid import GridField, GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import RateModel
from constrained_hj.domain.trajectory import ProjectionEvent, TrajectoryRecord, TrajectorySample
from constrained_hj.services.config import settings

from .rate_model import curvature_bounds, eval_grad_x_R, eval_psi, eval_R, solve_I_for_zero
from .schedule import TimeSchedule
from .stencils import argmax_u, hamiltonian_rate, hessian_at, second_differences

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

__all__ = [
    "argmax_u",
    "check_invariants",
    "hessian_at",
    "initial_from_field",
    "initial_from_quadratic",
    "sandwich_margins",
    "solve_limit",
    "step_u",
    "trait_velocity",
]

SANDWICH_TOLERANCE = 1e-6
MONOTONE_TOLERANCE = 1e-8
RESOURCE_SLACK = 1e-10
NODE_CACHE_SIZE = 32


@lru_cache(maxsize=NODE_CACHE_SIZE)
def _nodes(lo: Tuple[float, ...], hi: Tuple[float, ...], n: Tuple[int, ...]) -> np.ndarray:
    points = GridSpec(lo, hi, n).points()
    points.setflags(write=False)
    return points


def grid_nodes(spec: GridSpec) -> np.ndarray:
    """Read-only node coordinates of the grid, shared between calls on equal grids."""
    return _nodes(tuple(float(value) for value in spec.lo), tuple(float(value) for value in spec.hi), tuple(spec.n))


def _sandwich_constants(values: np.ndarray, spec: GridSpec, centre: np.ndarray, L1_upper: float, L1_lower: float):
    squared = np.sum((grid_nodes(spec) - centre) ** 2, axis=-1)
    L0_upper = max(float(np.max(values + L1_upper * squared)), 0.0)
    L0_lower = max(float(np.max(-values - L1_lower * squared)), 0.0)
    return L0_upper, L0_lower


def initial_from_quadratic(
    model: RateModel,
    m0: Sequence[float],
    A0: Sequence[Sequence[float]] | np.ndarray,
    r: float,
    spec: GridSpec,
    offset: float = 0.0,
) -> InitialData:
    """u0 = offset - (x-m0)^T A0 (x-m0) with I0 from R(m0, I0) = 0 and sandwich constants measured on the box."""
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    if m0.shape != (model.dimension,) or A0.shape != (model.dimension, model.dimension):
        raise InvalidArgumentError("m0 and A0 must match the model dimension")
    if not np.allclose(A0, A0.T):
        raise InvalidArgumentError("A0 must be symmetric")
    K1_upper, K1_lower, _ = curvature_bounds(model)
    spectrum = np.linalg.eigvalsh(A0)
    L1_upper = min(float(spectrum[0]), math.sqrt(max(K1_upper, 0.0)) / 2.0)
    L1_lower = max(float(spectrum[-1]), math.sqrt(max(K1_lower, 0.0)) / 2.0)
    I0 = solve_I_for_zero(model, m0)
    y = grid_nodes(spec) - m0
    values = offset - np.einsum("...i,ij,...j->...", y, A0, y)
    L0_upper, L0_lower = _sandwich_constants(values, spec, model.theta, L1_upper, L1_lower)
    return InitialData(
        I0=I0,
        xbar0=m0,
        r=r,
        L0_lower=L0_lower,
        L1_lower=L1_lower,
        L0_upper=L0_upper,
        L1_upper=L1_upper,
        m0=m0,
        A0=A0,
        center=model.theta,
        offset=offset,
    )


def initial_from_field(model: RateModel, field: GridField, r: float) -> InitialData:
    """Tabulated concave u0; the peak comes from argmax_u and the curvature constants from second differences."""
    if field.dimension != model.dimension:
        raise InvalidArgumentError("Initial field and model differ in dimension")
    peak, _ = argmax_u(field)
    K1_upper, K1_lower, _ = curvature_bounds(model)
    curvature = second_differences(field.values, field.h)
    L1_upper = min(-max(float(np.max(values)) for values in curvature) / 2.0, math.sqrt(max(K1_upper, 0.0)) / 2.0)
    L1_lower = max(-min(float(np.min(values)) for values in curvature) / 2.0, math.sqrt(max(K1_lower, 0.0)) / 2.0)
    L0_upper, L0_lower = _sandwich_constants(field.values, field.spec, model.theta, L1_upper, L1_lower)
    return InitialData(
        I0=solve_I_for_zero(model, peak),
        xbar0=peak,
        r=r,
        L0_lower=L0_lower,
        L1_lower=L1_lower,
        L0_upper=L0_upper,
        L1_upper=L1_upper,
        field=field,
        center=model.theta,
    )


def step_u(
    field: GridField,
    model: RateModel,
    I: float,
    dt: float,
    I_end: Optional[float] = None,
    scheme: str = HamiltonianScheme.LLF,
) -> GridField:
    """One SSP-RK2 step of u_t = |grad u|^2 + R(x, I); I moves linearly from I to I_end over the step.

    Both resource values must lie in (0, I_M]. The CFL rate carries the floor
    CONSTRAINED_HJ_CFL_EPSILON / h, so flat fields still bound the step.
    """
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    I_end = I if I_end is None else I_end
    ceiling = model.resource_ceiling
    for resource in (I, I_end):
        if not (0.0 < resource <= ceiling + RESOURCE_SLACK * max(1.0, ceiling)):
            raise InvalidArgumentError(f"Resource {resource} outside (0, {ceiling}] at t={field.t}")
    nodes = grid_nodes(field.spec)
    h = field.h

    def stage(values: np.ndarray, resource: float) -> np.ndarray:
        rate, cfl = hamiltonian_rate(values, h, scheme)
        if dt * cfl > 1.0:
            suggested = 0.9 / cfl
            raise StepRejectedError(
                f"CFL violated at t={field.t}: dt={dt:g} exceeds {1.0 / cfl:g}", suggested_dt=suggested
            )
        return values + dt * (rate + eval_R(model, nodes, resource))

    first = stage(field.values, I)
    second = stage(first, I_end)
    return field.with_values(0.5 * (field.values + second), field.t + dt)


def trait_velocity(field: GridField, model: RateModel, x: np.ndarray, I: float) -> np.ndarray:
    """(-D^2 u(x))^{-1} grad_x R(x, I)."""
    hessian = hessian_at(field, x)
    try:
        return np.linalg.solve(-hessian, eval_grad_x_R(model, x, I))
    except np.linalg.LinAlgError as error:
        raise InvariantViolationError(f"Singular Hessian at x={np.asarray(x).tolist()}", invariant="concavity") from error


def sandwich_margins(
    values: np.ndarray,
    spec: GridSpec,
    init: InitialData,
    model: RateModel,
    t: float,
    eps: float = 0.0,
    region: Optional[np.ndarray] = None,
    L0_shift: Tuple[float, float] = (0.0, 0.0),
) -> Dict[str, float]:
    """Smallest distances of u to its quadratic sandwich and of its second differences to the Hessian bounds.

    Negative margins are violations. The lower Hessian bound is -2(L1_lower + 2 t K1_lower).
    """
    _, K1_lower, _ = curvature_bounds(model)
    d = spec.dimension
    squared = np.sum((grid_nodes(spec) - init.center) ** 2, axis=-1)
    lower = -(init.L0_lower + L0_shift[0]) - init.L1_lower * squared - 2.0 * d * eps * init.L1_lower * t
    upper = (init.L0_upper + L0_shift[1]) - init.L1_upper * squared + (model.a + 2.0 * d * eps * init.L1_upper) * t
    mask = np.ones(values.shape, dtype=bool) if region is None else region
    quadratic = float(np.min(np.minimum(values - lower, upper - values)[mask]))
    hess_low = -2.0 * (init.L1_lower + 2.0 * t * K1_lower)
    hess_high = -2.0 * init.L1_upper
    hessian = math.inf
    for axis, curvature in enumerate(second_differences(values, spec.h)):
        inner = np.moveaxis(np.moveaxis(mask, axis, 0)[1:-1], 0, axis)
        if np.any(inner):
            hessian = min(hessian, float(np.min(np.minimum(curvature - hess_low, hess_high - curvature)[inner])))
    return {"quadratic": quadratic, "hessian": hessian}


def _update_margin(diagnostics: Dict, key: str, margin: float, t: float, tol: float) -> None:
    entry = diagnostics.setdefault(key, {"worst_margin": math.inf, "at": None, "tolerance": tol, "satisfied": True})
    if margin < entry["worst_margin"]:
        entry["worst_margin"] = margin
        entry["at"] = t
    entry["satisfied"] = entry["worst_margin"] >= -tol


def solve_limit(
    model: RateModel,
    init: InitialData,
    T: float,
    spec: GridSpec,
    dt: float,
    sample_every: int = 1,
    snapshot_times: Iterable[float] = (),
    proj_threshold: Optional[float] = None,
    scheme: str = HamiltonianScheme.LLF,
    marks: Iterable[float] = (),
) -> TrajectoryRecord:
    """Grid solve of the reformulated system: u by step_u, xbar by a Heun step of its ODE, I from R(xbar, I) = 0."""
    snapshot_times = sorted(float(t) for t in snapshot_times)
    proj_threshold = settings.CONSTRAINED_HJ_PROJ_THRESHOLD if proj_threshold is None else proj_threshold
    schedule = TimeSchedule(T, dt, [*snapshot_times, *marks])
    sample_indices = set(schedule.sample_indices(sample_every, snapshot_times))
    snapshot_indices = {schedule.index_of(t) for t in snapshot_times}
    logger.info("start solve_limit: T=%s dt=%s n=%s scheme=%s", T, dt, spec.n, scheme)

    u = init.sample(spec)
    x = init.xbar0.copy()
    I = solve_I_for_zero(model, x)
    _, peak_value = argmax_u(u)

    record = TrajectoryRecord(model.dimension, "limit")
    h_max = float(np.max(spec.h))
    dt_max = float(np.max(schedule.steps))
    equivalence_bound = 10.0 * (h_max**2 + dt_max)
    record.metadata.update(
        {
            **spec.to_dict(),
            "h": spec.h.tolist(),
            "dt": dt_max,
            "T": T,
            "scheme": scheme,
            "proj_threshold": proj_threshold,
            "equivalence_bound": equivalence_bound,
        }
    )
    diagnostics = record.diagnostics
    worst_drop = 0.0
    worst_constraint = abs(peak_value)
    previous_I = I

    for k in range(len(schedule.times)):
        t = float(schedule.times[k])
        if k in sample_indices:
            if I < previous_I - MONOTONE_TOLERANCE:
                logger.warning("I decreased from %.12f to %.12f at t=%s", previous_I, I, t)
            worst_drop = max(worst_drop, previous_I - I)
            previous_I = I
            record.add(
                TrajectorySample(
                    t=t,
                    xbar=x,
                    I=I,
                    rho=I / eval_psi(model, x),
                    constraint_residual=abs(peak_value),
                    R_residual=abs(eval_R(model, x, I)),
                )
            )
            margins = sandwich_margins(u.values, spec, init, model, t)
            _update_margin(diagnostics, "hessian_sandwich", margins["hessian"], t, SANDWICH_TOLERANCE)
            _update_margin(diagnostics, "quadratic_sandwich", margins["quadratic"], t, SANDWICH_TOLERANCE)
        if k in snapshot_indices:
            record.add_snapshot(u.copy())
        if k == len(schedule.steps):
            break

        tau = float(schedule.steps[k])
        k1 = trait_velocity(u, model, x, I)
        x_predicted = x + tau * k1
        I_predicted = solve_I_for_zero(model, x_predicted)
        u_next = step_u(u, model, I, tau, I_end=I_predicted, scheme=scheme)
        k2 = trait_velocity(u_next, model, x_predicted, I_predicted)
        x = x + 0.5 * tau * (k1 + k2)
        I = solve_I_for_zero(model, x)

        _, peak_value = argmax_u(u_next)
        worst_constraint = max(worst_constraint, abs(peak_value))
        if abs(peak_value) > proj_threshold:
            logger.warning("Projecting u by %.3e at t=%s", peak_value, u_next.t)
            record.projections.append(ProjectionEvent(u_next.t, peak_value))
            u_next = u_next.with_values(u_next.values - peak_value)
            peak_value = 0.0
        u = u_next
        logger.debug("t=%.6f xbar=%s I=%.12f max u=%.3e", u.t, x.tolist(), I, peak_value)

    diagnostics["constraint_equivalence"] = {
        "worst": worst_constraint,
        "bound": equivalence_bound,
        "satisfied": worst_constraint <= equivalence_bound,
    }
    diagnostics["R_residual"] = {
        "worst": float(np.max(record.R_residuals())),
        "bound": settings.CONSTRAINED_HJ_TOL_ROOT,
        "satisfied": float(np.max(record.R_residuals())) <= settings.CONSTRAINED_HJ_TOL_ROOT,
    }
    diagnostics["resource_monotone"] = {
        "worst_drop": max(worst_drop, 0.0),
        "bound": MONOTONE_TOLERANCE,
        "satisfied": worst_drop <= MONOTONE_TOLERANCE,
    }
    diagnostics["projections"] = len(record.projections)
    final = record.final
    logger.info(
        "finish solve_limit: xbar=%s I=%.12f max|max u|=%.3e projections=%d",
        final.xbar.tolist(),
        final.I,
        worst_constraint,
        len(record.projections),
    )
    return record


INVARIANT_ORDER = (
    ("R_residual", "R-residual"),
    ("constraint_equivalence", "constraint-equivalence"),
    ("resource_monotone", "resource-monotone"),
    ("hessian_sandwich", "hessian-sandwich"),
    ("quadratic_sandwich", "quadratic-sandwich"),
)


def check_invariants(record: TrajectoryRecord, strict: bool = True) -> List[str]:
    """Names of the failing run invariants; with strict=True the first one is raised."""
    failures = [name for key, name in INVARIANT_ORDER if not record.diagnostics.get(key, {"satisfied": True})["satisfied"]]
    if failures and strict:
        raise InvariantViolationError(
            f"Run invariant {failures[0]} violated: {record.diagnostics}", invariant=failures[0]
        )
    return failures
