"""Selection-mutation model n_t - eps Lap n = (n / eps) R(x, I_eps), I_eps = int psi n.

The density form evolves n; the potential form evolves u_eps = eps log n, which solves
u_t = |grad u|^2 + R(x, I_eps) + eps Lap u and avoids the underflow of exp(u / eps).
"""

from __future__ import annotations

import logging
import math
import sys
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.integrate import simpson, trapezoid
from scipy.linalg import solve_banded

from constrained_hj.domain.enums import DensityForm, HamiltonianScheme, SplittingType
from constrained_hj.domain.errors import (
    InadmissibleInitialDataError,
    InadmissibleInitialMassError,
    InvalidArgumentError,
    InvariantViolationError,
    StepRejectedError,
)
from constrained_hj.domain.grid import GridField, GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import RateModel
from constrained_hj.domain.results import EpsRunResult, EpsSample
from constrained_hj.services.config import settings

from .hj_limit_solver import _update_margin, grid_nodes, sandwich_margins
from .rate_model import eval_psi, eval_R
from .schedule import TimeSchedule
from .stencils import argmax_u, hamiltonian_rate

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

TINY = np.finfo(float).tiny
LOG_TINY = math.log(TINY)
REACTION_SAFETY = 0.25
CFL_SAFETY = 0.5
PEAK_TOLERANCE = 1e-8


def integrate(values: np.ndarray, spec: GridSpec, rule: str = "simpson") -> float:
    """Composite quadrature over the box, axis by axis."""
    result = values
    for axis in reversed(range(spec.dimension)):
        coordinates = spec.axes()[axis]
        if rule == "simpson":
            result = simpson(result, x=coordinates, axis=axis)
        elif rule == "trapezoid":
            result = trapezoid(result, x=coordinates, axis=axis)
        else:
            raise InvalidArgumentError(f"Unknown quadrature rule {rule!r}")
    return float(result)


def _weights(model: RateModel, spec: GridSpec) -> np.ndarray:
    return np.asarray(eval_psi(model, grid_nodes(spec)))


def _max_rate(model: RateModel, nodes: np.ndarray) -> float:
    """max |R| over the grid for I = 0 and, when finite, I = I_M."""
    top = float(np.max(np.abs(eval_R(model, nodes, 0.0))))
    if math.isfinite(model.resource_ceiling) and model.resource_ceiling > 0:
        top = max(top, float(np.max(np.abs(eval_R(model, nodes, model.resource_ceiling)))))
    return top


def hopf_cole_prefactor(eps: float, r: float, d: int) -> float:
    """eps log(r / eps^{d/2})."""
    return eps * math.log(r / eps ** (d / 2.0))


def resource_of_potential(values: np.ndarray, eps: float, psi: np.ndarray, spec: GridSpec) -> float:
    """int psi exp(u / eps) with the exponent shifted by max u."""
    top = float(values.max())
    return math.exp(top / eps) * integrate(psi * np.exp((values - top) / eps), spec)


def init_n0(model: RateModel, init: InitialData, eps: float, spec: GridSpec) -> Tuple[GridField, GridField, float]:
    """n0 = (r / eps^{d/2}) exp(u0 / eps) and u_eps0 = u0 + eps log(r / eps^{d/2}); returns (n0, u_eps0, I_eps(0))."""
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    u0 = init.sample(spec)
    peak = max(float(u0.values.max()), float(init.evaluate(init.xbar0[None, :])[0]))
    if abs(peak) > PEAK_TOLERANCE:
        raise InadmissibleInitialDataError(f"max u0 = {peak:.3e} differs from 0")
    shift = hopf_cole_prefactor(eps, init.r, spec.dimension)
    potential = u0.with_values(u0.values + shift)
    density = u0.with_values(np.exp(np.maximum(potential.values / eps, LOG_TINY)))
    I_eps0 = resource_of_potential(potential.values, eps, _weights(model, spec), spec)
    ceiling = model.resource_ceiling
    if not 0.0 < I_eps0 < ceiling:
        raise InadmissibleInitialMassError(f"I_eps(0) = {I_eps0:.6f} must lie in (0, I_M = {ceiling})")
    if I_eps0 < init.I0 - 1e-6:
        logger.warning("I_eps(0) = %.6f lies below I0 = %.6f", I_eps0, init.I0)
    return density, potential, I_eps0


def _neumann_bands(n: int, coefficient: float) -> np.ndarray:
    """Banded (1, 1) form of I - coefficient * L with L the mirror-ghost Laplacian times h^2."""
    bands = np.zeros((3, n))
    bands[1, :] = 1.0 + 2.0 * coefficient
    bands[0, 1:] = -coefficient
    bands[2, :-1] = -coefficient
    bands[0, 1] = -2.0 * coefficient
    bands[2, n - 2] = -2.0 * coefficient
    return bands


def _neumann_apply(values: np.ndarray, coefficient: float) -> np.ndarray:
    padded = np.concatenate([values[1:2], values, values[-2:-1]], axis=0)
    return values + coefficient * (padded[2:] - 2.0 * values + padded[:-2])


def _extrapolated_bands(n: int, coefficient: float) -> np.ndarray:
    """Banded (2, 2) form of I - coefficient * L where the edge rows reuse the one-sided stencil (1, -2, 1)."""
    bands = np.zeros((5, n))
    bands[2, :] = 1.0 + 2.0 * coefficient
    bands[1, 1:] = -coefficient
    bands[3, :-1] = -coefficient
    # Row 0 reads columns 0, 1, 2; row n-1 reads n-3, n-2, n-1.
    bands[2, 0] = 1.0 - coefficient
    bands[1, 1] = 2.0 * coefficient
    bands[0, 2] = -coefficient
    bands[2, n - 1] = 1.0 - coefficient
    bands[3, n - 2] = 2.0 * coefficient
    bands[4, n - 3] = -coefficient
    return bands


def _extrapolated_apply(values: np.ndarray, coefficient: float) -> np.ndarray:
    laplacian = np.empty_like(values)
    laplacian[1:-1] = values[2:] - 2.0 * values[1:-1] + values[:-2]
    laplacian[0] = values[0] - 2.0 * values[1] + values[2]
    laplacian[-1] = values[-1] - 2.0 * values[-2] + values[-3]
    return values + coefficient * laplacian


def diffuse(values: np.ndarray, spec: GridSpec, eps: float, dt: float, boundary: str, theta: float = 0.5) -> np.ndarray:
    """theta-scheme for v_t = eps Lap v, one axis at a time; theta=0.5 is Crank-Nicolson, 1 implicit Euler.

    boundary="reflecting" mirrors ghosts (zero flux), "extrapolated" uses quadratic extrapolation.
    """
    result = values
    for axis in range(spec.dimension):
        coefficient = eps * dt / spec.h[axis] ** 2
        moved = np.moveaxis(result, axis, 0)
        shape = moved.shape
        flat = moved.reshape(shape[0], -1)
        if boundary == "reflecting":
            explicit = _neumann_apply(flat, (1.0 - theta) * coefficient) if theta < 1.0 else flat
            solved = solve_banded((1, 1), _neumann_bands(shape[0], theta * coefficient), explicit)
        elif boundary == "extrapolated":
            explicit = _extrapolated_apply(flat, (1.0 - theta) * coefficient) if theta < 1.0 else flat
            solved = solve_banded((2, 2), _extrapolated_bands(shape[0], theta * coefficient), explicit)
        else:
            raise InvalidArgumentError(f"Unknown boundary closure {boundary!r}")
        result = np.moveaxis(solved.reshape(shape), 0, axis)
    return result


def _react(density: np.ndarray, rate_at, eps: float, tau: float, psi: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Exponential midpoint over tau: I re-evaluated after a predictor half step."""
    I_start = integrate(psi * density, spec)
    predictor = density * np.exp(0.5 * tau * rate_at(I_start) / eps)
    I_mid = integrate(psi * predictor, spec)
    return np.maximum(density * np.exp(tau * rate_at(I_mid) / eps), TINY)


def step_parabolic(
    n: GridField,
    eps: float,
    dt: float,
    model: RateModel,
    splitting: str = SplittingType.STRANG,
) -> GridField:
    """One IMEX step of the density form: exponential reaction and implicit diffusion with reflecting walls."""
    spec = n.spec
    nodes = grid_nodes(spec)
    max_rate = _max_rate(model, nodes)
    if max_rate > 0 and dt > eps / max_rate:
        raise StepRejectedError(
            f"dt={dt:g} exceeds the reaction scale eps / max|R| = {eps / max_rate:g}",
            suggested_dt=REACTION_SAFETY * eps / max_rate,
        )
    psi = _weights(model, spec)

    def rate_at(resource: float) -> np.ndarray:
        return eval_R(model, nodes, max(resource, 0.0))

    if splitting == SplittingType.STRANG:
        density = _react(n.values, rate_at, eps, 0.5 * dt, psi, spec)
        density = diffuse(density, spec, eps, dt, "reflecting", theta=0.5)
        density = _react(density, rate_at, eps, 0.5 * dt, psi, spec)
    elif splitting == SplittingType.LIE:
        I_start = integrate(psi * n.values, spec)
        density = np.maximum(n.values * np.exp(dt * rate_at(I_start) / eps), TINY)
        density = diffuse(density, spec, eps, dt, "reflecting", theta=1.0)
    else:
        raise InvalidArgumentError(f"Unknown splitting {splitting!r}")
    if not np.all(density > 0.0) or not np.all(np.isfinite(density)):
        raise InvariantViolationError(f"Density lost positivity at t={n.t + dt}", invariant="density-positivity")
    return n.with_values(density, n.t + dt)


def step_potential(
    u: GridField,
    eps: float,
    dt: float,
    model: RateModel,
    scheme: str = HamiltonianScheme.LLF,
) -> GridField:
    """Strang step of u_t = |grad u|^2 + R(x, I_eps) + eps Lap u: half CN diffusion, SSP-RK2 transport, half diffusion."""
    spec = u.spec
    nodes = grid_nodes(spec)
    psi = _weights(model, spec)
    values = diffuse(u.values, spec, eps, 0.5 * dt, "extrapolated")

    def stage(current: np.ndarray) -> np.ndarray:
        rate, cfl = hamiltonian_rate(current, spec.h, scheme)
        if dt * cfl > 1.0:
            raise StepRejectedError(
                f"CFL violated at t={u.t}: dt={dt:g} exceeds {1.0 / cfl:g}", suggested_dt=0.9 / cfl
            )
        resource = resource_of_potential(current, eps, psi, spec)
        return current + dt * (rate + eval_R(model, nodes, resource))

    first = stage(values)
    values = 0.5 * (values + stage(first))
    values = diffuse(values, spec, eps, 0.5 * dt, "extrapolated")
    if not np.all(np.isfinite(values)):
        raise InvariantViolationError(f"Potential became non-finite at t={u.t + dt}", invariant="potential-finite")
    return u.with_values(values, u.t + dt)


def default_dt(model: RateModel, eps: float, spec: GridSpec, u_eps0: GridField, form: str) -> float:
    """min of the reaction bound REACTION_SAFETY * eps / max|R| (density form) and the HJ CFL bound (potential form)."""
    if form == DensityForm.DENSITY:
        max_rate = _max_rate(model, grid_nodes(spec))
        return REACTION_SAFETY * eps / max(max_rate, 1e-12)
    _, cfl = hamiltonian_rate(u_eps0.values, spec.h)
    return CFL_SAFETY / max(cfl, 1e-12)


def _moments(density: np.ndarray, scale: float, model: RateModel, spec: GridSpec) -> Tuple[float, float, np.ndarray, float]:
    """(int n, int psi n, mean trait, centred second moment) of scale * density."""
    nodes = grid_nodes(spec)
    mass = scale * integrate(density, spec)
    psi_mass = scale * integrate(_weights(model, spec) * density, spec)
    base = integrate(density, spec)
    mean = np.array([integrate(density * nodes[..., axis], spec) / base for axis in range(spec.dimension)])
    spread = integrate(density * np.sum((nodes - mean) ** 2, axis=-1), spec) / base
    return mass, psi_mass, mean, spread


def _sample_from_potential(values: np.ndarray, eps: float, model: RateModel, spec: GridSpec) -> Tuple[float, float, np.ndarray, float]:
    top = float(values.max())
    return _moments(np.exp((values - top) / eps), math.exp(top / eps), model, spec)


def _run_form(
    model: RateModel,
    init: InitialData,
    eps: float,
    schedule: TimeSchedule,
    spec: GridSpec,
    form: str,
    splitting: str,
    sample_indices: Iterable[int],
    snapshot_indices: Iterable[int],
    probe_depth: float,
    sandwich_tolerance: float,
) -> EpsRunResult:
    density, potential, I_eps0 = init_n0(model, init, eps, spec)
    result = EpsRunResult(eps, spec.dimension)
    sample_indices = set(sample_indices)
    snapshot_indices = set(snapshot_indices)
    shift = hopf_cole_prefactor(eps, init.r, spec.dimension)
    L0_shift = (max(0.0, -shift), max(0.0, shift))
    threshold = settings.CONSTRAINED_HJ_MASS_LEAK_THRESHOLD
    leaks = 0
    margins: Dict[str, Dict] = {}
    for k in range(len(schedule.times)):
        t = float(schedule.times[k])
        u_values = eps * np.log(density.values) if form == DensityForm.DENSITY else potential.values
        field = spec.field(u_values, t)
        if k in sample_indices:
            if form == DensityForm.DENSITY:
                mass, psi_mass, mean, spread = _moments(density.values, 1.0, model, spec)
            else:
                mass, psi_mass, mean, spread = _sample_from_potential(u_values, eps, model, spec)
            x_eps, _ = argmax_u(field)
            result.add(EpsSample(t, psi_mass, x_eps, mass, psi_mass, mean, spread))
            region = u_values >= u_values.max() - probe_depth if form == DensityForm.DENSITY else None
            for key, value in sandwich_margins(u_values, spec, init, model, t, eps, region, L0_shift).items():
                _update_margin(margins, key, value, t, sandwich_tolerance)
            edge = _boundary_ratio(u_values, eps)
            if edge > threshold:
                leaks += 1
        if k in snapshot_indices:
            result.snapshots.append(field)
        if k == len(schedule.steps):
            break
        tau = float(schedule.steps[k])
        if form == DensityForm.DENSITY:
            density = step_parabolic(density, eps, tau, model, splitting)
        else:
            potential = step_potential(potential, eps, tau, model)
    if leaks:
        logger.warning("eps=%s: boundary density exceeded %.1e of the peak at %d samples", eps, threshold, leaks)
    result.metadata.update(
        {
            "eps": eps,
            "form": form,
            "splitting": splitting if form == DensityForm.DENSITY else SplittingType.STRANG,
            "h": spec.h.tolist(),
            "dt": float(np.max(schedule.steps)),
            **spec.to_dict(),
            "mass_leaks": leaks,
            "I_eps0": I_eps0,
        }
    )
    result.diagnostics.update({"hessian_sandwich": margins["hessian"], "quadratic_sandwich": margins["quadratic"]})
    return result


def _boundary_ratio(u_values: np.ndarray, eps: float) -> float:
    top = float(u_values.max())
    edges = []
    for axis in range(u_values.ndim):
        moved = np.moveaxis(u_values, axis, 0)
        edges.extend([float(moved[0].max()), float(moved[-1].max())])
    return math.exp(max(min(max(edges) - top, 0.0) / eps, LOG_TINY))


def run_parabolic(
    model: RateModel,
    init: InitialData,
    eps: float,
    T: float,
    spec: GridSpec,
    dt: Optional[float] = None,
    form: Optional[str] = None,
    splitting: str = SplittingType.STRANG,
    sample_every: int = 1,
    snapshot_times: Iterable[float] = (),
    marks: Iterable[float] = (),
    probe_depth: float = 2.0,
    cross_check: bool = True,
    sandwich_tolerance: Optional[float] = None,
    C_bound: Optional[float] = None,
) -> EpsRunResult:
    """Full time loop at one eps. The potential form is primary for eps at or below the Hopf-Cole switch;
    above it the density form is primary and, with cross_check, the potential form is run alongside.

    I_eps > 0 is always enforced. The upper box I_eps <= I_M + C eps^2 is enforced only with C_bound;
    otherwise C_fit is reported, not enforced.
    """
    switch = settings.CONSTRAINED_HJ_HOPF_COLE_SWITCH
    automatic = form is None
    form = (DensityForm.POTENTIAL if eps <= switch else DensityForm.DENSITY) if automatic else form
    if form not in list(DensityForm):
        raise InvalidArgumentError(f"Unknown form {form!r}")
    logger.info("start run_parabolic: eps=%s T=%s n=%s form=%s", eps, T, spec.n, form)
    _, potential0, _ = init_n0(model, init, eps, spec)
    if dt is None:
        dt = default_dt(model, eps, spec, potential0, form)
        if form == DensityForm.DENSITY and cross_check:
            dt = min(dt, default_dt(model, eps, spec, potential0, DensityForm.POTENTIAL))
    snapshot_times = sorted(float(t) for t in snapshot_times)
    schedule = TimeSchedule(T, dt, [*snapshot_times, *marks])
    sample_indices = schedule.sample_indices(sample_every, snapshot_times)
    snapshot_indices = [schedule.index_of(t) for t in snapshot_times]
    if sandwich_tolerance is None:
        sandwich_tolerance = 1e-6 if form == DensityForm.POTENTIAL else 1e-2

    result = _run_form(
        model, init, eps, schedule, spec, form, splitting, sample_indices, snapshot_indices, probe_depth, sandwich_tolerance
    )
    I_series = result.resources()
    ceiling = model.resource_ceiling
    I_m = float(I_series.min())
    I_max = float(I_series.max())
    C_fit = max(0.0, I_max - ceiling) / eps**2
    upper = None if C_bound is None else ceiling + C_bound * eps**2
    result.diagnostics.update({"I_m": I_m, "C_fit": C_fit, "I_max": I_max})
    result.diagnostics["resource_box"] = {
        "I_m": I_m,
        "I_max": I_max,
        "C_fit": C_fit,
        "C_bound": C_bound,
        "upper": upper,
        "upper_enforced": C_bound is not None,
        "satisfied": I_m > 0.0 and (upper is None or I_max <= upper),
    }
    if I_m <= 0.0:
        raise InvariantViolationError(f"I_eps reached {I_m:.3e} <= 0", invariant="resource-box")
    if upper is not None and I_max > upper:
        raise InvariantViolationError(
            f"I_eps reached {I_max:.10f} above I_M + C eps^2 = {upper:.10f} (C_fit={C_fit:.3e})", invariant="resource-box"
        )
    drops = -np.diff(I_series)
    result.diagnostics["resource_monotone"] = {"worst_drop": float(max(drops.max(initial=0.0), 0.0))}

    if automatic and form == DensityForm.DENSITY and cross_check:
        other = _run_form(
            model, init, eps, schedule, spec, DensityForm.POTENTIAL, splitting, sample_indices, [], probe_depth, 1e-6
        )
        gap = float(np.max(np.abs(other.resources() - I_series)))
        result.metadata["cross_check"] = {"form": DensityForm.POTENTIAL, "max_I_gap": gap}
        logger.info("eps=%s: density and potential forms differ by %.3e in I", eps, gap)
    final = result.samples[-1]
    logger.info("finish run_parabolic: eps=%s I_eps(T)=%.10f x_eps(T)=%s", eps, final.I, final.x.tolist())
    return result
