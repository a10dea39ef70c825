from __future__ import annotations

import logging
import math
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator

from constrained_hj.domain.enums import HamiltonianScheme
from constrained_hj.domain.errors import (
    BallEscapeError,
    DivisionGuardError,
    InvalidArgumentError,
    NoPositiveRootError,
)
from constrained_hj.domain.grid import GridField, GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import RateModel
from constrained_hj.domain.paths import ResourcePath, TraitPath
from constrained_hj.domain.results import ContractionReport, FixedPointResult, TransportResult
from constrained_hj.services.config import settings

from .hj_limit_solver import grid_nodes, step_u, trait_velocity
from .rate_model import eval_R, solve_I_for_zero, validate_hypotheses
from .stencils import argmax_u, hamiltonian_rate, interior_gradient_hessian

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

InitialLike = InitialData | GridField
CFL_SAFETY = 0.5


def _initial_field(u0: InitialLike, spec: GridSpec) -> GridField:
    if isinstance(u0, GridField):
        if u0.n != spec.n or not (np.allclose(u0.lo, spec.lo) and np.allclose(u0.hi, spec.hi)):
            raise InvalidArgumentError("Initial field must live on the requested grid")
        return spec.field(u0.values.copy(), 0.0)
    return u0.sample(spec)


def path_to_resource(model: RateModel, x_path: TraitPath) -> ResourcePath:
    values = []
    for t, x in zip(x_path.times, x_path.values):
        try:
            values.append(solve_I_for_zero(model, x))
        except NoPositiveRootError as error:
            raise NoPositiveRootError(f"No positive root of R(x(t), .) first at t={t}: {error}", time=t) from error
    return ResourcePath(x_path.times, values)


def solve_v(
    model: RateModel,
    resource_path: ResourcePath,
    u0: InitialLike,
    spec: GridSpec,
    dt: Optional[float] = None,
    scheme: str = HamiltonianScheme.LLF,
) -> List[GridField]:
    """Unconstrained HJ solve v_t = |grad v|^2 + R(x, I(t)) with I linear between path samples; v at every sample.

    Without dt the step is CFL_SAFETY over the CFL rate of u0.
    """
    field = _initial_field(u0, spec)
    field.t = float(resource_path.times[0])
    history = [field]
    if dt is None:
        _, cfl = hamiltonian_rate(field.values, spec.h, scheme)
        dt = CFL_SAFETY / max(cfl, 1e-12)
    for k in range(len(resource_path) - 1):
        start, end = resource_path.times[k], resource_path.times[k + 1]
        span = end - start
        count = max(1, int(math.ceil(span / dt - 1e-9)))
        tau = span / count
        for j in range(count):
            t = start + j * tau
            field = step_u(
                field, model, resource_path.at(t), tau, I_end=resource_path.at(t + tau), scheme=scheme
            )
        field.t = float(end)
        history.append(field)
    return history


def _phi_rates(
    model: RateModel, x_path: TraitPath, resource: ResourcePath, history: Sequence[GridField]
) -> np.ndarray:
    return np.array(
        [trait_velocity(field, model, x, I) for field, x, I in zip(history, x_path.values, resource.values)]
    )


def apply_Phi(
    model: RateModel,
    x_path: TraitPath,
    u0: InitialLike,
    spec: GridSpec,
    dt: Optional[float] = None,
) -> TraitPath:
    """y(t) = x0 + int_0^t (-D^2 v(s, x(s)))^{-1} grad_x R(x(s), I(s)) ds, the Hessian taken on the input path."""
    resource = path_to_resource(model, x_path)
    history = solve_v(model, resource, u0, spec, dt)
    rates = _phi_rates(model, x_path, resource, history)
    increments = cumulative_trapezoid(rates, x_path.times, axis=0, initial=0.0)
    return TraitPath(x_path.times, x_path.anchor + increments)


def iterate_Phi(
    model: RateModel,
    x0_path: TraitPath,
    u0: InitialLike,
    spec: GridSpec,
    k_max: int = 20,
    tol: float = 1e-9,
    radius: Optional[float] = None,
    dt: Optional[float] = None,
) -> FixedPointResult:
    """Picard iteration x^{k+1} = Phi(x^k) inside the ball of the given radius around the anchor."""
    radius = settings.CONSTRAINED_HJ_BALL_RADIUS if radius is None else radius
    logger.info("start iterate_Phi: delta=%s k_max=%d tol=%g radius=%s", x0_path.delta, k_max, tol, radius)
    anchor = x0_path.anchor
    current = x0_path
    distances: List[float] = []
    converged = False
    for k in range(k_max):
        following = apply_Phi(model, current, u0, spec, dt)
        excursion = float(np.max(np.abs(following.values - anchor)))
        if excursion > radius:
            raise BallEscapeError(
                f"Iterate {k + 1} left the ball of radius {radius} around x0 (excursion {excursion:.3e}); shrink delta"
            )
        distances.append(following.distance(current))
        logger.debug("Picard iterate %d: distance %.3e", k + 1, distances[-1])
        current = following
        if distances[-1] <= tol:
            converged = True
            break
    result = FixedPointResult(current, distances, converged)
    logger.info("finish iterate_Phi: iterations=%d converged=%s ratios=%s", result.iterations, converged, result.ratios)
    return result


def constant_path(anchor: Sequence[float], delta: float, samples: int) -> TraitPath:
    times = np.linspace(0.0, delta, samples)
    return TraitPath(times, np.tile(np.atleast_1d(np.asarray(anchor, dtype=float)), (samples, 1)))


def random_path(anchor: np.ndarray, delta: float, samples: int, radius: float, generator: np.random.Generator) -> TraitPath:
    """Smooth path from the anchor shaped on s = t / delta, staying inside the ball."""
    times = np.linspace(0.0, delta, samples)
    s = times / delta
    shapes = np.stack([s, np.sin(np.pi * s), s**2], axis=-1)
    coefficients = generator.uniform(-1.0, 1.0, size=(3, anchor.shape[0]))
    offsets = shapes @ coefficients
    scale = float(np.max(np.abs(offsets)))
    if scale == 0.0:
        return constant_path(anchor, delta, samples)
    amplitude = radius * generator.uniform(0.2, 0.9)
    return TraitPath(times, anchor + offsets * (amplitude / scale))


def measure_contraction(
    model: RateModel,
    init: InitialData,
    spec: GridSpec,
    delta: float,
    n_pairs: int = 20,
    radius: Optional[float] = None,
    seed: Optional[int] = None,
    samples: int = 51,
    dt: Optional[float] = None,
) -> ContractionReport:
    """Lipschitz ratios |Phi(x1) - Phi(x2)| / |x1 - x2| over random path pairs in the ball around x0."""
    radius = settings.CONSTRAINED_HJ_BALL_RADIUS if radius is None else radius
    seed = settings.CONSTRAINED_HJ_SEED if seed is None else seed
    logger.info("start measure_contraction: delta=%s pairs=%d", delta, n_pairs)
    generator = np.random.default_rng(seed)
    ratios = []
    for _ in range(n_pairs):
        first = random_path(init.xbar0, delta, samples, radius, generator)
        second = random_path(init.xbar0, delta, samples, radius, generator)
        gap = first.distance(second)
        if gap == 0.0:
            continue
        ratios.append(apply_Phi(model, first, init, spec, dt).distance(apply_Phi(model, second, init, spec, dt)) / gap)
    report = ContractionReport(delta, ratios)
    logger.info("finish measure_contraction: delta=%s factor=%.4f", delta, report.factor)
    return report


def contraction_slope(reports: Sequence[ContractionReport]) -> Dict[str, float]:
    """Log-log slope of the contraction factor against delta and its ratio to linear scaling."""
    deltas = np.array([report.delta for report in reports])
    factors = np.array([report.factor for report in reports])
    slope = float(np.polyfit(np.log(deltas), np.log(factors), 1)[0])
    linear = factors[0] * deltas / deltas[0]
    return {"slope": slope, "max_linear_ratio": float(np.max(factors / linear)), "min_linear_ratio": float(np.min(factors / linear))}


def w2_norm(levels: Sequence[np.ndarray], spec: GridSpec) -> float:
    """sup|r| + sup|grad r| + sup|D^2 r| over every level, excluding a boundary layer of width 2h."""
    inner = tuple(slice(2, n - 2) for n in spec.n)
    value = gradient = hessian = 0.0
    for level in levels:
        first, second = interior_gradient_hessian(level, spec.h)
        value = max(value, float(np.max(np.abs(level[inner]))))
        gradient = max(gradient, float(np.max(np.sqrt(sum(component[inner] ** 2 for component in first)))))
        hessian = max(hessian, max(float(np.max(np.abs(component[inner]))) for component in second))
    return value + gradient + hessian


def lipschitz_probe(
    model: RateModel,
    I1: ResourcePath,
    I2: ResourcePath,
    u0: InitialLike,
    spec: GridSpec,
    delta: Optional[float] = None,
    dt: Optional[float] = None,
) -> float:
    """||V(I1) - V(I2)||_{W^{2,inf}} / (||I1 - I2||_inf * delta) on [0, delta]."""
    delta = I1.delta if delta is None else delta
    gap = I1.distance(I2)
    if gap <= 1e-15:
        raise DivisionGuardError("Resource paths coincide; the Lipschitz ratio is undefined")
    ceiling = model.resource_ceiling
    for path in (I1, I2):
        if np.any(path.values < 0) or np.any(path.values > ceiling * (1.0 + 1e-12)):
            raise InvalidArgumentError("Resource paths must stay within [0, I_M]")
    first = solve_v(model, I1, u0, spec, dt)
    second = solve_v(model, I2, u0, spec, dt)
    levels = [a.values - b.values for a, b in zip(first, second)]
    ratio = w2_norm(levels, spec) / (gap * delta)
    logger.info("lipschitz_probe: delta=%s gap=%.3e ratio=%.6f", delta, gap, ratio)
    return ratio


def source_history(model: RateModel, I1: ResourcePath, I2: ResourcePath, spec: GridSpec) -> List[np.ndarray]:
    """R(x, I1(t_k)) - R(x, I2(t_k)) per level, the source of r = V(I1) - V(I2)."""
    nodes = grid_nodes(spec)
    return [eval_R(model, nodes, a) - eval_R(model, nodes, b) for a, b in zip(I1.values, I2.values)]


def solve_transport_characteristics(
    v1: Sequence[GridField],
    v2: Sequence[GridField],
    source: Sequence[np.ndarray],
    delta: Optional[float] = None,
) -> TransportResult:
    """r(t_k, x) = int_0^{t_k} S(s, gamma(s)) ds along gamma' = -grad v1 - grad v2 with gamma(t_k) = x.

    Characteristics are traced backward with Heun steps between stored levels; grad v and S are
    interpolated multilinearly and extrapolated linearly outside the box, each such foot being counted.
    """
    if not (len(v1) == len(v2) == len(source)) or len(v1) < 2:
        raise InvalidArgumentError("Histories and source need the same number (>= 2) of levels")
    spec = v1[0].spec
    times = np.array([field.t for field in v1])
    if delta is not None:
        keep = times <= delta + 1e-12
        times = times[keep]
    levels = len(times)
    axes = tuple(spec.axes())
    nodes = grid_nodes(spec).reshape(-1, spec.dimension)

    def interpolator(values: np.ndarray) -> RegularGridInterpolator:
        return RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)

    drifts: List[List[RegularGridInterpolator]] = []
    sources: List[RegularGridInterpolator] = []
    for k in range(levels):
        first, _ = interior_gradient_hessian(v1[k].values, spec.h)
        second, _ = interior_gradient_hessian(v2[k].values, spec.h)
        drifts.append([interpolator(a + b) for a, b in zip(first, second)])
        sources.append(interpolator(np.asarray(source[k], dtype=float)))

    def drift(k: int, points: np.ndarray) -> np.ndarray:
        return np.stack([component(points) for component in drifts[k]], axis=-1)

    clipped = 0

    def outside(points: np.ndarray) -> int:
        return int(np.count_nonzero(np.any((points < spec.lo) | (points > spec.hi), axis=-1)))

    result = np.zeros((levels,) + spec.n)
    for k in range(1, levels):
        gamma = nodes.copy()
        accumulated = np.zeros(gamma.shape[0])
        for j in range(k, 0, -1):
            tau = times[j] - times[j - 1]
            slope_here = drift(j, gamma)
            predicted = gamma + tau * slope_here
            previous = gamma + 0.5 * tau * (slope_here + drift(j - 1, predicted))
            clipped += outside(previous)
            accumulated += 0.5 * tau * (sources[j](gamma) + sources[j - 1](previous))
            gamma = previous
        result[k] = accumulated.reshape(spec.n)
    if clipped:
        logger.warning("Characteristics left the box %d times; feet were extrapolated linearly", clipped)
    return TransportResult(times, result, clipped)


def random_resource_pair(
    level: float, ceiling: float, delta: float, samples: int, generator: np.random.Generator
) -> Tuple[ResourcePath, ResourcePath]:
    """Two distinct smooth resource paths around level, shaped on s = t / delta and kept inside (0, ceiling)."""
    times = np.linspace(0.0, delta, samples)
    s = times / delta
    shapes = np.stack([s, np.sin(np.pi * s), s**2], axis=-1)
    room = 0.5 * (min(level, ceiling - level) if math.isfinite(ceiling) else level)
    if room <= 0.0:
        raise InvalidArgumentError(f"Resource level {level} leaves no room inside (0, {ceiling})")
    paths = []
    for _ in range(2):
        offsets = shapes @ generator.uniform(-1.0, 1.0, size=3)
        scale = max(float(np.max(np.abs(offsets))), 1e-12)
        paths.append(ResourcePath(times, level + offsets * (room * generator.uniform(0.2, 1.0) / scale)))
    return paths[0], paths[1]


def transport_cross_check(
    model: RateModel,
    I1: ResourcePath,
    I2: ResourcePath,
    u0: InitialLike,
    spec: GridSpec,
    dt: Optional[float] = None,
) -> Dict[str, Any]:
    """Compares r from characteristics with the direct difference v1 - v2 away from the box edges."""
    first = solve_v(model, I1, u0, spec, dt)
    second = solve_v(model, I2, u0, spec, dt)
    transport = solve_transport_characteristics(first, second, source_history(model, I1, I2, spec))
    inner = tuple(slice(2, n - 2) for n in spec.n)
    gap = max(
        float(np.max(np.abs(transport.values[k][inner] - (a.values - b.values)[inner])))
        for k, (a, b) in enumerate(zip(first, second))
    )
    step = float(np.max(np.diff(I1.times))) if dt is None else dt
    bound = 10.0 * (float(np.max(spec.h)) ** 2 + step)
    logger.info("transport cross-check: gap=%.3e bound=%.3e clipped=%d", gap, bound, transport.clipped)
    return {"gap": gap, "bound": bound, "satisfied": gap <= bound, "clipped": transport.clipped}


def windowed_fixed_point(
    model: RateModel,
    init: InitialData,
    spec: GridSpec,
    delta: float,
    n_windows: int = 2,
    samples: int = 51,
    k_max: int = 20,
    tol: float = 1e-9,
    radius: Optional[float] = None,
    dt: Optional[float] = None,
) -> Tuple[List[FixedPointResult], List[Dict[str, float]]]:
    """Fixed points on consecutive windows [j delta, (j+1) delta], each restarted from the previous end state."""
    report = validate_hypotheses(model, spec.lo, spec.hi)
    K2_upper = report.value("K2_upper")
    u0: InitialLike = init.sample(spec)
    anchor = init.xbar0
    results: List[FixedPointResult] = []
    restarts: List[Dict[str, float]] = []
    for window in range(n_windows):
        path = constant_path(anchor, delta, samples)
        result = iterate_Phi(model, path, u0, spec, k_max, tol, radius, dt)
        results.append(result)
        resource = path_to_resource(model, result.path)
        history = solve_v(model, resource, u0, spec, dt)
        anchor = result.path.values[-1]
        end_resource = float(resource.values[-1])
        margin = float(eval_R(model, anchor, 0.0)) - K2_upper * end_resource
        _, peak_value = argmax_u(history[-1])
        restarts.append(
            {
                "window": window,
                "t_end": (window + 1) * delta,
                "I_end": end_resource,
                "R_x_end_zero": float(eval_R(model, anchor, 0.0)),
                "restart_margin": margin,
                "max_v_end": peak_value,
                "admissible": margin >= -1e-10 and end_resource > 0,
            }
        )
        logger.info("window %d restart margin %.3e max v %.3e", window, margin, peak_value)
        u0 = history[-1].with_values(history[-1].values, 0.0)
    return results, restarts
