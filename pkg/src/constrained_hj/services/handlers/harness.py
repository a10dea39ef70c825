"""eps-sweeps of the parabolic model against the constrained limit, expansion fits and concentration moments."""

from __future__ import annotations

import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from constrained_hj.domain.base import IDomain
from constrained_hj.domain.errors import (
    InvalidArgumentError,
    InvariantViolationError,
    OracleInapplicableError,
)
from constrained_hj.domain.grid import GridField, GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import RateModel
from constrained_hj.domain.results import ConcentrationReport, EpsRunResult, SweepEntry, SweepReport
from constrained_hj.domain.trajectory import TrajectoryRecord, TrajectorySample
from constrained_hj.services.config import settings

from .hj_limit_solver import grid_nodes, solve_limit
from .parabolic_solver import hopf_cole_prefactor, integrate, run_parabolic
from .quadratic_oracle import integrate_oracle_adaptive

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

LIMIT_AGREEMENT = 5e-4
DEGENERATE_ERROR = 1e-13
PROBE_NODES = 41


class GridPolicy(IDomain):
    """Per-eps grid on a fixed box: odd node count with h <= h_factor * sqrt(eps), unless n is pinned."""

    def __init__(
        self,
        lo: Sequence[float],
        hi: Sequence[float],
        h_factor: float = 0.1,
        n_min: int = 101,
        n: Optional[Sequence[int]] = None,
        dt: Optional[float] = None,
    ) -> None:
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if h_factor <= 0:
            raise InvalidArgumentError("h_factor must be positive")
        self.h_factor = float(h_factor)
        self.n_min = int(n_min)
        self.n = None if n is None else [int(count) for count in n]
        self.dt = None if dt is None else float(dt)

    def spec_for(self, eps: float) -> GridSpec:
        if self.n is not None:
            return GridSpec(self.lo, self.hi, self.n)
        h_max = self.h_factor * math.sqrt(eps)
        counts = []
        for width in self.hi - self.lo:
            count = max(self.n_min, int(math.ceil(width / h_max)) + 1)
            counts.append(count if count % 2 == 1 else count + 1)
        return GridSpec(self.lo, self.hi, counts)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "h_factor": self.h_factor,
            "n_min": self.n_min,
            "n": self.n,
            "dt": self.dt,
        }


class LimitReference(IDomain):
    """Limit trajectory plus u(t, .) at the sweep times: the oracle ansatz when available, grid snapshots otherwise."""

    def __init__(self, record: TrajectoryRecord) -> None:
        self.record = record

    @property
    def source(self) -> str:
        return self.record.source

    def sample_at(self, t: float, tol: float = 1e-9) -> TrajectorySample:
        times = self.record.times()
        index = int(np.argmin(np.abs(times - t)))
        if abs(times[index] - t) > tol:
            raise InvalidArgumentError(f"Limit reference has no sample at t={t}")
        return self.record.samples[index]

    def u_at(self, t: float, points: np.ndarray) -> np.ndarray:
        """u(t, points) for points of shape (..., d)."""
        if self.record.ansatz_history:
            times = np.array([ansatz.t for ansatz in self.record.ansatz_history])
            index = int(np.argmin(np.abs(times - t)))
            if abs(times[index] - t) > 1e-9:
                raise InvalidArgumentError(f"Limit reference has no ansatz at t={t}")
            return self.record.ansatz_history[index].evaluate(points)
        for field in self.record.snapshots:
            if abs(field.t - t) <= 1e-9:
                return _interpolate(field, points)
        raise InvalidArgumentError(f"Limit reference has no u snapshot at t={t}")

    def to_dict(self) -> Dict[str, Any]:
        return self.record.to_dict()


def _interpolate(field: GridField, points: np.ndarray) -> np.ndarray:
    interpolator = RegularGridInterpolator(field.axes(), field.values, method="cubic", bounds_error=True)
    shape = points.shape[:-1]
    return interpolator(points.reshape(-1, field.dimension)).reshape(shape)


def limit_reference(
    model: RateModel,
    init: InitialData,
    T: float,
    t_stars: Sequence[float],
    spec: GridSpec,
    dt: float,
    source: Optional[str] = None,
    cross_check: bool = False,
) -> LimitReference:
    """The oracle whenever it applies (source=None or "oracle"), the grid solver otherwise or on request ("grid").

    With cross_check the two are compared at the sweep times before any eps-comparison.
    """
    grid_record = None
    if source in (None, "oracle"):
        try:
            record = integrate_oracle_adaptive(model, init, T, times=t_stars)
        except OracleInapplicableError:
            if source == "oracle":
                raise
            logger.info("Oracle inapplicable; using the grid limit solver")
            record = grid_record = solve_limit(model, init, T, spec, dt, snapshot_times=t_stars, marks=t_stars)
    elif source == "grid":
        record = grid_record = solve_limit(model, init, T, spec, dt, snapshot_times=t_stars, marks=t_stars)
    else:
        raise InvalidArgumentError(f"Unknown limit source {source!r}")
    reference = LimitReference(record)
    if cross_check and grid_record is None:
        grid_record = solve_limit(model, init, T, spec, dt, snapshot_times=t_stars, marks=t_stars)
        gaps = []
        for t in t_stars:
            x_ref, I_ref = record.at(t)
            x_grid, I_grid = grid_record.at(t)
            gaps.append(max(float(np.max(np.abs(x_ref - x_grid))), abs(I_ref - I_grid)))
        worst = max(gaps)
        record.diagnostics["limit_equivalence"] = {"worst_gap": worst, "bound": LIMIT_AGREEMENT}
        if worst > LIMIT_AGREEMENT:
            raise InvariantViolationError(
                f"Oracle and grid limit differ by {worst:.3e} > {LIMIT_AGREEMENT}", invariant="limit-equivalence"
            )
        logger.info("Oracle and grid limit agree within %.3e", worst)
    return reference


def concentration_check(eps_result: EpsRunResult, limit: TrajectoryRecord | LimitReference, t_star: float) -> ConcentrationReport:
    """Moments of n_eps at t_star against the Dirac mass rho(t*) at xbar(t*)."""
    reference = limit if isinstance(limit, LimitReference) else LimitReference(limit)
    sample = eps_result.sample_at(t_star)
    target = reference.sample_at(t_star)
    return ConcentrationReport(
        eps=eps_result.eps,
        t_star=t_star,
        mass=sample.mass,
        mass_error=abs(sample.mass - target.rho),
        mean=sample.mean,
        mean_error=float(np.max(np.abs(sample.mean - target.xbar))),
        second_moment=sample.second_moment,
        I_eps=sample.I,
    )


def probe_spec(center: np.ndarray, radius: float = 1.0, nodes: int = PROBE_NODES) -> GridSpec:
    center = np.atleast_1d(np.asarray(center, dtype=float))
    return GridSpec(center - radius, center + radius, [nodes] * center.shape[0])


def corrector_residual(eps_result: EpsRunResult, reference: LimitReference, t_star: float, probe: GridSpec, r: float) -> np.ndarray:
    """u_eps - eps log(r / eps^{d/2}) - u at t_star on the probe grid."""
    field = eps_result.snapshot_at(t_star)
    points = grid_nodes(probe)
    shift = hopf_cole_prefactor(eps_result.eps, r, probe.dimension)
    return _interpolate(field, points) - shift - reference.u_at(t_star, points)


def profile_check(
    eps_result: EpsRunResult,
    limit: LimitReference,
    u1_fit: GridField,
    t_star: float,
    r: float,
) -> Dict[str, float]:
    """Relative L1 error on the probe box of (r / eps^{d/2}) exp(u1 + u/eps) against n_eps."""
    eps = eps_result.eps
    probe = u1_fit.spec
    points = grid_nodes(probe)
    u_eps = _interpolate(eps_result.snapshot_at(t_star), points)
    shift = hopf_cole_prefactor(eps, r, probe.dimension)
    rebuilt = shift + eps * u1_fit.values + limit.u_at(t_star, points)
    top = float(max(u_eps.max(), rebuilt.max()))
    density = np.exp((u_eps - top) / eps)
    approximation = np.exp((rebuilt - top) / eps)
    error = integrate(np.abs(density - approximation), probe) / integrate(density, probe)
    return {"eps": eps, "t_star": t_star, "relative_l1": float(error)}


def loglog_slope(eps: Sequence[float], errors: Sequence[float]) -> Dict[str, Any]:
    """Least-squares slope of log error against log eps with its coefficient of determination."""
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= DEGENERATE_ERROR):
        logger.warning("Degenerate regression: errors at or below %.0e", DEGENERATE_ERROR)
        return {"slope": None, "r_squared": None, "degenerate": True}
    x, y = np.log(eps), np.log(errors)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - float(np.sum(residual**2)) / spread if spread > 0 else 1.0
    return {"slope": float(slope), "r_squared": r_squared, "degenerate": False}


def first_order_coefficient(eps: Sequence[float], signed_errors: np.ndarray) -> np.ndarray:
    """Slope through the origin of error = eps * c, component-wise over the trailing axes."""
    eps = np.asarray(eps, dtype=float)
    errors = np.asarray(signed_errors, dtype=float)
    weights = eps.reshape((-1,) + (1,) * (errors.ndim - 1))
    return np.sum(weights * errors, axis=0) / float(np.sum(eps**2))


def _stability(eps: Sequence[float], signed_errors: np.ndarray) -> Dict[str, Any]:
    head = first_order_coefficient(eps[:3], signed_errors[:3])
    tail = first_order_coefficient(eps[-3:], signed_errors[-3:])
    scale = float(np.max(np.abs(tail)))
    change = float(np.max(np.abs(head - tail))) / scale if scale > 0 else math.inf
    return {
        "first_three": np.atleast_1d(head).tolist(),
        "last_three": np.atleast_1d(tail).tolist(),
        "relative_change": change,
        "stable": change <= 0.2,
    }


def _write_run(uow, result: EpsRunResult) -> str:
    if uow is None:
        return ""
    name = f"eps_{result.eps!r}"
    path = uow.trajectories.add(result, name)
    uow.snapshots.add_all(result.snapshots, f"u_{name}")
    uow.reports.add(result, f"{name}_meta")
    return path.name


def sweep(
    model: RateModel,
    init: InitialData,
    ladder: Optional[Sequence[float]],
    T: float,
    t_stars: Sequence[float],
    policy: GridPolicy,
    limit_spec: GridSpec,
    limit_dt: float,
    uow=None,
    workers: Optional[int] = None,
    form: Optional[str] = None,
    limit_source: Optional[str] = None,
    cross_check_limit: bool = False,
    probe_radius: float = 1.0,
) -> SweepReport:
    """Runs run_parabolic at every eps, compares with the limit at each t_star and fits the first-order terms.

    Artifacts of finished runs are written as they complete; a failing run aborts the sweep.
    """
    ladder = list(settings.CONSTRAINED_HJ_EPS_LADDER if ladder is None else ladder)
    if len(ladder) < 4:
        raise InvalidArgumentError("A sweep needs at least four eps values")
    t_stars = sorted(float(t) for t in t_stars)
    if not t_stars or t_stars[0] <= 0.0 or t_stars[-1] > T:
        raise InvalidArgumentError("Every t_star must lie in (0, T]")
    report = SweepReport(ladder, t_stars)
    workers = settings.CONSTRAINED_HJ_SWEEP_WORKERS if workers is None else workers
    logger.info("start sweep: ladder=%s t_stars=%s workers=%s", ladder, t_stars, workers)

    reference = limit_reference(model, init, T, t_stars, limit_spec, limit_dt, limit_source, cross_check_limit)
    if uow is not None:
        uow.trajectories.add(reference.record, "limit")
    report.limit_check = {"source": reference.source, **reference.record.diagnostics.get("limit_equivalence", {})}

    results: Dict[float, EpsRunResult] = {}
    artifacts: Dict[float, str] = {}
    executor = ThreadPoolExecutor(max_workers=max(1, workers))
    futures = {
        executor.submit(
            run_parabolic,
            model,
            init,
            eps,
            T,
            policy.spec_for(eps),
            policy.dt,
            form,
            snapshot_times=t_stars,
            marks=t_stars,
        ): eps
        for eps in ladder
    }
    try:
        for future in as_completed(futures):
            eps = futures[future]
            result = future.result()
            results[eps] = result
            artifacts[eps] = _write_run(uow, result)
            logger.info("eps=%s finished: I_eps(T)=%.10f", eps, result.samples[-1].I)
    except Exception:
        executor.shutdown(wait=True, cancel_futures=True)
        raise
    executor.shutdown(wait=True)

    runs = [results[eps] for eps in ladder]
    d = model.dimension
    for t_star in t_stars:
        target = reference.sample_at(t_star)
        center = target.xbar
        probe = probe_spec(center, probe_radius)
        signed_I, signed_x, correctors = [], [], []
        for run in runs:
            sample = run.sample_at(t_star)
            corrector = corrector_residual(run, reference, t_star, probe, init.r)
            signed_I.append(sample.I - target.I)
            signed_x.append(sample.x - target.xbar)
            correctors.append(corrector)
            report.entries.append(
                SweepEntry(
                    eps=run.eps,
                    t_star=t_star,
                    I_error=abs(sample.I - target.I),
                    x_error=float(np.max(np.abs(sample.x - target.xbar))),
                    u_error=float(np.max(np.abs(corrector))),
                    artifact=artifacts[run.eps],
                    signed_I_error=sample.I - target.I,
                )
            )
        entries = report.entries_at(t_star)
        signed_I = np.asarray(signed_I)
        signed_x = np.asarray(signed_x).reshape(len(runs), d)
        u1 = probe.field(first_order_coefficient(ladder, np.asarray(correctors)), t_star)
        u_errors = [entry.u_error for entry in entries]
        key = repr(t_star)
        report.fits[key] = {
            "I_slope": loglog_slope(ladder, [entry.I_error for entry in entries]),
            "x_slope": loglog_slope(ladder, [entry.x_error for entry in entries]),
            "u_slope": loglog_slope(ladder, u_errors),
            "u_error_monotone": all(later < earlier for earlier, later in zip(u_errors, u_errors[1:])),
            "I1": float(first_order_coefficient(ladder, signed_I)),
            "I1_stability": _stability(ladder, signed_I),
            "x1": first_order_coefficient(ladder, signed_x).tolist(),
            "x1_stability": _stability(ladder, signed_x),
            "u1": {"lo": probe.lo.tolist(), "hi": probe.hi.tolist(), "n": probe.n, "sup": float(np.max(np.abs(u1.values)))},
            "profile": [profile_check(run, reference, u1, t_star, init.r) for run in runs],
        }
        if uow is not None:
            uow.snapshots.add(u1, f"u1_t{t_star!r}")
        checks = [concentration_check(run, reference, t_star) for run in runs]
        moments = [check.second_moment for check in checks]
        report.concentration[key] = {
            "runs": [check.to_dict() for check in checks],
            "second_moment_ratios": [earlier / later for earlier, later in zip(moments, moments[1:]) if later > 0],
        }

    report.bounds = _bounds(runs, model)
    logger.info("finish sweep: %d entries", len(report.entries))
    return report


def _bounds(runs: List[EpsRunResult], model: RateModel) -> Dict[str, Any]:
    constants = [run.diagnostics["C_fit"] for run in runs]
    positive = [value for value in constants if value > 0]
    spread = max(positive) / min(positive) if positive else 1.0
    return {
        "I_M": model.resource_ceiling,
        "I_m": [run.diagnostics["I_m"] for run in runs],
        "C_fit": constants,
        "C_spread": spread,
        "C_stable": spread <= 2.0,
        "C_enforced": all(run.diagnostics["resource_box"]["upper_enforced"] for run in runs),
        "sandwich": {
            repr(run.eps): {
                "hessian": run.diagnostics["hessian_sandwich"],
                "quadratic": run.diagnostics["quadratic_sandwich"],
            }
            for run in runs
        },
    }
