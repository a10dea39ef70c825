"""Exact closure u = -(x-m)^T A (x-m) + p of the constrained HJ problem for quadratic data.

Substituting the ansatz into u_t = |grad u|^2 + R(x, I) and matching powers of y = x - m gives

    m' = -A^{-1} B (m - theta),   A' = B - 4 A^2,   p' = R(m, I(t)),

and the constraint max u = p = 0 fixes I = (a - (m-theta)^T B (m-theta)) / c.
"""

from __future__ import annotations

import logging
import sys
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from constrained_hj.domain.errors import (
    InadmissibleInitialDataError,
    IntegrationFailureError,
    InvalidArgumentError,
    InvariantViolationError,
    OracleInapplicableError,
)
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.initial import InitialData
from constrained_hj.domain.model import RateModel
from constrained_hj.domain.paths import ResourcePath
from constrained_hj.domain.trajectory import QuadraticAnsatz, TrajectoryRecord, TrajectorySample

from .rate_model import eval_R, eval_psi, solve_I_for_zero

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

CROSS_CHECK_TOLERANCE = 1e-10
MONOTONE_TOLERANCE = 1e-12


class ReducedSystem:
    """Right-hand side of the ansatz ODEs for one model."""

    def __init__(self, model: RateModel) -> None:
        self.model = model
        self.B = 0.5 * (model.B + model.B.T)
        self.d = model.dimension

    def rates(self, m: np.ndarray, A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m_dot = -np.linalg.solve(A, self.B @ (m - self.model.theta))
        A_dot = self.B - 4.0 * A @ A
        return m_dot, 0.5 * (A_dot + A_dot.T)

    def resource(self, m: np.ndarray) -> float:
        offset = m - self.model.theta
        return float((self.model.a - offset @ self.B @ offset) / self.model.c)

    def pack(self, m: np.ndarray, A: np.ndarray, p: float = 0.0) -> np.ndarray:
        return np.concatenate([m, A.reshape(-1), [p]])

    def unpack(self, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        d = self.d
        return state[:d], state[d : d + d * d].reshape(d, d), float(state[-1])

    def vector_field(self, resource: Optional[Callable[[float], float]] = None) -> Callable[[float, np.ndarray], np.ndarray]:
        def rhs(t: float, state: np.ndarray) -> np.ndarray:
            m, A, _ = self.unpack(state)
            m_dot, A_dot = self.rates(m, A)
            p_dot = 0.0 if resource is None else eval_R(self.model, m, resource(t))
            return self.pack(m_dot, A_dot, p_dot)

        return rhs


def _require_canonical(model: RateModel) -> None:
    if not model.is_canonical:
        raise OracleInapplicableError(f"The quadratic oracle needs kappa = 0, got kappa = {model.kappa}")
    if model.c <= 0:
        raise OracleInapplicableError("The quadratic oracle needs c > 0")


def _check_spd(A: np.ndarray, t: float) -> None:
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError as error:
        raise IntegrationFailureError(f"A lost positive definiteness at t={t}") from error


def reduce(model: RateModel, init: InitialData) -> ReducedSystem:
    _require_canonical(model)
    if not init.is_quadratic:
        raise OracleInapplicableError("The quadratic oracle needs a quadratic u0")
    if abs(init.offset) > 0.0:
        raise InadmissibleInitialDataError(f"max u0 = {init.offset} differs from 0")
    _check_spd(init.A0, 0.0)
    return ReducedSystem(model)


def _rk4(rhs: Callable[[float, np.ndarray], np.ndarray], t: float, state: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(t, state)
    k2 = rhs(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = rhs(t + dt, state + dt * k3)
    return state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _symmetrized(system: ReducedSystem, state: np.ndarray) -> np.ndarray:
    m, A, p = system.unpack(state)
    return system.pack(m, 0.5 * (A + A.T), p)


def _sample(system: ReducedSystem, model: RateModel, ansatz: QuadraticAnsatz) -> TrajectorySample:
    I = system.resource(ansatz.m)
    solved = solve_I_for_zero(model, ansatz.m)
    if abs(solved - I) > CROSS_CHECK_TOLERANCE * max(1.0, abs(I)):
        raise InvariantViolationError(
            f"Closed-form I={I!r} and root-solved I={solved!r} disagree at t={ansatz.t}", invariant="oracle-resource"
        )
    return TrajectorySample(
        t=ansatz.t,
        xbar=ansatz.m,
        I=I,
        rho=I / eval_psi(model, ansatz.m),
        constraint_residual=abs(ansatz.p),
        R_residual=abs(eval_R(model, ansatz.m, I)),
        A=ansatz.A,
    )


def _monotonicity(record: TrajectoryRecord) -> None:
    drops = -np.diff(record.resources())
    worst = float(drops.max()) if drops.size else 0.0
    record.diagnostics["resource_monotone"] = {"worst_drop": max(worst, 0.0), "satisfied": worst <= MONOTONE_TOLERANCE}
    if worst > MONOTONE_TOLERANCE:
        logger.warning("I(t) decreased by %.3e along the oracle trajectory", worst)


def integrate_oracle(
    model: RateModel,
    init: InitialData,
    T: float,
    dt: float,
    sample_every: int = 1,
    keep_history: bool = True,
) -> TrajectoryRecord:
    """Fixed-step RK4 on (m, A) with A re-symmetrized and checked SPD after every step."""
    logger.info("start integrate_oracle: T=%s dt=%s", T, dt)
    system = reduce(model, init)
    if not (dt > 0 and T > 0):
        raise InvalidArgumentError("integrate_oracle needs T > 0 and dt > 0")
    steps = max(1, int(np.ceil(T / dt - 1e-9)))
    step = T / steps
    rhs = system.vector_field()
    state = system.pack(init.m0, init.A0)
    record = TrajectoryRecord(model.dimension, "oracle")
    record.metadata.update({"integrator": "rk4", "dt": step, "T": T})
    for k in range(steps + 1):
        t = k * step
        m, A, _ = system.unpack(state)
        ansatz = QuadraticAnsatz(m.copy(), A.copy(), t)
        if keep_history:
            record.ansatz_history.append(ansatz)
        if k % sample_every == 0 or k == steps:
            record.add(_sample(system, model, ansatz))
        if k == steps:
            break
        state = _symmetrized(system, _rk4(rhs, t, state, step))
        _check_spd(system.unpack(state)[1], t + step)
    _monotonicity(record)
    final = record.final
    logger.info("finish integrate_oracle: xbar=%s I=%.12f", final.xbar.tolist(), final.I)
    return record


def integrate_oracle_adaptive(
    model: RateModel,
    init: InitialData,
    T: float,
    times: Optional[Sequence[float]] = None,
    rtol: float = 1e-10,
) -> TrajectoryRecord:
    """Reference trajectory from DOP853 sampled at `times` (default 101 uniform samples)."""
    logger.info("start integrate_oracle_adaptive: T=%s rtol=%g", T, rtol)
    system = reduce(model, init)
    times = np.linspace(0.0, T, 101) if times is None else np.asarray(sorted(set([0.0, *times, T])), dtype=float)
    solution = solve_ivp(
        system.vector_field(),
        (0.0, float(T)),
        system.pack(init.m0, init.A0),
        method="DOP853",
        t_eval=times,
        rtol=rtol,
        atol=rtol * 1e-2,
    )
    if not solution.success:
        raise IntegrationFailureError(f"Adaptive oracle integration failed: {solution.message}")
    record = TrajectoryRecord(model.dimension, "oracle_adaptive")
    record.metadata.update({"integrator": "DOP853", "rtol": rtol, "T": T})
    for t, state in zip(solution.t, solution.y.T):
        m, A, _ = system.unpack(state)
        A = 0.5 * (A + A.T)
        _check_spd(A, t)
        ansatz = QuadraticAnsatz(m, A, t)
        record.ansatz_history.append(ansatz)
        record.add(_sample(system, model, ansatz))
    _monotonicity(record)
    logger.info("finish integrate_oracle_adaptive: %d samples", len(record.samples))
    return record


def integrate_prescribed(
    model: RateModel,
    m0: Sequence[float],
    A0: Sequence[Sequence[float]] | np.ndarray,
    resource: ResourcePath | Callable[[float], float],
    T: float,
    dt: float,
    p0: float = 0.0,
) -> List[QuadraticAnsatz]:
    """Ansatz evolution for a prescribed I(t); the offset p then follows p' = R(m, I(t))."""
    _require_canonical(model)
    system = ReducedSystem(model)
    lookup = resource.at if isinstance(resource, ResourcePath) else resource
    steps = max(1, int(np.ceil(T / dt - 1e-9)))
    step = T / steps
    rhs = system.vector_field(lookup)
    state = system.pack(np.atleast_1d(np.asarray(m0, dtype=float)), np.atleast_2d(np.asarray(A0, dtype=float)), p0)
    history = []
    for k in range(steps + 1):
        m, A, p = system.unpack(state)
        history.append(QuadraticAnsatz(m.copy(), A.copy(), k * step, p))
        if k < steps:
            state = _symmetrized(system, _rk4(rhs, k * step, state, step))
    return history


def _time_derivative(values: np.ndarray, k: int, dt: float, order: int) -> np.ndarray:
    if order == 4:
        return (-values[k + 2] + 8.0 * values[k + 1] - 8.0 * values[k - 1] + values[k - 2]) / (12.0 * dt)
    return (values[k + 1] - values[k - 1]) / (2.0 * dt)


def hj_residual(
    model: RateModel,
    history: Sequence[QuadraticAnsatz],
    spec: GridSpec,
    order: Optional[int] = None,
    resource: Optional[Sequence[float]] = None,
) -> float:
    """max |u_t - |grad u|^2 - R(x, I(t))| over the grid and the interior time levels.

    Spatial derivatives are analytic; u_t uses centred differences of order 4 when at least five
    uniform levels exist, order 2 otherwise or when requested. `resource` overrides I per level.
    """
    if len(history) < 3:
        raise InvalidArgumentError("hj_residual needs at least three time levels")
    times = np.array([ansatz.t for ansatz in history])
    steps = np.diff(times)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-14):
        raise InvalidArgumentError("hj_residual needs uniform time levels")
    dt = float(steps[0])
    if order is None:
        order = 4 if len(history) >= 5 else 2
    if order not in (2, 4) or (order == 4 and len(history) < 5):
        raise InvalidArgumentError(f"Unsupported time-differencing order {order} for {len(history)} levels")
    reach = order // 2
    system = ReducedSystem(model)
    points = spec.points()
    values = np.array([ansatz.evaluate(points) for ansatz in history])
    if resource is None:
        resources = np.array([system.resource(ansatz.m) for ansatz in history])
    else:
        resources = np.asarray(resource, dtype=float)
        if resources.shape != (len(history),):
            raise InvalidArgumentError("Resource override must give one value per level")
    residual = 0.0
    for k in range(reach, len(history) - reach):
        gradient = history[k].gradient(points)
        rate = np.sum(gradient**2, axis=-1) + eval_R(model, points, resources[k])
        residual = max(residual, float(np.max(np.abs(_time_derivative(values, k, dt, order) - rate))))
    return residual
