import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from constrained_hj.domain.enums import HamiltonianScheme
from constrained_hj.domain.errors import (
    InvalidArgumentError,
    InvariantViolationError,
    OutOfDomainError,
    PeakEscapedDomainError,
    StepRejectedError,
)
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.trajectory import TrajectoryRecord
from constrained_hj.services.config import settings
from constrained_hj.services.handlers.hj_limit_solver import (
    NODE_CACHE_SIZE,
    _nodes,
    argmax_u,
    check_invariants,
    grid_nodes,
    hessian_at,
    initial_from_field,
    initial_from_quadratic,
    solve_limit,
    step_u,
    trait_velocity,
)
from constrained_hj.services.handlers.quadratic_oracle import integrate_oracle
from constrained_hj.services.handlers.rate_model import load_model
from constrained_hj.services.handlers.schedule import TimeSchedule

CANONICAL = {"a": 1.0, "B": [[1.0]], "theta": [0.0], "c": 1.0}
FLAT_RATE = {"a": 0.0, "B": [[0.0]], "theta": [0.0], "c": 0.0}
PHASE = math.atanh(0.5)


def exact_trait(t: float) -> float:
    return 0.5 * math.cosh(PHASE) / math.cosh(2.0 * t + PHASE)


class TestHJLimitSolver:
    @classmethod
    def setup_class(cls):
        cls.model = load_model(CANONICAL)
        cls.spec = GridSpec([-3.0], [3.0], [61])
        cls.x = cls.spec.points()[..., 0]

    # --------- stencils ----------
    def test_step_keeps_steady_quadratic(self):
        # u = -x^2 / 2 with I = 1 is a steady state of u_t = |u_x|^2 + 1 - x^2 - I
        field = self.spec.field(-0.5 * self.x**2)
        for scheme in (HamiltonianScheme.LLF, HamiltonianScheme.CENTRAL):
            advanced = step_u(field, self.model, 1.0, 0.01, scheme=scheme)
            assert advanced.t == pytest.approx(0.01)
            assert np.max(np.abs(advanced.values - field.values)) <= 1e-12

    def test_step_rejected_above_cfl(self):
        field = self.spec.field(-0.5 * self.x**2)
        with pytest.raises(StepRejectedError) as error:
            step_u(field, self.model, 1.0, 0.05)
        assert 0 < error.value.suggested_dt < 0.05

    def test_argmax_refines_between_nodes(self):
        peak, value = argmax_u(self.spec.field(-((self.x - 0.23) ** 2)))
        assert peak[0] == pytest.approx(0.23, abs=1e-12)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_argmax_on_boundary(self):
        with pytest.raises(PeakEscapedDomainError):
            argmax_u(self.spec.field(-((self.x - 5.0) ** 2)))

    def test_hessian_of_planar_quadratic(self):
        spec = GridSpec([-1.0, -1.0], [1.0, 1.0], [21, 21])
        x, y = spec.mesh()
        field = spec.field(-(x**2 + x * y + 2.0 * y**2))
        hessian = hessian_at(field, np.array([0.13, -0.27]))
        assert np.allclose(hessian, [[-2.0, -1.0], [-1.0, -4.0]], atol=1e-10)
        with pytest.raises(OutOfDomainError):
            hessian_at(field, np.array([0.98, 0.0]))

    def test_step_follows_hopf_lax_without_rate(self):
        # u_t = |u_x|^2 from -x^2 gives -x^2 / (1 + 4t)
        advanced = step_u(self.spec.field(-(self.x**2)), load_model(FLAT_RATE), 1.0, 1e-3)
        assert np.max(np.abs(advanced.values + self.x**2 / (1.0 + 4e-3))) <= 1e-6

    def test_flat_field_still_bounds_the_step(self):
        model = load_model(FLAT_RATE)
        floor = settings.CONSTRAINED_HJ_CFL_EPSILON
        flat = self.spec.field(np.zeros(61))
        with pytest.raises(StepRejectedError) as error:
            step_u(flat, model, 1.0, 2.0 * 0.1 / floor)
        assert error.value.suggested_dt == pytest.approx(0.9 * 0.1 / floor)
        assert np.all(step_u(flat, model, 1.0, 0.5 * 0.1 / floor).values == 0.0)

    def test_step_needs_admissible_resource(self):
        field = self.spec.field(-0.5 * self.x**2)
        for I, I_end in ((0.0, None), (1.2, None), (0.9, 1.5)):
            with pytest.raises(InvalidArgumentError):
                step_u(field, self.model, I, 0.01, I_end=I_end)

    def test_argmax_is_second_order(self):
        errors = []
        for spec in (self.spec, self.spec.refined()):
            y = spec.points()[..., 0] - 0.3
            peak, _ = argmax_u(spec.field(-(y**2) - 0.05 * y**3))
            errors.append(abs(peak[0] - 0.3))
        # the peak stays at 0.3; the cubic biases the fitted quadratic by h^2 / 40
        assert errors[0] == pytest.approx(0.1**2 / 40.0, rel=1e-3)
        assert errors[0] / errors[1] >= 3.5

    def test_hessian_is_second_order(self):
        errors = []
        for spec in (self.spec, self.spec.refined()):
            field = spec.field(-(spec.points()[..., 0] ** 4))
            errors.append(abs(hessian_at(field, np.array([1.0]))[0, 0] + 12.0))
        assert errors[0] == pytest.approx(2.0 * 0.1**2, rel=1e-6)
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=1e-3)

    def test_grid_nodes_are_shared_and_bounded(self):
        first = grid_nodes(GridSpec([-1.0], [1.0], [11]))
        assert first is grid_nodes(GridSpec([-1.0], [1.0], [11]))
        assert not first.flags.writeable
        specs = [GridSpec([-1.0], [1.0], [11 + 2 * k]) for k in range(2 * NODE_CACHE_SIZE)]
        with ThreadPoolExecutor(max_workers=4) as pool:
            shared = list(pool.map(grid_nodes, specs))
        for spec, nodes in zip(specs, shared):
            assert np.array_equal(nodes, spec.points())
        assert _nodes.cache_info().currsize <= NODE_CACHE_SIZE

    def test_trait_velocity(self):
        field = self.spec.field(-((self.x - 0.5) ** 2))
        # -(D2u)^{-1} grad R = (2)^{-1} * (-2 * 0.5)
        assert trait_velocity(field, self.model, np.array([0.5]), 0.75)[0] == pytest.approx(-0.5, abs=1e-10)

    def test_schedule_hits_marks(self):
        schedule = TimeSchedule(1.0, 0.3, [0.5])
        assert 0.5 in schedule.times.tolist()
        assert schedule.T == 1.0
        assert np.all(schedule.steps <= 0.3 + 1e-12)

    # --------- initial data ----------
    def test_initial_from_quadratic_constants(self):
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, self.spec)
        assert init.I0 == pytest.approx(0.75, abs=1e-12)
        assert init.L1_upper == pytest.approx(0.5)
        assert init.L1_lower == pytest.approx(1.0)
        # max over the box of (x - 0.5)^2 - x^2 sits at x = -3
        assert init.L0_lower == pytest.approx(3.25)

    def test_initial_from_field_matches_quadratic(self):
        field = self.spec.field(-((self.x - 0.5) ** 2))
        init = initial_from_field(self.model, field, 0.4)
        assert init.xbar0[0] == pytest.approx(0.5, abs=1e-12)
        assert init.I0 == pytest.approx(0.75, abs=1e-10)
        assert init.sample(self.spec).values == pytest.approx(field.values)

    # --------- full solve ----------
    def test_solve_limit_tracks_closed_form(self):
        spec = GridSpec([-4.0], [4.0], [401])
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, spec)
        record = solve_limit(self.model, init, 1.0, spec, 5e-4, sample_every=100, snapshot_times=[0.5])
        xbar, I = record.at(1.0)
        assert xbar[0] == pytest.approx(exact_trait(1.0), abs=5e-4)
        assert I == pytest.approx(1.0 - exact_trait(1.0) ** 2, abs=5e-4)
        assert len(record.snapshots) == 1 and record.snapshots[0].t == pytest.approx(0.5)
        assert record.diagnostics["projections"] == 0
        assert check_invariants(record, strict=False) == []

    def test_canonical_run_keeps_constraint(self):
        spec = GridSpec([-4.0], [5.0], [451])
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, spec)
        record = solve_limit(self.model, init, 5.0, spec, 5e-4, sample_every=200)
        oracle = integrate_oracle(self.model, init, 5.0, 1e-3, sample_every=1000)
        assert record.diagnostics["constraint_equivalence"]["worst"] <= 1e-4
        assert record.diagnostics["projections"] == 0
        assert record.diagnostics["R_residual"]["worst"] <= 1e-12
        for t in (1.0, 5.0):
            xbar, I = record.at(t)
            x_oracle, I_oracle = oracle.at(t)
            assert xbar[0] == pytest.approx(x_oracle[0], abs=5e-4)
            assert I == pytest.approx(I_oracle, abs=5e-4)
        assert check_invariants(record, strict=False) == []

    def test_limit_error_shrinks_with_grid(self):
        errors = []
        for n, dt in ((201, 1e-3), (401, 5e-4)):
            spec = GridSpec([-4.0], [4.0], [n])
            init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, spec)
            xbar, I = solve_limit(self.model, init, 1.0, spec, dt, sample_every=100).at(1.0)
            errors.append(max(abs(xbar[0] - exact_trait(1.0)), abs(I - 1.0 + exact_trait(1.0) ** 2)))
        assert errors[1] <= 5e-4
        assert errors[0] / errors[1] >= 3.0

    def test_resource_never_decreases_from_random_starts(self):
        spec = GridSpec([-4.0], [4.0], [201])
        generator = np.random.default_rng(11)
        for _ in range(5):
            m0 = generator.choice([-1.0, 1.0]) * generator.uniform(0.2, 0.9)
            A0 = generator.uniform(0.3, 1.5)
            init = initial_from_quadratic(self.model, [m0], [[A0]], 0.4, spec)
            record = solve_limit(self.model, init, 0.5, spec, 1e-3, sample_every=50)
            assert record.diagnostics["resource_monotone"]["satisfied"]
            assert np.all(np.diff(record.resources()) >= -1e-8)
            assert abs(record.final.xbar[0]) < abs(m0)

    def test_solve_limit_rejects_escaping_peak(self):
        spec = GridSpec([-1.0], [0.4], [29])
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, spec)
        with pytest.raises(PeakEscapedDomainError):
            solve_limit(self.model, init, 0.1, spec, 1e-3)

    def test_solve_limit_rejects_large_step(self):
        spec = GridSpec([-4.0], [4.0], [401])
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, spec)
        with pytest.raises(StepRejectedError):
            solve_limit(self.model, init, 0.1, spec, 1e-2)

    def test_check_invariants_raises_first_failure(self):
        record = TrajectoryRecord(1, "limit")
        record.diagnostics["hessian_sandwich"] = {"satisfied": False}
        record.diagnostics["resource_monotone"] = {"satisfied": False}
        assert check_invariants(record, strict=False) == ["resource-monotone", "hessian-sandwich"]
        with pytest.raises(InvariantViolationError) as error:
            check_invariants(record)
        assert error.value.invariant == "resource-monotone"
