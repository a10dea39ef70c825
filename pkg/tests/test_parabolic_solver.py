import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from constrained_hj.domain.enums import DensityForm, SplittingType
from constrained_hj.domain.errors import (
    InadmissibleInitialDataError,
    InadmissibleInitialMassError,
    InvalidArgumentError,
    InvariantViolationError,
    StepRejectedError,
)
from constrained_hj.domain.grid import GridSpec
from constrained_hj.services.handlers.hj_limit_solver import initial_from_quadratic
from constrained_hj.services.handlers.parabolic_solver import (
    diffuse,
    init_n0,
    integrate,
    run_parabolic,
    step_parabolic,
)
from constrained_hj.services.handlers.rate_model import load_model

CANONICAL = {"a": 1.0, "B": [[1.0]], "theta": [0.0], "c": 1.0}
R_PREFACTOR = 0.75 / math.sqrt(math.pi)


def quadratic_eps_reference(eps: float, T: float) -> tuple[float, float]:
    """(I_eps(T), m(T)) for u_eps = -A (x-m)^2 + p with m' = -m / A, A' = 1 - 4A^2, p' = R(m, I_eps) - 2 eps A."""

    def resource(m, A, p):
        return math.exp(p / eps) * math.sqrt(math.pi * eps / A)

    def rhs(t, state):
        m, A, p = state
        return [-m / A, 1.0 - 4.0 * A * A, 1.0 - m * m - resource(m, A, p) - 2.0 * eps * A]

    p0 = eps * math.log(R_PREFACTOR / math.sqrt(eps))
    solution = solve_ivp(rhs, (0.0, T), [0.5, 1.0, p0], method="DOP853", rtol=1e-12, atol=1e-14)
    m, A, p = solution.y[:, -1]
    return resource(m, A, p), m


class TestParabolicSolver:
    @classmethod
    def setup_class(cls):
        cls.model = load_model(CANONICAL)
        cls.spec = GridSpec([-4.0], [4.0], [401])
        cls.x = cls.spec.points()[..., 0]
        cls.init = initial_from_quadratic(cls.model, [0.5], [[1.0]], R_PREFACTOR, cls.spec)

    # --------- initial data ----------
    def test_initial_resource_is_eps_independent(self):
        for eps in (0.1, 0.05):
            density, potential, I_eps0 = init_n0(self.model, self.init, eps, self.spec)
            assert I_eps0 == pytest.approx(0.75, abs=1e-8)
            assert integrate(density.values, self.spec) == pytest.approx(0.75, abs=1e-8)
            assert np.allclose(eps * np.log(density.values), potential.values)

    def test_initial_data_guards(self):
        shifted = initial_from_quadratic(self.model, [0.5], [[1.0]], R_PREFACTOR, self.spec, offset=-0.1)
        with pytest.raises(InadmissibleInitialDataError):
            init_n0(self.model, shifted, 0.1, self.spec)
        heavy = initial_from_quadratic(self.model, [0.5], [[1.0]], 2.0, self.spec)
        with pytest.raises(InadmissibleInitialMassError):
            init_n0(self.model, heavy, 0.1, self.spec)
        with pytest.raises(InvalidArgumentError):
            init_n0(self.model, self.init, 0.0, self.spec)

    def test_quadrature_rules(self):
        spec = GridSpec([-1.0], [1.0], [5])
        assert integrate(np.ones(5), spec) == pytest.approx(2.0)
        assert integrate(spec.points()[..., 0] ** 2, spec) == pytest.approx(2.0 / 3.0)
        with pytest.raises(InvalidArgumentError):
            integrate(np.ones(5), spec, rule="midpoint")

    # --------- density form ----------
    def test_neutral_rate_conserves_mass(self):
        model = load_model({"a": 0.0, "B": [[0.0]], "theta": [0.0], "c": 0.0})
        density = self.spec.field(np.exp(-self.x**2 / 0.1))
        start = integrate(density.values, self.spec, rule="trapezoid")
        for _ in range(100):
            density = step_parabolic(density, 0.1, 1e-3, model)
        assert integrate(density.values, self.spec, rule="trapezoid") == pytest.approx(start, rel=1e-10)
        assert density.t == pytest.approx(0.1)

    def test_uniform_death_rate(self):
        model = load_model({"a": -1.0, "B": [[0.0]], "theta": [0.0], "c": 0.0})
        for splitting in list(SplittingType):
            density = step_parabolic(self.spec.field(np.ones(401)), 0.1, 1e-3, model, splitting)
            assert np.allclose(density.values, math.exp(-0.01), rtol=1e-12)

    def test_reflecting_diffusion_keeps_constants(self):
        for boundary in ("reflecting", "extrapolated"):
            assert np.allclose(diffuse(np.full(401, 3.0), self.spec, 0.1, 1e-2, boundary), 3.0)
        with pytest.raises(InvalidArgumentError):
            diffuse(np.ones(401), self.spec, 0.1, 1e-2, "periodic")

    def test_step_rejected_above_reaction_scale(self):
        density = self.spec.field(np.exp(-self.x**2 / 0.1))
        with pytest.raises(StepRejectedError) as error:
            step_parabolic(density, 0.1, 0.2, self.model)
        # max |R| on the box is |R(4, I_M)| = 16
        assert error.value.suggested_dt == pytest.approx(0.25 * 0.1 / 16.0)

    # --------- full runs ----------
    def test_steady_profile_stays_put(self):
        eps = 0.1
        init = initial_from_quadratic(self.model, [0.0], [[0.5]], (1.0 - eps) / math.sqrt(2.0 * math.pi), self.spec)
        result = run_parabolic(
            self.model, init, eps, 0.5, self.spec, dt=2.5e-4, form=DensityForm.POTENTIAL, sample_every=200
        )
        assert np.max(np.abs(result.resources() - (1.0 - eps))) <= 1e-6
        assert np.max(np.abs(result.traits())) <= 1e-9

    def test_upper_resource_box_is_opt_in(self):
        eps = 0.1
        init = initial_from_quadratic(self.model, [0.0], [[0.5]], (1.0 - eps) / math.sqrt(2.0 * math.pi), self.spec)

        def run(**options):
            return run_parabolic(
                self.model, init, eps, 0.05, self.spec, dt=2.5e-4, form=DensityForm.POTENTIAL, sample_every=200, **options
            )

        box = run().diagnostics["resource_box"]
        assert not box["upper_enforced"] and box["upper"] is None
        assert box["satisfied"] and box["C_fit"] == 0.0
        box = run(C_bound=0.0).diagnostics["resource_box"]
        assert box["upper_enforced"] and box["upper"] == 1.0
        assert box["satisfied"]
        with pytest.raises(InvariantViolationError) as error:
            run(C_bound=-100.0)
        assert error.value.invariant == "resource-box"

    def test_potential_form_matches_quadratic_reference(self):
        eps = 0.05
        result = run_parabolic(
            self.model, self.init, eps, 0.5, self.spec, dt=1e-4, form=DensityForm.POTENTIAL, sample_every=1000
        )
        I_ref, m_ref = quadratic_eps_reference(eps, 0.5)
        final = result.samples[-1]
        assert final.t == pytest.approx(0.5)
        assert final.I == pytest.approx(I_ref, abs=1e-5)
        assert final.x[0] == pytest.approx(m_ref, abs=1e-6)
        assert result.metadata["form"] == DensityForm.POTENTIAL
        assert result.diagnostics["hessian_sandwich"]["satisfied"]
        assert result.diagnostics["I_m"] > 0.0

    def test_density_form_cross_check(self):
        result = run_parabolic(self.model, self.init, 0.1, 0.5, self.spec, sample_every=100, snapshot_times=[0.25])
        assert result.metadata["form"] == DensityForm.DENSITY
        assert result.metadata["splitting"] == SplittingType.STRANG
        assert result.metadata["cross_check"]["max_I_gap"] <= 1e-3
        assert result.snapshot_at(0.25).t == pytest.approx(0.25)
        assert result.metadata["mass_leaks"] == 0

    def test_small_eps_switches_to_potential(self):
        result = run_parabolic(self.model, self.init, 0.0125, 0.05, self.spec)
        assert result.metadata["form"] == DensityForm.POTENTIAL
        assert "cross_check" not in result.metadata
        assert result.metadata["I_eps0"] == pytest.approx(0.75, abs=1e-8)
