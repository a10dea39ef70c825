import math

import numpy as np
import pytest

from constrained_hj.domain.errors import InadmissibleInitialDataError, OracleInapplicableError
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.paths import ResourcePath
from constrained_hj.services.handlers.hj_limit_solver import initial_from_quadratic
from constrained_hj.services.handlers.quadratic_oracle import (
    hj_residual,
    integrate_oracle,
    integrate_oracle_adaptive,
    integrate_prescribed,
    reduce,
)
from constrained_hj.services.handlers.rate_model import load_model

CANONICAL = {"a": 1.0, "B": [[1.0]], "theta": [0.0], "c": 1.0}
R_PREFACTOR = 0.75 / math.sqrt(math.pi)
PHASE = math.atanh(0.5)  # acoth(2)


def exact_trait(t: float) -> float:
    """m(t) for m0 = 0.5, A0 = 1: A = coth(2t + PHASE) / 2 and m' = -m / A."""
    return 0.5 * math.cosh(PHASE) / math.cosh(2.0 * t + PHASE)


def exact_curvature(t: float) -> float:
    return 0.5 / math.tanh(2.0 * t + PHASE)


class TestQuadraticOracle:
    @classmethod
    def setup_class(cls):
        cls.model = load_model(CANONICAL)
        cls.spec = GridSpec([-3.0], [3.0], [121])
        cls.init = initial_from_quadratic(cls.model, [0.5], [[1.0]], R_PREFACTOR, cls.spec)

    def test_matches_closed_form(self):
        record = integrate_oracle(self.model, self.init, 2.0, 1e-3, sample_every=100)
        for sample in record.samples:
            assert sample.xbar[0] == pytest.approx(exact_trait(sample.t), abs=1e-9)
            assert sample.A[0, 0] == pytest.approx(exact_curvature(sample.t), abs=1e-9)
            assert sample.I == pytest.approx(1.0 - exact_trait(sample.t) ** 2, abs=1e-9)
            assert sample.R_residual <= 1e-12
            assert sample.rho == pytest.approx(sample.I)

    def test_resource_is_monotone(self):
        record = integrate_oracle(self.model, self.init, 3.0, 1e-2)
        assert record.diagnostics["resource_monotone"]["satisfied"]
        assert np.all(np.diff(record.resources()) >= -1e-12)

    def test_resource_is_monotone_from_random_starts(self):
        generator = np.random.default_rng(11)
        for _ in range(5):
            m0 = generator.choice([-1.0, 1.0]) * generator.uniform(0.2, 0.9)
            A0 = generator.uniform(0.3, 1.5)
            init = initial_from_quadratic(self.model, [m0], [[A0]], R_PREFACTOR, self.spec)
            record = integrate_oracle(self.model, init, 3.0, 1e-2)
            assert record.diagnostics["resource_monotone"]["satisfied"]
            assert np.all(np.diff(record.resources()) >= -1e-8)

    def test_curvature_approaches_attractor_from_both_sides(self):
        # A' = B - 4 A^2 drives A to sqrt(B) / 2 = 0.5 without crossing it
        for A0 in (0.2, 2.0):
            init = initial_from_quadratic(self.model, [0.5], [[A0]], R_PREFACTOR, self.spec)
            record = integrate_oracle(self.model, init, 2.0, 1e-2, sample_every=10)
            curvature = np.array([sample.A[0, 0] for sample in record.samples])
            assert np.all(np.sign(np.diff(curvature)) == np.sign(1.0 - 4.0 * curvature[:-1] ** 2))
            assert curvature[-1] == pytest.approx(0.5, abs=1e-3)

    def test_long_time_limit(self):
        record = integrate_oracle(self.model, self.init, 10.0, 1e-3, sample_every=1000)
        assert record.final.xbar[0] == pytest.approx(0.0, abs=1e-6)
        assert record.final.A[0, 0] == pytest.approx(0.5, abs=1e-6)
        assert record.final.I == pytest.approx(1.0, abs=1e-6)

    def test_adaptive_agrees_with_fixed_step(self):
        fixed = integrate_oracle(self.model, self.init, 1.0, 1e-3)
        adaptive = integrate_oracle_adaptive(self.model, self.init, 1.0, times=[0.25, 0.5])
        assert adaptive.times() == pytest.approx([0.0, 0.25, 0.5, 1.0])
        assert adaptive.final.I == pytest.approx(fixed.final.I, abs=1e-8)
        assert adaptive.final.xbar[0] == pytest.approx(exact_trait(1.0), abs=1e-8)

    def test_planar_trait_approaches_theta(self):
        model = load_model({"a": 2.0, "B": [[2.0, 0.5], [0.5, 1.0]], "theta": [0.5, -0.5], "c": 0.5})
        spec = GridSpec([-2.0, -2.0], [2.0, 2.0], [21, 21])
        init = initial_from_quadratic(model, [0.2, 0.0], [[1.0, 0.2], [0.2, 0.8]], 0.5, spec)
        record = integrate_oracle(model, init, 8.0, 2e-3, sample_every=500)
        assert np.allclose(record.final.xbar, model.theta, atol=1e-4)
        assert record.final.I == pytest.approx(4.0, abs=1e-4)

    # --------- residual of the ansatz in the HJ equation ----------
    def test_hj_residual(self):
        coarse = integrate_oracle(self.model, self.init, 0.5, 1e-3)
        assert hj_residual(self.model, coarse.ansatz_history, self.spec) <= 1e-6

    def test_second_order_residual_improves(self):
        first = integrate_oracle(self.model, self.init, 0.2, 2e-3)
        second = integrate_oracle(self.model, self.init, 0.2, 1e-3)
        ratio = hj_residual(self.model, first.ansatz_history, self.spec, order=2) / hj_residual(
            self.model, second.ansatz_history, self.spec, order=2
        )
        assert 3.0 <= ratio <= 5.0

    def test_prescribed_resource_moves_offset(self):
        level = ResourcePath([0.0, 1.0], [0.5, 0.5])
        history = integrate_prescribed(self.model, [0.0], [[0.5]], level, 1.0, 1e-3)
        # at the steady curvature and theta, p' = R(0, 0.5) = 0.5
        assert history[-1].p == pytest.approx(0.5, abs=1e-10)
        assert history[-1].m[0] == pytest.approx(0.0, abs=1e-14)
        resource = [0.5] * len(history)
        assert hj_residual(self.model, history, self.spec, resource=resource) <= 1e-8

    # --------- applicability ----------
    def test_inapplicable_models(self):
        with pytest.raises(OracleInapplicableError):
            reduce(load_model({**CANONICAL, "kappa": 0.3}), self.init)
        with pytest.raises(OracleInapplicableError):
            integrate_prescribed(load_model({**CANONICAL, "c": 0.0}), [0.0], [[0.5]], lambda t: 0.5, 1.0, 0.1)

    def test_shifted_initial_data(self):
        shifted = initial_from_quadratic(self.model, [0.5], [[1.0]], R_PREFACTOR, self.spec, offset=-0.1)
        with pytest.raises(InadmissibleInitialDataError):
            integrate_oracle(self.model, shifted, 1.0, 1e-2)
