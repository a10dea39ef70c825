import math

import numpy as np
import pytest

from constrained_hj.domain.errors import (
    BallEscapeError,
    DivisionGuardError,
    InvalidArgumentError,
    NoPositiveRootError,
)
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.paths import ResourcePath, TraitPath
from constrained_hj.domain.results import ContractionReport
from constrained_hj.services.handlers.fixed_point_lab import (
    constant_path,
    contraction_slope,
    iterate_Phi,
    lipschitz_probe,
    measure_contraction,
    path_to_resource,
    random_resource_pair,
    transport_cross_check,
    windowed_fixed_point,
)
from constrained_hj.services.handlers.hj_limit_solver import initial_from_quadratic
from constrained_hj.services.handlers.rate_model import load_model

CANONICAL = {"a": 1.0, "B": [[1.0]], "theta": [0.0], "c": 1.0}
COUPLED = {**CANONICAL, "kappa": 0.5}
PHASE = math.atanh(0.5)


def exact_trait(t: float) -> float:
    return 0.5 * math.cosh(PHASE) / math.cosh(2.0 * t + PHASE)


class TestFixedPointLab:
    @classmethod
    def setup_class(cls):
        cls.model = load_model(CANONICAL)
        cls.spec = GridSpec([-3.0], [3.0], [121])
        cls.init = initial_from_quadratic(cls.model, [0.5], [[1.0]], 0.4, cls.spec)
        cls.coupled = load_model(COUPLED)
        cls.coupled_init = initial_from_quadratic(cls.coupled, [0.5], [[1.0]], 0.4, cls.spec)

    def flat(self, level: float, delta: float = 0.1) -> ResourcePath:
        return ResourcePath(np.linspace(0.0, delta, 11), np.full(11, level))

    # --------- Picard iteration ----------
    def test_fixed_point_follows_trait_ode(self):
        result = iterate_Phi(self.model, constant_path([0.5], 0.05, 11), self.init, self.spec)
        assert result.converged
        assert all(ratio < 1.0 for ratio in result.ratios)
        assert result.path.values[-1, 0] == pytest.approx(exact_trait(0.05), abs=1e-4)
        assert result.path.anchor[0] == 0.5

    def test_ball_escape(self):
        with pytest.raises(BallEscapeError):
            iterate_Phi(self.model, constant_path([0.5], 0.5, 11), self.init, self.spec, radius=1e-4)

    def test_contraction_shrinks_with_window(self):
        short = measure_contraction(self.model, self.init, self.spec, 0.05, n_pairs=3, samples=11, seed=7)
        long = measure_contraction(self.model, self.init, self.spec, 0.1, n_pairs=3, samples=11, seed=7)
        assert len(short.ratios) == 3
        assert short.factor < long.factor < 1.0

    def test_contraction_scales_linearly_with_window(self):
        reports = [
            measure_contraction(self.model, self.init, self.spec, delta, n_pairs=20, samples=11, seed=7)
            for delta in (0.025, 0.05, 0.1)
        ]
        assert [len(report.ratios) for report in reports] == [20, 20, 20]
        assert reports[1].factor < 1.0
        slope = contraction_slope(reports)
        assert 0.8 <= slope["slope"] <= 1.3
        assert 0.3 <= slope["min_linear_ratio"] <= slope["max_linear_ratio"] <= 3.0

    def test_contraction_slope_of_linear_factors(self):
        slope = contraction_slope([ContractionReport(0.1, [0.2]), ContractionReport(0.05, [0.1])])
        assert slope["slope"] == pytest.approx(1.0)
        assert slope["max_linear_ratio"] == pytest.approx(1.0)

    def test_windowed_restarts(self):
        results, restarts = windowed_fixed_point(self.model, self.init, self.spec, 0.05, n_windows=2, samples=11)
        assert [result.converged for result in results] == [True, True]
        assert restarts[1]["t_end"] == pytest.approx(0.1)
        assert all(restart["admissible"] for restart in restarts)
        assert results[1].path.anchor[0] == pytest.approx(results[0].path.values[-1, 0])
        assert results[1].path.values[-1, 0] < results[0].path.values[-1, 0]

    def test_path_to_resource_reports_failure_time(self):
        path = TraitPath([0.0, 0.1, 0.2], [[0.5], [0.9], [1.5]])
        with pytest.raises(NoPositiveRootError) as error:
            path_to_resource(self.model, path)
        assert error.value.time == pytest.approx(0.2)

    # --------- resource to value map ----------
    def test_lipschitz_ratio(self):
        ratio = lipschitz_probe(self.model, self.flat(0.7), self.flat(0.8), self.init, self.spec)
        # v1 - v2 = 0.1 t exactly, so the W2 norm is 0.1 * delta
        assert ratio == pytest.approx(1.0, rel=1e-6)

    def test_lipschitz_guards(self):
        with pytest.raises(DivisionGuardError):
            lipschitz_probe(self.model, self.flat(0.7), self.flat(0.7), self.init, self.spec)
        with pytest.raises(InvalidArgumentError):
            lipschitz_probe(self.model, self.flat(0.7), self.flat(1.5), self.init, self.spec)

    def test_random_resource_pair_stays_inside(self):
        generator = np.random.default_rng(3)
        first, second = random_resource_pair(0.75, 1.0, 0.1, 11, generator)
        for path in (first, second):
            assert np.all(path.values > 0.0) and np.all(path.values < 1.0)
            assert path.values[0] == pytest.approx(0.75)
        assert first.distance(second) > 0.0

    def test_transport_matches_direct_difference(self):
        check = transport_cross_check(self.model, self.flat(0.7), self.flat(0.8), self.init, self.spec)
        assert check["satisfied"]
        assert check["gap"] <= 1e-10

    def test_transport_with_trait_dependent_source(self):
        # with kappa > 0 the source -kappa (I1 - I2) x^2 varies in x, so the feet of the characteristics matter
        for seed in range(5):
            first, second = random_resource_pair(0.7, 1.0, 0.1, 11, np.random.default_rng(seed))
            check = transport_cross_check(self.coupled, first, second, self.coupled_init, self.spec)
            assert check["satisfied"]
            assert 0.0 < check["gap"] <= check["bound"]

    def test_lipschitz_ratio_is_uniform_in_window(self):
        for seed in range(5):
            ratios = []
            for delta in (0.1, 0.05, 0.025):
                first, second = random_resource_pair(0.7, 1.0, delta, 11, np.random.default_rng(seed))
                ratios.append(lipschitz_probe(self.coupled, first, second, self.coupled_init, self.spec))
            assert min(ratios) > 0.0
            assert max(ratios) / min(ratios) < 2.0
