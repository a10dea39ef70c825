import math

import numpy as np
import pytest

from constrained_hj.domain.errors import InvalidArgumentError, InvariantViolationError, NoPositiveRootError
from constrained_hj.domain.grid import GridSpec
from constrained_hj.domain.model import RateModel
from constrained_hj.services.handlers.hj_limit_solver import initial_from_quadratic
from constrained_hj.services.handlers.rate_model import (
    curvature_bounds,
    eval_dI_R,
    eval_grad_x_R,
    eval_hess_x_R,
    eval_psi,
    eval_R,
    load_model,
    resource_ceiling,
    solve_I_for_zero,
    validate_hypotheses,
    validate_initial_data,
)

CANONICAL = {"a": 1.0, "B": [[1.0]], "theta": [0.0], "c": 1.0}
BOX = ([-2.0], [2.0])


class TestRateModel:
    @classmethod
    def setup_class(cls):
        cls.model = load_model(CANONICAL)
        cls.kappa_model = load_model({**CANONICAL, "kappa": 0.5})
        cls.planar = RateModel(a=2.0, B=[[2.0, 0.5], [0.5, 1.0]], theta=[0.5, -0.5], c=0.5)

    # --------- evaluation ----------
    def test_rate_at_points(self):
        assert eval_R(self.model, [0.0], 0.0) == pytest.approx(1.0)
        assert eval_R(self.model, [0.5], 0.75) == pytest.approx(0.0)
        values = eval_R(self.model, np.array([[0.0], [1.0], [2.0]]), 0.5)
        assert np.allclose(values, [0.5, -0.5, -3.5])

    def test_derivatives(self):
        assert np.allclose(eval_grad_x_R(self.model, [0.5], 0.2), [-1.0])
        assert np.allclose(eval_hess_x_R(self.model, [0.5], 0.2), [[-2.0]])
        assert eval_dI_R(self.model, [0.3], 0.1) == pytest.approx(-1.0)
        assert eval_dI_R(self.kappa_model, [1.0], 0.1) == pytest.approx(-1.5)
        assert np.allclose(eval_hess_x_R(self.kappa_model, [0.0], 1.0), [[-3.0]])

    def test_psi(self):
        poly = load_model({**CANONICAL, "psi": {"kind": "poly", "coefficients": [1.0, 0.0, 0.5]}})
        assert eval_psi(self.model, [3.0]) == pytest.approx(1.0)
        assert eval_psi(poly, [2.0]) == pytest.approx(3.0)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidArgumentError):
            eval_R(self.model, [float("nan")], 0.0)
        with pytest.raises(InvalidArgumentError):
            eval_R(self.model, [0.0], -0.1)
        with pytest.raises(InvalidArgumentError):
            load_model({**CANONICAL, "psi": {"kind": "const", "value": 0.0}})
        with pytest.raises(InvalidArgumentError):
            load_model({"a": 1.0, "B": [[1.0]], "theta": [0.0]})

    def test_resource_ceiling(self):
        assert resource_ceiling(self.model) == pytest.approx(1.0)
        assert resource_ceiling(self.kappa_model) == pytest.approx(1.0)
        assert resource_ceiling(self.planar) == pytest.approx(4.0)
        assert math.isinf(load_model({**CANONICAL, "c": 0.0}).resource_ceiling)

    # --------- root of R(x, .) ----------
    def test_root_closed_form(self):
        assert solve_I_for_zero(self.model, [0.5]) == pytest.approx(0.75, abs=1e-12)
        assert solve_I_for_zero(self.model, [0.0]) == pytest.approx(1.0, abs=1e-12)

    def test_root_with_selection_coupling(self):
        # 0.75 - 1.125 I = 0 at x = 0.5
        assert solve_I_for_zero(self.kappa_model, [0.5]) == pytest.approx(0.75 / 1.125, abs=1e-12)
        root = solve_I_for_zero(self.planar, [0.7, -0.2])
        assert abs(eval_R(self.planar, [0.7, -0.2], root)) <= 1e-12

    def test_root_outside_viable_region(self):
        with pytest.raises(NoPositiveRootError):
            solve_I_for_zero(self.model, [1.5])

    def test_root_tolerance_not_reachable(self):
        with pytest.raises(InvariantViolationError):
            solve_I_for_zero(self.model, [0.2], tol=-1.0)

    # --------- hypotheses ----------
    def test_canonical_family_is_admissible(self):
        report = validate_hypotheses(self.model, *BOX)
        assert report.admissible, report.failures()
        assert report.value("K1_upper") == pytest.approx(1.0)
        assert report.value("K1_lower") == pytest.approx(1.0)
        assert report.value("I_M") == pytest.approx(1.0)
        assert report.worst_violation is None

    def test_curvature_bounds_with_kappa(self):
        K1_upper, K1_lower, top = curvature_bounds(self.kappa_model)
        assert (K1_upper, K1_lower, top) == pytest.approx((1.0, 1.5, 1.0))
        assert validate_hypotheses(self.kappa_model, *BOX).admissible

    def test_zero_resource_sensitivity_fails(self):
        report = validate_hypotheses(load_model({**CANONICAL, "c": 0.0}), *BOX, I_range=(0.0, 1.0))
        assert not report.admissible
        assert "K2_upper" in report.failures()
        assert "monotone_in_I" in report.failures()

    def test_indefinite_selection_fails(self):
        model = RateModel(a=1.0, B=[[1.0, 0.0], [0.0, -0.5]], theta=[0.0, 0.0], c=1.0)
        report = validate_hypotheses(model, [-2.0, -2.0], [2.0, 2.0])
        assert "K1_upper" in report.failures()
        assert report.to_dict()["admissible"] is False

    def test_hypothesis_sampling_is_seeded(self):
        first = validate_hypotheses(self.planar, [-1.0, -1.0], [1.0, 1.0], seed=7).to_dict()
        second = validate_hypotheses(self.planar, [-1.0, -1.0], [1.0, 1.0], seed=7).to_dict()
        assert first == second

    # --------- initial data ----------
    def test_initial_data_checks(self):
        spec = GridSpec([-4.0], [4.0], [161])
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.75 / math.sqrt(math.pi), spec)
        assert init.I0 == pytest.approx(0.75)
        assert validate_initial_data(self.model, init, spec).admissible

    def test_shifted_initial_data_fails(self):
        spec = GridSpec([-4.0], [4.0], [161])
        init = initial_from_quadratic(self.model, [0.5], [[1.0]], 0.4, spec, offset=-0.1)
        report = validate_initial_data(self.model, init, spec)
        assert report.failures() == ["max_u0_zero"]
