import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from abdm.core import TaskId
from abdm.costs import (
    LV_RESCALE_RANGES,
    CostSpec,
    cost_bvep,
    cost_fn_for,
    cost_linear_gaussian,
    cost_lv_marginal,
    cost_sir,
    cost_toy,
    incurred_cost,
)


class TestToyCost:
    def test_zero_at_matching_action(self):
        # theta = 2.5 maps to 5; action 50 maps to 5.
        assert cost_toy(2.5, 50.0) == 0.0

    def test_asymptote(self):
        assert cost_toy(5.0, 0.0) > 1.0 - 1e-12

    def test_hand_value_theta5_a50(self):
        # Independent evaluation: t = 10, a~ = 5, width = 2 / 10.1,
        # exponent = -25 / width^2 ~ -637.56, so the cost saturates at 1.
        width = 2.0 / (10.0 + 0.1)
        expected = 1.0 - math.exp(-((10.0 - 5.0) ** 2) / width**2)
        assert expected == 1.0
        assert cost_toy(5.0, 50.0) == expected

    def test_width_shrinks_with_theta(self):
        # Same action offset costs more at larger theta.
        low = cost_toy(1.0, 10.0 + 5.0)  # t=2, offset 0.5
        high = cost_toy(4.0, 40.0 + 5.0)  # t=8, offset 0.5
        assert high > low

    @given(st.floats(0.0, 5.0), st.floats(0.0, 100.0))
    def test_bounds(self, theta, a):
        c = float(cost_toy(theta, a))
        assert 0.0 <= c < 1.0 + 1e-15

    def test_monotone_in_distance(self):
        theta = 2.0
        base = theta * 20.0  # matching action
        offsets = np.linspace(0.0, 60.0, 25)
        up = [float(cost_toy(theta, min(base + o, 100.0))) for o in offsets]
        assert np.all(np.diff(up) >= -1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cost_toy(6.0, 50.0)
        with pytest.raises(ValueError):
            cost_toy(2.0, 101.0)


class TestLinearGaussianCost:
    def test_zero_at_matching_action(self):
        # theta_0 = 0 is the prior midpoint, mapping to 5; action 50 too.
        theta = np.zeros(10)
        assert cost_linear_gaussian(theta, 50.0) == 0.0

    def test_widest_mid_range(self):
        # Fixed rescaled offset 1: cheap at t = 5, expensive at t = 9.
        q = norm.ppf(0.999)
        theta_mid = np.zeros(10)
        theta_high = np.zeros(10)
        theta_high[0] = 0.8 * q  # rescales to 9
        c_mid = float(cost_linear_gaussian(theta_mid, 60.0))
        c_high = float(cost_linear_gaussian(theta_high, 100.0))
        assert c_mid < c_high

    def test_hand_value(self):
        # t = 5, a~ = 5.5, width = 0.5 / 0.1 = 5: c = 1 - exp(-0.25 / 25).
        expected = 1.0 - math.exp(-0.25 / 25.0)
        assert expected == pytest.approx(0.009950166250831893, abs=1e-15)
        assert float(cost_linear_gaussian(np.zeros(10), 55.0)) == pytest.approx(expected, abs=1e-15)

    def test_only_first_coordinate_matters(self):
        a = np.zeros(10)
        b = np.zeros(10)
        b[1:] = 7.7
        assert cost_linear_gaussian(a, 30.0) == cost_linear_gaussian(b, 30.0)


class TestLVCost:
    def test_zero_at_matching_action(self):
        lo, hi = LV_RESCALE_RANGES[1]
        theta = np.array([1.0, lo + 0.3 * (hi - lo), 1.0, 0.05])
        assert float(cost_lv_marginal(theta, 30.0, 1)) == 0.0

    def test_narrower_at_large_rates(self):
        lo, hi = LV_RESCALE_RANGES[0]
        th_low = np.array([lo + 0.2 * (hi - lo), 0.05, 1.0, 0.05])
        th_high = np.array([lo + 0.8 * (hi - lo), 0.05, 1.0, 0.05])
        c_low = float(cost_lv_marginal(th_low, 25.0, 0))  # offset 0.5
        c_high = float(cost_lv_marginal(th_high, 85.0, 0))
        assert c_high > c_low

    def test_hand_value_marginal2(self):
        # t = 4, a~ = 6, width = 3 / 4.1: c = 1 - exp(-4 / width^2).
        lo, hi = LV_RESCALE_RANGES[2]
        theta = np.array([1.0, 0.05, lo + 0.4 * (hi - lo), 0.05])
        width = 3.0 / (4.0 + 0.1)
        expected = 1.0 - math.exp(-4.0 / width**2)
        assert expected == pytest.approx(0.9994307046051082, abs=1e-12)
        assert float(cost_lv_marginal(theta, 60.0, 2)) == pytest.approx(expected, abs=1e-12)

    def test_bad_index(self):
        with pytest.raises(ValueError):
            cost_lv_marginal(np.ones(4), 10.0, 4)


class TestSIRCost:
    def test_zero_at_matching_action(self):
        # beta = gamma gives r = 1; action 10 rescales to 1.
        assert float(cost_sir(0.4, 0.4, 10.0)) == 0.0

    def test_most_sensitive_at_unit_ratio(self):
        c_near_one = float(cost_sir(0.4, 0.4, 13.0))  # r=1, offset 0.3
        c_mid = float(cost_sir(2.4, 0.4, 63.0))  # r=6, offset 0.3
        assert c_near_one > c_mid

    def test_hand_value(self):
        # r = 1, a~ = 1.2, width = 2 / 10.1: c = 1 - exp(-0.04 / width^2).
        width = 2.0 / (10.0 + 0.1)
        expected = 1.0 - math.exp(-0.04 / width**2)
        assert expected == pytest.approx(0.6394411175180241, abs=1e-15)
        assert float(cost_sir(0.4, 0.4, 12.0)) == pytest.approx(expected, abs=1e-15)

    def test_ratio_clamped(self):
        assert float(cost_sir(8.0, 0.4, 100.0)) == 0.0  # r = 20 clamps to 10 = a~

    def test_nonpositive_rates(self):
        with pytest.raises(ValueError):
            cost_sir(0.0, 0.4, 10.0)


class TestBVEPCost:
    def test_correct_zone_is_free(self):
        assert float(cost_bvep(-1.0, 2)) == 0.0  # EZ

    def test_misclassification_costs_one(self):
        assert float(cost_bvep(-1.0, 0)) == 1.0

    def test_boundary_belongs_to_hz(self):
        assert float(cost_bvep(-3.05, 0)) == 0.0

    def test_invalid_action(self):
        with pytest.raises(ValueError):
            cost_bvep(-1.0, 3)


class TestIncurredCost:
    def test_toy_optimum_matches_grid_minimum(self):
        spec = CostSpec(TaskId.TOY)
        grid = np.linspace(0.0, 100.0, 1000)
        vals = [incurred_cost(np.array([2.0]), a, spec) for a in grid]
        # The exact optimum a=40 sits between grid points; the grid minimum
        # matches it to within one grid step of cost resolution.
        assert incurred_cost(np.array([2.0]), 40.0, spec) == 0.0
        assert min(vals) < 1e-3
        assert abs(grid[int(np.argmin(vals))] - 40.0) <= 100.0 / 999.0

    def test_bvep_dispatch(self):
        spec = CostSpec(TaskId.BVEP)
        assert incurred_cost(np.array([-4.0, 20.0, -2.0, 3.0]), 0, spec) == 0.0

    def test_lv_dispatch_identity(self):
        spec = CostSpec(TaskId.LOTKA_VOLTERRA, marginal_index=2)
        theta = np.array([0.9, 0.05, 0.8, 0.04])
        assert incurred_cost(theta, 37.0, spec) == float(cost_lv_marginal(theta, 37.0, 2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            incurred_cost(np.ones(3), 10.0, CostSpec(TaskId.SIR))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            CostSpec(TaskId.TOY, epsilon=0.0)
        with pytest.raises(ValueError):
            CostSpec(TaskId.LOTKA_VOLTERRA, marginal_index=5)


class TestVectorizedCostFns:
    @pytest.mark.parametrize("task", list(TaskId))
    def test_broadcasts_samples_against_action_grid(self, task):
        spec = CostSpec(task)
        fn = cost_fn_for(spec)
        rng = np.random.default_rng(0)
        from abdm.simulators import sample_prior

        thetas = np.stack([sample_prior(task, rng) for _ in range(7)])
        actions = np.array([0, 1, 2]) if task.discrete_actions else np.linspace(0, 100, 5)
        vals = fn(thetas[:, None, :], actions)
        assert vals.shape == (7, len(actions))
        assert np.all((vals >= 0.0) & (vals <= 1.0))

    def test_matches_scalar_calls(self):
        spec = CostSpec(TaskId.SIR)
        fn = cost_fn_for(spec)
        thetas = np.array([[0.4, 0.2], [0.3, 0.3]])
        actions = np.array([15.0, 40.0])
        vals = fn(thetas[:, None, :], actions)
        for i in range(2):
            for j in range(2):
                assert vals[i, j] == float(cost_sir(thetas[i, 0], thetas[i, 1], actions[j]))
