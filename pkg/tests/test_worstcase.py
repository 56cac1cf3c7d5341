import math

import numpy as np
import pytest

from robustdrm.grids import (
    QuantileFunction,
    cvar_distortion,
    distortion_risk,
    grid_nodes,
    grid_norm,
    inner_product,
    mean_distortion,
    shift,
    wasserstein2,
)
from robustdrm.verify import bump_distortion, random_monotone_distortion, random_quantile
from robustdrm.worstcase import (
    BracketingError,
    DegenerateInputError,
    NonMonotoneWeightsError,
    SetKind,
    UncertaintySet,
    robust_risk,
    shifted_robust_risk,
    worst_case_moments,
    worst_case_wasserstein,
)


def _uniform_case(n=1000):
    return QuantileFunction(grid_nodes(n)), cvar_distortion(0.5, n)


class TestWassersteinBall:
    def test_zero_budget_returns_input(self):
        f, g = _uniform_case()
        sol = worst_case_wasserstein(f, g, 0.0)
        assert sol.worst_quantile is f
        assert sol.risk_value == pytest.approx(0.75, abs=1e-12)

    def test_monotone_weights_match_explicit_shift(self, rng):
        for _ in range(5):
            n = 500
            f = random_quantile(rng, n)
            g = random_monotone_distortion(rng, n)
            eps = float(rng.uniform(0.02, 0.5))
            sol = worst_case_wasserstein(f, g, eps)
            expected = f.values + eps * g.values / grid_norm(g)
            assert np.max(np.abs(sol.worst_quantile.values - expected)) < 1e-8

    def test_uniform_reference_risk_value(self):
        f, g = _uniform_case()
        sol = worst_case_wasserstein(f, g, 0.1)
        assert sol.risk_value == pytest.approx(0.75 + 0.1 * math.sqrt(2.0), abs=1e-8)

    def test_binding_constraint(self, rng):
        f = random_quantile(rng, 400)
        g = bump_distortion(0.6, 0.1, 400)
        sol = worst_case_wasserstein(f, g, 0.2)
        assert abs(wasserstein2(sol.worst_quantile, f) - 0.2) < 1e-9

    def test_risk_never_below_plain(self, rng):
        f = random_quantile(rng, 300)
        g = bump_distortion(0.4, 0.15, 300)
        sol = worst_case_wasserstein(f, g, 0.05)
        assert sol.risk_value >= distortion_risk(g, f) - 1e-12

    def test_unbracketable_budget_raises(self):
        f, g = _uniform_case(100)
        with pytest.raises(BracketingError):
            worst_case_wasserstein(f, g, 1e12)


class TestShiftedRisk:
    def test_zero_budget_is_plain_risk(self, rng):
        f = random_quantile(rng, 200)
        g = random_monotone_distortion(rng, 200)
        assert shifted_robust_risk(f, g, 0.0) == pytest.approx(distortion_risk(g, f))

    def test_uniform_weights_shift_by_epsilon(self, rng):
        n = 300
        f = random_quantile(rng, n)
        g = mean_distortion(n)
        expected = f.values.mean() + 0.2
        assert shifted_robust_risk(f, g, 0.2) == pytest.approx(expected, abs=1e-12)

    def test_agrees_with_bisection_solver(self):
        f, g = _uniform_case()
        assert shifted_robust_risk(f, g, 0.1) == pytest.approx(
            worst_case_wasserstein(f, g, 0.1).risk_value, abs=1e-8)

    def test_rejects_non_monotone_weights(self):
        f = QuantileFunction(grid_nodes(100))
        with pytest.raises(NonMonotoneWeightsError):
            shifted_robust_risk(f, bump_distortion(0.5, 0.1, 100), 0.1)


class TestMomentPinned:
    def test_reference_degenerate_case(self):
        f, g = _uniform_case()
        sol = worst_case_moments(f, g, 0.2)
        # threshold: eps^2 > 2 sigma^2 (1 - cov / (sigma sigma_gamma)) ~ 0.0223
        assert sol.degenerate
        assert sol.lambda_star == 0.0
        assert sol.risk_value == pytest.approx(0.788675, abs=1e-4)
        assert sol.risk_value == pytest.approx(sol.mu + math.sqrt(sol.sigma2 * sol.sigma_gamma2),
                                               abs=1e-12)

    def test_reference_binding_case_constraints(self):
        f, g = _uniform_case()
        sol = worst_case_moments(f, g, 0.05)
        assert not sol.degenerate
        worst = sol.worst_quantile
        assert abs(wasserstein2(worst, f) - 0.05) < 1e-6
        assert worst.values.mean() == pytest.approx(sol.mu, abs=1e-8)
        assert (worst.values ** 2).mean() == pytest.approx((f.values ** 2).mean(), abs=1e-6)

    def test_threshold_value_matches_formula(self):
        f, g = _uniform_case()
        sol = worst_case_moments(f, g, 0.05)
        cov = inner_product(f, g) - sol.mu
        threshold = 2.0 * sol.sigma2 * (1.0 - cov / math.sqrt(sol.sigma2 * sol.sigma_gamma2))
        assert threshold == pytest.approx(0.022329, abs=1e-5)

    def test_tiny_budget_recovers_input(self, rng):
        f = random_quantile(rng, 400)
        g = random_monotone_distortion(rng, 400)
        sol = worst_case_moments(f, g, 1e-8)
        assert np.max(np.abs(sol.worst_quantile.values - f.values)) < 1e-5
        assert sol.risk_value == pytest.approx(distortion_risk(g, f), abs=1e-5)

    def test_internal_multiplier_identities(self, rng):
        for _ in range(10):
            f = random_quantile(rng, 300)
            g = random_monotone_distortion(rng, 300)
            eps = float(rng.uniform(0.01, 0.4))
            sol = worst_case_moments(f, g, eps)
            if sol.degenerate:
                continue
            cov = inner_product(f, g) - sol.mu
            lhs = sol.b_lambda * sol.k
            rhs = sol.lambda_star * sol.sigma2 + cov
            assert lhs == pytest.approx(rhs, abs=1e-8)
            assert sol.a_lambda == pytest.approx(
                (sol.lambda_star * sol.mu + 1.0) - sol.b_lambda * sol.mu, abs=1e-8)
            assert sol.delta >= 0.0

    def test_degenerate_branch_fires_exactly_at_threshold(self, rng):
        for _ in range(10):
            f = random_quantile(rng, 200)
            g = random_monotone_distortion(rng, 200)
            probe = worst_case_moments(f, g, 0.01)
            cov = inner_product(f, g) - probe.mu
            threshold = 2.0 * probe.sigma2 * (
                1.0 - cov / math.sqrt(probe.sigma2 * probe.sigma_gamma2))
            if threshold <= 0.0:
                continue
            below = math.sqrt(threshold) * 0.95
            above = math.sqrt(threshold) * 1.05
            assert not worst_case_moments(f, g, below).degenerate
            assert worst_case_moments(f, g, above).degenerate

    def test_small_budget_multiplier_ratio_vanishes(self, rng):
        for _ in range(5):
            f = random_quantile(rng, 300)
            g = random_monotone_distortion(rng, 300)
            sol = worst_case_moments(f, g, 1e-4)
            if sol.degenerate:
                continue
            ratio = (sol.b_lambda - sol.lambda_star) / sol.b_lambda
            assert abs(ratio) < 1e-2

    def test_degenerate_inputs_rejected(self):
        n = 100
        flat = QuantileFunction(np.zeros(n))
        g = cvar_distortion(0.3, n)
        with pytest.raises(DegenerateInputError):
            worst_case_moments(flat, g, 0.1)
        f = QuantileFunction(grid_nodes(n))
        with pytest.raises(DegenerateInputError):
            worst_case_moments(f, mean_distortion(n), 0.1)

    def test_non_monotone_weights_rejected(self):
        f = QuantileFunction(grid_nodes(100))
        with pytest.raises(NonMonotoneWeightsError):
            worst_case_moments(f, bump_distortion(0.5, 0.1, 100), 0.1)


class TestRobustRiskDispatch:
    def test_zero_budget(self, rng):
        f = random_quantile(rng, 200)
        g = random_monotone_distortion(rng, 200)
        spec = UncertaintySet(0.0, SetKind.WASSERSTEIN_MOMENTS)
        assert robust_risk(f, g, spec) == pytest.approx(distortion_risk(g, f))

    def test_ball_monotone_uses_shift(self, rng):
        f = random_quantile(rng, 200)
        g = random_monotone_distortion(rng, 200)
        spec = UncertaintySet(0.12, SetKind.WASSERSTEIN)
        assert robust_risk(f, g, spec) == pytest.approx(
            shifted_robust_risk(f, g, 0.12), abs=1e-12)

    def test_monotone_in_epsilon(self, rng):
        for kind in (SetKind.WASSERSTEIN, SetKind.WASSERSTEIN_MOMENTS):
            f = random_quantile(rng, 200)
            g = random_monotone_distortion(rng, 200)
            risks = [robust_risk(f, g, UncertaintySet(e, kind))
                     for e in (0.0, 0.05, 0.1, 0.2, 0.4)]
            assert all(b >= a - 1e-10 for a, b in zip(risks, risks[1:]))

    def test_cash_additivity_both_kinds(self, rng):
        for kind in (SetKind.WASSERSTEIN, SetKind.WASSERSTEIN_MOMENTS):
            for _ in range(5):
                f = random_quantile(rng, 200)
                g = random_monotone_distortion(rng, 200)
                spec = UncertaintySet(float(rng.uniform(0.01, 0.3)), kind)
                m = float(rng.normal())
                assert robust_risk(shift(f, m), g, spec) == pytest.approx(
                    robust_risk(f, g, spec) + m, abs=1e-8)

    def test_cash_additivity_non_monotone_ball(self, rng):
        f = random_quantile(rng, 200)
        g = bump_distortion(0.5, 0.12, 200)
        spec = UncertaintySet(0.15, SetKind.WASSERSTEIN)
        assert robust_risk(shift(f, -0.8), g, spec) == pytest.approx(
            robust_risk(f, g, spec) - 0.8, abs=1e-8)

    def test_moment_shift_moves_mu_and_worst_case(self, rng):
        f = random_quantile(rng, 200)
        g = random_monotone_distortion(rng, 200)
        m = 0.9
        a = worst_case_moments(f, g, 0.07)
        b = worst_case_moments(shift(f, m), g, 0.07)
        assert b.mu == pytest.approx(a.mu + m, abs=1e-12)
        assert np.allclose(b.worst_quantile.values, a.worst_quantile.values + m, atol=1e-9)

    def test_pointwise_dominance_monotonicity(self, rng):
        g = bump_distortion(0.45, 0.1, 150)
        spec = UncertaintySet(0.1, SetKind.WASSERSTEIN)
        for _ in range(10):
            f = random_quantile(rng, 150)
            lift = np.sort(np.abs(rng.normal(size=150))) * 0.4
            hi = QuantileFunction(f.values + lift)
            assert robust_risk(hi, g, spec) >= robust_risk(f, g, spec) - 1e-8
