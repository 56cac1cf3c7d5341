import numpy as np
import pytest

from robustdrm.grids import (
    QuantileFunction,
    cvar_distortion,
    distortion_risk,
    grid_nodes,
    lower_tail_distortion,
)
from robustdrm.scoring import (
    CostPartition,
    alpha_beta_distortion,
    crps,
    score_mean,
    score_var,
    score_var_cvar,
)
from robustdrm.verify import random_quantile


class TestPointScores:
    def test_score_mean_values(self):
        assert score_mean(0.0, 0.0) == 0.0
        assert score_mean(1.0, 3.0) == 4.0

    def test_score_var_zero_at_match(self):
        assert score_var(1.3, 1.3, 0.7) == 0.0

    def test_score_var_median_symmetry(self):
        assert score_var(0.0, 1.0, 0.5) == pytest.approx(0.5)
        assert score_var(2.0, 1.0, 0.5) == pytest.approx(0.5)

    def test_score_var_invalid_alpha(self):
        with pytest.raises(ValueError):
            score_var(0.0, 1.0, 1.0)

    def test_pair_score_zero_case(self):
        assert score_var_cvar(0.0, 0.0, 0.0, 0.5, 1.0) == pytest.approx(0.0)

    def test_pair_score_domain_checks(self):
        with pytest.raises(ValueError):
            score_var_cvar(2.0, 1.0, 0.0, 0.5, 1.0)  # ordering
        with pytest.raises(ValueError):
            score_var_cvar(0.0, 0.5, -3.0, 0.5, 1.0)  # z + c <= 0

    def test_pair_score_prefers_truth_to_shifts(self, rng):
        z = rng.uniform(0.0, 1.0, 20_000)
        alpha, c = 0.9, 1.0
        truth = (0.9, 0.95)

        def avg(a1, a2):
            return float(np.mean([score_var_cvar(a1, a2, float(x), alpha, c) for x in z[:4000]]))

        base = avg(*truth)
        for delta in (-0.1, 0.1):
            assert base <= avg(truth[0] + delta, truth[1] + delta)


class TestCrps:
    def test_step_forecast_at_observation_scores_zero(self):
        part = CostPartition(np.linspace(0.0, 1.0, 11))
        forecast = (part.points >= 0.35).astype(float)
        assert crps(forecast, 0.35, part) == pytest.approx(0.0, abs=1e-12)

    def test_linear_forecast_quadrature(self):
        part = CostPartition(np.linspace(0.0, 1.0, 1000))
        assert crps(part.points.copy(), 0.0, part) == pytest.approx(1.0 / 3.0, abs=1e-3)

    def test_crps_nonnegative(self, rng):
        part = CostPartition(np.linspace(-2.0, 2.0, 101))
        forecast = np.clip(np.sort(rng.uniform(size=101)), 0.0, 1.0)
        assert crps(forecast, float(rng.normal()), part) >= 0.0

    def test_empirical_cdf_beats_constant_forecasts(self, rng):
        part = CostPartition(np.linspace(-0.1, 1.1, 301))
        samples = rng.uniform(size=5000)
        ecdf = np.searchsorted(np.sort(samples), part.points, side="right") / samples.size
        scored = samples[:1000]
        mean_ecdf = float(np.mean([crps(ecdf, float(z), part) for z in scored]))
        for const in (0.2, 0.5, 0.8):
            flat = np.full(part.size, const)
            mean_flat = float(np.mean([crps(flat, float(z), part) for z in scored]))
            assert mean_ecdf < mean_flat

    def test_length_mismatch_errors(self):
        part = CostPartition(np.linspace(0.0, 1.0, 5))
        with pytest.raises(ValueError):
            crps(np.zeros(4), 0.5, part)


class TestPartition:
    def test_requires_increasing_points(self):
        with pytest.raises(ValueError):
            CostPartition(np.array([0.0, 0.0, 1.0]))

    def test_covers(self):
        part = CostPartition(np.linspace(0.0, 1.0, 5))
        assert part.covers(np.array([0.2, 0.9]))
        assert not part.covers(np.array([1.2]))


class TestAlphaBetaWeights:
    def test_reduces_to_upper_tail_weights(self):
        n = 1000
        g = alpha_beta_distortion(0.0, 0.3, 0.3, n)
        ref = cvar_distortion(0.3, n)
        assert np.allclose(g.values, ref.values, atol=1e-12)
        assert g.nondecreasing

    def test_full_lower_tail_case(self):
        n = 500
        g = alpha_beta_distortion(1.0, 0.5, 0.5, n)
        # eta = 0.5; all mass on levels below 0.5
        assert g.values.mean() == pytest.approx(1.0, abs=1e-12)
        assert np.all(g.values[grid_nodes(n) >= 0.5] == 0.0)
        assert not g.nondecreasing

    def test_ordering_violation_rejected(self):
        with pytest.raises(ValueError):
            alpha_beta_distortion(0.5, 0.7, 0.3, 100)

    def test_tail_mean_recombination_identity(self, rng):
        n = 800
        for _ in range(10):
            p = float(rng.uniform(0.0, 1.0))
            alpha = float(rng.uniform(0.05, 0.5))
            beta = float(rng.uniform(alpha, 0.95))
            f = random_quantile(rng, n)
            gamma = alpha_beta_distortion(p, alpha, beta, n)
            eta = p * alpha + (1.0 - p) * (1.0 - beta)
            combined = 0.0
            if p > 0.0:
                lte = distortion_risk(lower_tail_distortion(alpha, n), f)
                combined += (p * alpha / eta) * lte
            if p < 1.0:
                tail = distortion_risk(cvar_distortion(beta, n), f)
                combined += ((1.0 - p) * (1.0 - beta) / eta) * tail
            assert combined == pytest.approx(distortion_risk(gamma, f), abs=1e-8)
