import numpy as np
import pytest

from robustdrm.envs import FiniteMdp
from robustdrm.grids import (
    GridFunction,
    cvar_distortion,
    distortion_risk,
    grid_norm,
    isotonic_project,
    mean_distortion,
)
from robustdrm.oracles import (
    OracleReport,
    brute_isotonic,
    discrete_quantile,
    enumerate_policies,
    exact_dp,
    finite_diff,
    numeric_worstcase,
)
from robustdrm.verify import random_monotone_distortion, random_quantile
from robustdrm.worstcase import SetKind, UncertaintySet, shifted_robust_risk


class TestBruteIsotonic:
    def test_monotone_input_is_identity(self):
        v = np.array([0.0, 0.5, 0.5, 2.0])
        assert np.allclose(brute_isotonic(GridFunction(v)).values, v)

    def test_reverse_sorted_pools_to_mean(self):
        v = np.array([3.0, 2.0, 1.0, 0.0])
        assert np.allclose(brute_isotonic(GridFunction(v)).values, 1.5)

    def test_matches_pava_on_random_vectors(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 9))
            v = rng.normal(size=n)
            fast = isotonic_project(GridFunction(v)).values
            brute = brute_isotonic(GridFunction(v)).values
            assert np.max(np.abs(fast - brute)) < 1e-10

    def test_matches_exhaustive_minimization_length8(self, rng):
        # independent check against direct minimisation over all partitions
        for _ in range(30):
            v = rng.normal(size=8)
            fast = isotonic_project(GridFunction(v)).values
            brute = brute_isotonic(GridFunction(v)).values
            assert np.sum((fast - v) ** 2) <= np.sum((brute - v) ** 2) + 1e-12
            assert np.max(np.abs(fast - brute)) < 1e-10

    def test_size_guard(self):
        with pytest.raises(ValueError):
            brute_isotonic(GridFunction(np.zeros(13)))


class TestFiniteDiff:
    def test_quadratic_is_exact(self):
        def f(x):
            return float(x[0] ** 2 + 3.0 * x[1] ** 2 - x[0] * x[1])

        x = np.array([0.7, -1.2])
        grad = finite_diff(f, x, h=1e-6)
        assert np.allclose(grad, [2 * 0.7 - (-1.2), 6 * (-1.2) - 0.7], atol=1e-6)

    def test_nonfinite_probe_raises(self):
        def f(x):
            return float("nan")

        with pytest.raises(ValueError):
            finite_diff(f, np.zeros(1))


class TestNumericWorstCase:
    def test_zero_budget_is_plain_risk(self, rng):
        f = random_quantile(rng, 100)
        g = random_monotone_distortion(rng, 100)
        val = numeric_worstcase(f, g, UncertaintySet(0.0))
        assert val == pytest.approx(distortion_risk(g, f), abs=1e-8)

    def test_matches_shift_form_on_monotone_weights(self, rng):
        for i in range(3):
            f = random_quantile(rng, 150)
            g = random_monotone_distortion(rng, 150)
            eps = float(rng.uniform(0.05, 0.4))
            val = numeric_worstcase(f, g, UncertaintySet(eps, SetKind.WASSERSTEIN), seed=i)
            assert val == pytest.approx(shifted_robust_risk(f, g, eps), abs=1e-5)

    def test_size_guard(self, rng):
        f = random_quantile(rng, 2100)
        g = random_monotone_distortion(rng, 2100)
        with pytest.raises(ValueError):
            numeric_worstcase(f, g, UncertaintySet(0.1))


class TestDiscreteQuantile:
    def test_two_atom_distribution(self):
        q = discrete_quantile(np.array([1.0, 0.0]), np.array([0.5, 0.5]), 4)
        assert np.allclose(q.values, [0.0, 0.0, 1.0, 1.0])

    def test_mass_ordering(self):
        q = discrete_quantile(np.array([5.0, -1.0, 2.0]), np.array([0.2, 0.5, 0.3]), 10)
        assert np.allclose(q.values, [-1, -1, -1, -1, -1, 2, 2, 2, 5, 5])

    def test_bad_probs_rejected(self):
        with pytest.raises(ValueError):
            discrete_quantile(np.array([0.0, 1.0]), np.array([0.7, 0.7]), 4)


def _two_state_chain():
    transitions = np.array([[[0.5, 0.5]], [[0.3, 0.7]]])
    costs = np.array([[[0.0, 1.0]], [[2.0, 3.0]]])
    return FiniteMdp(transitions=transitions, costs=costs, horizon=1)


class TestExactDp:
    def test_hand_computed_nested_tail_mean(self):
        # by hand: V1 = [1, 3]; costs-to-go at t=0 from state 0 are
        # {1 w.p. 1/2, 4 w.p. 1/2}; the top-half mean is 4.
        mdp = _two_state_chain()
        gamma = cvar_distortion(0.5, 1000)
        tables = exact_dp(mdp, gamma, UncertaintySet(0.0),
                          policy=np.zeros((2, 2), dtype=np.int64))
        assert tables.v[1, 0] == pytest.approx(1.0, abs=1e-12)
        assert tables.v[1, 1] == pytest.approx(3.0, abs=1e-12)
        assert tables.v[0, 0] == pytest.approx(4.0, abs=1e-12)

    def test_risk_neutral_reduction(self, rng):
        transitions = rng.dirichlet(np.ones(3), size=(3, 2))
        costs = rng.normal(size=(3, 2, 3))
        mdp = FiniteMdp(transitions=transitions, costs=costs, horizon=2)
        tables = exact_dp(mdp, mean_distortion(800), UncertaintySet(0.0))
        v = np.zeros(3)
        for _ in range(3):
            q = np.einsum("sak,sak->sa", transitions, costs + v[None, None, :])
            v = q.min(axis=1)
        assert np.allclose(tables.v[0], v, atol=1e-9)

    def test_single_period_equals_one_step_risk(self, rng):
        from robustdrm.worstcase import robust_risk

        transitions = rng.dirichlet(np.ones(2), size=(1, 2))
        costs = rng.normal(size=(1, 2, 2))
        mdp = FiniteMdp(transitions=transitions, costs=costs, horizon=0)
        gamma = cvar_distortion(0.2, 600)
        spec = UncertaintySet(0.15, SetKind.WASSERSTEIN_MOMENTS)
        tables = exact_dp(mdp, gamma, spec)
        direct = robust_risk(discrete_quantile(costs[0, 1], transitions[0, 1], 600),
                             gamma, spec)
        assert tables.q[0, 0, 1] == pytest.approx(direct, abs=1e-12)

    def test_enumeration_certifies_bellman_optimum(self, rng):
        transitions = rng.dirichlet(np.ones(2), size=(2, 2))
        costs = rng.normal(size=(2, 2, 2))
        mdp = FiniteMdp(transitions=transitions, costs=costs, horizon=3)
        gamma = cvar_distortion(0.3, 500)
        spec = UncertaintySet(0.05, SetKind.WASSERSTEIN_MOMENTS)
        best, _, values = enumerate_policies(mdp, gamma, spec)
        tables = exact_dp(mdp, gamma, spec)
        assert tables.v[0, mdp.initial_state] == pytest.approx(best, abs=1e-9)
        assert best <= values.min() + 1e-12

    def test_mixture_policy_evaluation(self, rng):
        transitions = rng.dirichlet(np.ones(2), size=(2, 2))
        costs = rng.normal(size=(2, 2, 2))
        mdp = FiniteMdp(transitions=transitions, costs=costs, horizon=1)
        gamma = cvar_distortion(0.3, 500)
        spec = UncertaintySet(0.0)
        mix = np.full((2, 2, 2), 0.5)
        tables = exact_dp(mdp, gamma, spec, policy=mix)
        assert np.all(np.isfinite(tables.v))

    def test_size_guard(self, rng):
        transitions = rng.dirichlet(np.ones(12), size=(12, 4))
        costs = rng.normal(size=(12, 4, 12))
        mdp = FiniteMdp(transitions=transitions, costs=costs, horizon=10)
        with pytest.raises(ValueError):
            exact_dp(mdp, cvar_distortion(0.3, 100), UncertaintySet(0.0))


class TestOracleReport:
    def test_pass_fail(self):
        ok = OracleReport("x", 1.0, 1.0 + 1e-7, 1e-6)
        bad = OracleReport("y", 1.0, 1.1, 1e-6)
        assert ok.passed and not bad.passed
        row = ok.row()
        assert row["quantity"] == "x" and row["passed"]
