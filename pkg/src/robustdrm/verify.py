"""Verification suites: closed forms vs brute force, gradients vs differences.

Each suite returns a list of :class:`OracleReport` rows; the CLI writes them
to CSV and the acceptance tests assert they all pass.  Instance generators are
seeded so every run checks the same instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .envs import FiniteMdp
from .grids import (
    DistortionFunction,
    QuantileFunction,
    cvar_distortion,
    distortion_risk,
    grid_nodes,
    grid_norm,
    inner_product,
    isotonic_project,
    wasserstein2,
)
from .nets import ArchConfig, CdfNet, MuNet, PolicyNet, QNet
from .oracles import (
    OracleReport,
    discrete_quantile,
    enumerate_policies,
    exact_dp,
    finite_diff,
    numeric_worstcase,
)
from .scoring import CostPartition, crps, score_mean, score_var, score_var_cvar
from .worstcase import (
    SetKind,
    UncertaintySet,
    shifted_robust_risk,
    worst_case_moments,
    worst_case_wasserstein,
)

__all__ = [
    "random_quantile",
    "random_monotone_distortion",
    "bump_distortion",
    "suite_worstcase",
    "suite_gradients",
    "suite_dp",
    "suite_scoring",
    "run_suite",
    "SUITES",
    "PolicyGradientCase",
    "policy_gradient_case",
]


# ----- instance generators ------------------------------------------------


def random_quantile(rng: np.random.Generator, n: int) -> QuantileFunction:
    """Random step quantile function with a handful of atoms."""
    n_atoms = int(rng.integers(3, 12))
    atoms = np.sort(rng.normal(0.0, 1.0, n_atoms)) * rng.uniform(0.5, 2.0)
    probs = rng.dirichlet(np.ones(n_atoms))
    return discrete_quantile(atoms, probs, n)


def lattice_transitions(rng: np.random.Generator, shape: tuple[int, int, int],
                        grid_n: int) -> np.ndarray:
    """Random transition tensor whose probabilities are multiples of 1/grid_n.

    The midpoint grid represents such distributions exactly (each atom covers
    a whole number of nodes), so grid risk evaluations carry no quantisation
    error and exact-identity assertions stay tight.
    """
    s, a, s2 = shape
    out = np.empty(shape)
    for i in range(s):
        for j in range(a):
            raw = rng.multinomial(grid_n, rng.dirichlet(np.ones(s2)))
            while np.any(raw == 0):
                raw = rng.multinomial(grid_n, rng.dirichlet(np.ones(s2)))
            out[i, j] = raw / grid_n
    return out


def random_monotone_distortion(rng: np.random.Generator, n: int) -> DistortionFunction:
    """Convex mixture of upper-tail-mean weight profiles: nondecreasing, unit mass."""
    levels = rng.uniform(0.05, 0.9, size=int(rng.integers(1, 4)))
    weights = rng.dirichlet(np.ones(levels.size))
    values = np.zeros(n)
    for w, lvl in zip(weights, levels):
        values += w * cvar_distortion(float(lvl), n).values
    return DistortionFunction(values, nondecreasing=True)


def bump_distortion(center: float, width: float, n: int,
                    floor: float = 0.2) -> DistortionFunction:
    """Non-monotone weights: a Gaussian bump over a flat floor, unit grid mean."""
    u = grid_nodes(n)
    raw = floor + np.exp(-0.5 * ((u - center) / width) ** 2)
    return DistortionFunction(raw / raw.mean(), nondecreasing=False)


# ----- worst-case suite -----------------------------------------------------


def suite_worstcase(n_shift: int = 50, n_moments: int = 50, n_bump: int = 20,
                    seed: int = 2024) -> list[OracleReport]:
    """Certify the three worst-case solvers against shift forms and direct ascent."""
    rng = np.random.default_rng(seed)
    reports: list[OracleReport] = []

    # Bisection solver vs the explicit shift for nondecreasing weights.
    for i in range(n_shift):
        n = 1000
        quant = random_quantile(rng, n)
        gamma = random_monotone_distortion(rng, n)
        eps = float(rng.uniform(0.01, 0.5))
        sol = worst_case_wasserstein(quant, gamma, eps)
        closed = shifted_robust_risk(quant, gamma, eps)
        reports.append(OracleReport(
            f"ball_shift_equivalence[{i}]", sol.risk_value, closed, 1e-5))
        reports.append(OracleReport(
            f"ball_shift_binding[{i}]", wasserstein2(sol.worst_quantile, quant),
            eps, 1e-6))

    # Moment-pinned closed form vs the numeric maximiser.
    for i in range(n_moments):
        n = 200
        quant = random_quantile(rng, n)
        gamma = random_monotone_distortion(rng, n)
        eps = float(rng.uniform(0.02, 0.6))
        sol = worst_case_moments(quant, gamma, eps)
        uset = UncertaintySet(eps, SetKind.WASSERSTEIN_MOMENTS)
        oracle = numeric_worstcase(quant, gamma, uset, seed=seed + i)
        reports.append(OracleReport(
            f"moments_vs_ascent[{i}]", sol.risk_value, oracle, 1e-4))
        mu_in = float(np.mean(quant.values))
        m2_in = float(np.mean(quant.values ** 2))
        worst = sol.worst_quantile.values
        reports.append(OracleReport(
            f"moments_mean_kept[{i}]", float(np.mean(worst)), mu_in, 1e-8))
        reports.append(OracleReport(
            f"moments_second_kept[{i}]", float(np.mean(worst ** 2)), m2_in, 1e-6))
        if not sol.degenerate:
            reports.append(OracleReport(
                f"moments_ball_binding[{i}]",
                wasserstein2(sol.worst_quantile, quant), eps, 1e-6))

    # General bisection solver on non-monotone weights vs the numeric maximiser.
    for i in range(n_bump):
        n = 300
        quant = random_quantile(rng, n)
        gamma = bump_distortion(center=float(rng.uniform(0.25, 0.75)),
                                width=float(rng.uniform(0.05, 0.2)), n=n)
        eps = float(rng.uniform(0.02, 0.4))
        sol = worst_case_wasserstein(quant, gamma, eps)
        uset = UncertaintySet(eps, SetKind.WASSERSTEIN)
        oracle = numeric_worstcase(quant, gamma, uset, seed=seed + 7 * i)
        reports.append(OracleReport(
            f"bump_vs_ascent[{i}]", sol.risk_value, oracle, 1e-4))
        reports.append(OracleReport(
            f"bump_binding[{i}]", wasserstein2(sol.worst_quantile, quant), eps, 1e-6))
    return reports


# ----- gradient suite -------------------------------------------------------


def _net_grad_report(name: str, module: torch.nn.Module, inputs: tuple,
                     h: float = 1e-5) -> OracleReport:
    """Worst relative gap between autograd and central differences."""
    params = list(module.parameters())
    flat = torch.cat([p.detach().reshape(-1) for p in params]).numpy()
    shapes = [p.shape for p in params]

    def assign(vec: np.ndarray) -> None:
        offset = 0
        with torch.no_grad():
            for p, shape in zip(params, shapes):
                size = int(np.prod(shape))
                p.copy_(torch.as_tensor(vec[offset:offset + size]).reshape(shape))
                offset += size

    def loss_value(vec: np.ndarray) -> float:
        assign(vec)
        with torch.no_grad():
            out = module(*inputs)
            if isinstance(out, tuple):
                out = out[0] + out[1]
            return float((out ** 2).mean())

    assign(flat)
    out = module(*inputs)
    if isinstance(out, tuple):
        out = out[0] + out[1]
    loss = (out ** 2).mean()
    grads = torch.autograd.grad(loss, params)
    auto = torch.cat([g.reshape(-1) for g in grads]).numpy()

    rng = np.random.default_rng(11)
    probe = rng.choice(flat.size, size=min(60, flat.size), replace=False)
    worst = 0.0
    for j in probe:
        step = np.zeros_like(flat)
        step[j] = h
        fd = (loss_value(flat + step) - loss_value(flat - step)) / (2 * h)
        scale = max(abs(fd), abs(auto[j]), 1e-6)
        worst = max(worst, abs(fd - auto[j]) / scale)
    assign(flat)
    return OracleReport(f"grad_fd[{name}]", worst, 0.0, 1e-3)


def suite_gradients(seed: int = 5) -> list[OracleReport]:
    """Autograd vs finite differences on every trainer network shape, plus the
    policy-gradient decomposition against differences of the exact value."""
    torch.manual_seed(seed)
    arch = ArchConfig(width=8, policy_depth=2, q_depth=2, mu_depth=2,
                      cdf_trunk_depth=2, cdf_tail_depth=2)
    state_dim, action_dim = 4, 3
    gen = torch.Generator().manual_seed(seed)
    rows = 16
    s = torch.rand(rows, state_dim, generator=gen, dtype=torch.float64)
    a = torch.rand(rows, action_dim, generator=gen, dtype=torch.float64)
    a = a / a.sum(dim=1, keepdim=True)
    z = torch.randn(rows, generator=gen, dtype=torch.float64)

    reports = [
        _net_grad_report("policy", PolicyNet(state_dim, action_dim, arch, gen), (s,)),
        _net_grad_report("q", QNet(state_dim, action_dim, arch, gen), (s, a)),
        _net_grad_report("mu", MuNet(state_dim, action_dim, arch, gen), (s, a)),
        _net_grad_report("cdf", CdfNet(state_dim, action_dim, arch, gen), (s, a, z)),
    ]

    case = policy_gradient_case(epsilon=0.25)
    reports.append(OracleReport(
        "policy_gradient_identity", case.worst_rel_gap, 0.0, 5e-3))
    small = policy_gradient_case(epsilon=1e-6)
    reports.append(OracleReport(
        "policy_gradient_small_eps_correction", small.correction_over_dpg, 0.0, 1e-2))
    return reports


# ----- the exact policy-gradient case study ---------------------------------


def _case_mdp() -> tuple[FiniteMdp, np.ndarray]:
    """Two states, two actions, horizon 3; transitions do not depend on the
    action so the worst-case gradient decomposition can be evaluated exactly."""
    p0 = np.array([[0.55, 0.45], [0.35, 0.65]])
    transitions = np.stack([p0, p0], axis=1)  # P[s, a, s'] identical across a
    costs = np.empty((2, 2, 2))
    costs[0, 0] = [0.10, 1.30]
    costs[0, 1] = [0.55, 2.05]
    costs[1, 0] = [0.80, 1.90]
    costs[1, 1] = [1.15, 2.60]
    mdp = FiniteMdp(transitions=transitions, costs=costs, horizon=3, initial_state=0)
    continuation = np.zeros((mdp.horizon + 1, mdp.n_states), dtype=np.int64)
    return mdp, continuation


@dataclass
class PolicyGradientCase:
    """Results of the exact surrogate-vs-differences study."""

    thetas: np.ndarray
    fd_grads: np.ndarray
    surrogate_grads: np.ndarray
    dpg_terms: np.ndarray
    correction_terms: np.ndarray

    @property
    def worst_rel_gap(self) -> float:
        scale = np.maximum(np.abs(self.fd_grads), 1e-8)
        return float(np.max(np.abs(self.surrogate_grads - self.fd_grads) / scale))

    @property
    def correction_over_dpg(self) -> float:
        return float(np.max(np.abs(self.correction_terms))
                     / max(np.mean(np.abs(self.dpg_terms)), 1e-12))


def policy_gradient_case(epsilon: float, alpha: float = 0.3, grid_n: int = 2001,
                         n_probes: int = 20, h: float = 1e-5) -> PolicyGradientCase:
    """Exact check of the policy-gradient decomposition on a tiny MDP.

    A one-parameter smooth policy acts at the first period only, so the exact
    robust value is a closed function of theta.  The surrogate gradient is the
    frozen-multiplier value term plus the worst-case correction; both are
    computed from exact distributions and compared against central differences
    of the exact value, probing theta away from atom-order kinks.
    """
    mdp, continuation = _case_mdp()
    gamma = cvar_distortion(alpha, grid_n)
    uset = UncertaintySet(epsilon, SetKind.WASSERSTEIN_MOMENTS)
    tables = exact_dp(mdp, gamma, uset, policy=continuation)
    v1 = tables.v[1]
    s0 = mdp.initial_state
    probs = mdp.transitions[s0, 0]
    c0, c1 = mdp.costs[s0, 0], mdp.costs[s0, 1]

    order = np.argsort(c0 + v1, kind="stable")
    cum = np.cumsum(probs[order])
    u = grid_nodes(grid_n)
    node_atom = np.clip(np.searchsorted(cum, u, side="left"), 0, probs.size - 1)

    def atoms_at(theta: float) -> np.ndarray:
        w = 1.0 / (1.0 + math.exp(-theta))
        return w * c0 + (1.0 - w) * c1 + v1

    def value_at(theta: float) -> float:
        quant = QuantileFunction(atoms_at(theta)[order][node_atom])
        return worst_case_moments(quant, gamma, epsilon).risk_value

    thetas = np.linspace(-1.4, 1.4, n_probes)
    fd = np.empty(n_probes)
    surrogate = np.empty(n_probes)
    dpg = np.empty(n_probes)
    corr = np.empty(n_probes)
    gvals = gamma.values
    for i, theta in enumerate(thetas):
        atoms = atoms_at(theta)
        if np.min(np.abs(np.diff(np.sort(atoms)))) < 1e-3:
            raise ValueError("probe too close to an atom-order kink")
        quant = QuantileFunction(atoms[order][node_atom])
        sol = worst_case_moments(quant, gamma, epsilon)
        w = 1.0 / (1.0 + math.exp(-theta))
        datoms = (c0 - c1) * w * (1.0 - w)  # d atoms / d theta
        df_grid = datoms[order][node_atom]
        lam, b, mu = sol.lambda_star, sol.b_lambda, sol.mu
        dpg[i] = (lam / b) * float(np.mean(gvals * df_grid))
        corr[i] = ((b - lam) / b) * float(
            np.mean(((b - lam) * (quant.values - mu) + 1.0) * df_grid))
        surrogate[i] = dpg[i] + corr[i]
        branch_lo = worst_case_moments(
            QuantileFunction(atoms_at(theta - h)[order][node_atom]), gamma, epsilon
        ).degenerate
        branch_hi = worst_case_moments(
            QuantileFunction(atoms_at(theta + h)[order][node_atom]), gamma, epsilon
        ).degenerate
        if branch_lo != branch_hi:
            raise ValueError("probe straddles the large-budget branch boundary")
        fd[i] = (value_at(theta + h) - value_at(theta - h)) / (2.0 * h)
    return PolicyGradientCase(thetas=thetas, fd_grads=fd, surrogate_grads=surrogate,
                              dpg_terms=dpg, correction_terms=corr)


# ----- dynamic-programming suite --------------------------------------------


def _hand_mdp() -> FiniteMdp:
    """Two states, one action, two periods; risk values verified by hand."""
    transitions = np.array([[[0.5, 0.5]], [[0.3, 0.7]]])
    costs = np.array([[[0.0, 1.0]], [[2.0, 3.0]]])
    return FiniteMdp(transitions=transitions, costs=costs, horizon=1, initial_state=0)


def suite_dp(seed: int = 17) -> list[OracleReport]:
    """Exact-DP checks: hand-computed recursion, risk-neutral reduction,
    single-period identity, and policy-enumeration optimality."""
    reports: list[OracleReport] = []
    n = 1000

    # Hand-computed nested tail-mean recursion on a two-period chain:
    # V1 = [1, 3]; V0(s0) = top-half mean of {0+1 (p=.5), 1+3 (p=.5)} = 4.
    mdp = _hand_mdp()
    gamma = cvar_distortion(0.5, n)
    tables = exact_dp(mdp, gamma, UncertaintySet(0.0), policy=np.zeros((2, 2), dtype=np.int64))
    for value, expected, tag in [
        (tables.v[1, 0], 1.0, "hand_v1_s0"),
        (tables.v[1, 1], 3.0, "hand_v1_s1"),
        (tables.v[0, 0], 4.0, "hand_v0"),
    ]:
        reports.append(OracleReport(f"dp_{tag}", float(value), expected, 1e-12))

    # Risk-neutral reduction: uniform weights and zero budget reproduce
    # classic expected-cost backward induction (lattice probabilities keep
    # the grid representation exact).
    rng = np.random.default_rng(seed)
    transitions = lattice_transitions(rng, (3, 2, 3), n)
    costs = rng.normal(0.0, 1.0, size=(3, 2, 3))
    mdp2 = FiniteMdp(transitions=transitions, costs=costs, horizon=3)
    from .grids import mean_distortion

    tables2 = exact_dp(mdp2, mean_distortion(n), UncertaintySet(0.0))
    v = np.zeros(3)
    for _ in range(4):
        q = np.einsum("sak,sak->sa", transitions, costs + v[None, None, :])
        v = q.min(axis=1)
    reports.append(OracleReport("dp_risk_neutral_v0",
                                float(tables2.v[0, mdp2.initial_state]),
                                float(v[mdp2.initial_state]), 1e-9))

    # Single period: the robust DP equals the one-step risk directly.
    one = FiniteMdp(transitions=np.array([[[1.0, 0.0], [0.4, 0.6]], [[0.5, 0.5], [0.2, 0.8]]]),
                    costs=rng.normal(0.0, 1.0, size=(2, 2, 2)), horizon=0)
    gamma01 = cvar_distortion(0.1, n)
    uset = UncertaintySet(0.1, SetKind.WASSERSTEIN_MOMENTS)
    tables3 = exact_dp(one, gamma01, uset)
    from .worstcase import robust_risk

    direct = robust_risk(discrete_quantile(one.costs[0, 1], one.transitions[0, 1], n),
                         gamma01, uset)
    reports.append(OracleReport("dp_single_period", float(tables3.q[0, 0, 1]),
                                float(direct), 1e-12))

    # Exhaustive policy enumeration: the Bellman optimum beats every table.
    small = FiniteMdp(transitions=lattice_transitions(rng, (2, 2, 2), 600),
                      costs=rng.normal(0.0, 1.0, size=(2, 2, 2)), horizon=3)
    uset2 = UncertaintySet(0.05, SetKind.WASSERSTEIN_MOMENTS)
    gamma2 = cvar_distortion(0.3, 600)
    best, _, values = enumerate_policies(small, gamma2, uset2)
    bellman = exact_dp(small, gamma2, uset2)
    reports.append(OracleReport("dp_enumeration_optimum",
                                float(bellman.v[0, small.initial_state]),
                                float(best), 1e-9))
    reports.append(OracleReport("dp_enumeration_dominance",
                                float(best), float(values.min()), 1e-12))
    return reports


# ----- scoring suite ---------------------------------------------------------


def suite_scoring(seed: int = 23) -> list[OracleReport]:
    """Empirical-minimiser recovery for each score, CRPS dominance checks."""
    rng = np.random.default_rng(seed)
    reports: list[OracleReport] = []

    z = rng.standard_normal(10_000)
    grid = np.linspace(-1.0, 1.0, 401)
    avg = np.array([[np.mean((a - z) ** 2)] for a in grid]).ravel()
    reports.append(OracleReport("score_mean_minimizer",
                                float(grid[np.argmin(avg)]), float(z.mean()), 0.05))

    zu = rng.uniform(0.0, 1.0, 10_000)
    grid = np.linspace(0.5, 1.0, 501)
    avg = np.array([np.mean(((zu <= grid[i]) - 0.9) * (grid[i] - zu))
                    for i in range(grid.size)])
    reports.append(OracleReport("score_var_minimizer",
                                float(grid[np.argmin(avg)]), 0.9, 0.03))

    # Joint minimiser of the pair score over a grid around the truth.
    zu = rng.uniform(0.0, 1.0, 20_000)
    a1s = np.linspace(0.84, 0.96, 25)
    a2s = np.linspace(0.89, 1.0, 23)
    best = (math.inf, 0.0, 0.0)
    for a1 in a1s:
        for a2 in a2s:
            if a1 > a2:
                continue
            ind = (zu <= a1).astype(float)
            tail = a1 * (ind - 0.9) + zu * (1.0 - ind)
            score = float(np.mean(np.log((a2 + 1.0) / (zu + 1.0)) - a2 / (a2 + 1.0)
                                  + tail / ((a2 + 1.0) * 0.1)))
            if score < best[0]:
                best = (score, a1, a2)
    reports.append(OracleReport("score_pair_var", best[1], 0.9, 0.03))
    reports.append(OracleReport("score_pair_cvar", best[2], 0.95, 0.03))

    # CRPS: the empirical CDF forecast beats constants and perturbed CDFs.
    partition = CostPartition(np.linspace(-0.1, 1.1, 601))
    samples = rng.uniform(0.0, 1.0, 10_000)
    ecdf = np.searchsorted(np.sort(samples), partition.points, side="right") / samples.size
    crps_ecdf = float(np.mean([crps(ecdf, float(zi), partition) for zi in samples[:2000]]))
    worst_gap = math.inf
    for const in (0.25, 0.5, 0.75):
        forecast = np.full(partition.size, const)
        val = float(np.mean([crps(forecast, float(zi), partition) for zi in samples[:2000]]))
        worst_gap = min(worst_gap, val - crps_ecdf)
    reports.append(OracleReport("crps_beats_constants", min(worst_gap, 0.0), 0.0, 1e-12))
    return reports


SUITES = {
    "worstcase": suite_worstcase,
    "gradients": suite_gradients,
    "dp": suite_dp,
    "scoring": suite_scoring,
}


def run_suite(name: str) -> list[OracleReport]:
    """Run one named suite, or all of them."""
    if name == "all":
        reports: list[OracleReport] = []
        for fn in SUITES.values():
            reports.extend(fn())
        return reports
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return SUITES[name]()
