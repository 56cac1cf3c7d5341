"""Independent brute-force verifiers for the closed-form machinery.

Every closed form in :mod:`robustdrm.worstcase` is certified against a direct
numeric maximiser, the isotonic projection against exhaustive partition
search, gradients against central finite differences, and the trained critic
against exact dynamic programming on small tabular MDPs.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .envs import FiniteMdp
from .grids import (
    DistortionFunction,
    GridFunction,
    QuantileFunction,
    _pava,
    grid_nodes,
)
from .worstcase import SetKind, UncertaintySet, robust_risk

logger = logging.getLogger(__name__)

__all__ = [
    "OracleReport",
    "OracleInfeasibleError",
    "brute_isotonic",
    "finite_diff",
    "numeric_worstcase",
    "discrete_quantile",
    "exact_dp",
    "DpTables",
    "enumerate_policies",
]


class OracleInfeasibleError(RuntimeError):
    """The numeric maximiser could not produce a feasible iterate."""


@dataclass(frozen=True)
class OracleReport:
    """One certified quantity: library value vs independently computed value."""

    quantity: str
    library_value: float
    oracle_value: float
    tolerance: float

    @property
    def abs_gap(self) -> float:
        return abs(self.library_value - self.oracle_value)

    @property
    def rel_gap(self) -> float:
        scale = max(abs(self.library_value), abs(self.oracle_value), 1e-12)
        return self.abs_gap / scale

    @property
    def passed(self) -> bool:
        return self.abs_gap <= self.tolerance

    def row(self) -> dict:
        return {
            "quantity": self.quantity,
            "library_value": self.library_value,
            "oracle_value": self.oracle_value,
            "abs_gap": self.abs_gap,
            "rel_gap": self.rel_gap,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def brute_isotonic(f: GridFunction, max_len: int = 12) -> QuantileFunction:
    """Exhaustive isotonic projection over all contiguous block partitions.

    Every candidate replaces each block by its average; the feasible candidate
    with the smallest squared error is the projection.  Exponential in the
    length, hence the size guard.
    """
    y = np.asarray(f.values, dtype=float)
    n = y.size
    if n > max_len:
        raise ValueError(f"brute-force isotonic limited to length {max_len}, got {n}")
    best_sse = math.inf
    best = None
    for mask in range(1 << (n - 1)):
        cuts = [0]
        cuts += [i + 1 for i in range(n - 1) if (mask >> i) & 1]
        cuts.append(n)
        cand = np.empty(n)
        feasible = True
        prev = -math.inf
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            avg = float(np.mean(y[lo:hi]))
            if avg < prev - 1e-15:
                feasible = False
                break
            cand[lo:hi] = avg
            prev = avg
        if not feasible:
            continue
        sse = float(np.sum((cand - y) ** 2))
        if sse < best_sse - 1e-15:
            best_sse = sse
            best = cand
    assert best is not None
    return QuantileFunction(best)


def finite_diff(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, one probe per coordinate."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        hi = fn(x + step)
        lo = fn(x - step)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"non-finite probe at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def _grid_dist(a: np.ndarray, b: np.ndarray) -> float:
    gap = a - b
    return math.sqrt(float(np.mean(gap * gap)))


def _project(g: np.ndarray, f: np.ndarray, eps: float,
             moments: tuple[float, float] | None, cycles: int) -> np.ndarray:
    """Alternating projections: isotonic, mean, spread, then the ball.

    Ending each cycle with the ball step keeps the iterate monotone because it
    mixes two monotone vectors.  For the moment-pinned set the spread step
    rescales to the target variance about the target mean.
    """
    for _ in range(cycles):
        g = _pava(g)
        if moments is not None:
            mu, sigma2 = moments
            g = g - (np.mean(g) - mu)
            var = float(np.var(g))
            if var > 1e-300:
                g = mu + (g - mu) * math.sqrt(sigma2 / var)
        d = _grid_dist(g, f)
        if d > eps:
            g = f + (g - f) * (eps / d)
    return g


def _residuals(g: np.ndarray, f: np.ndarray, eps: float,
               moments: tuple[float, float] | None) -> dict[str, float]:
    res = {
        "ball": max(_grid_dist(g, f) - eps, 0.0),
        "monotone": float(max(0.0, np.max(np.maximum(-np.diff(g), 0.0), initial=0.0))),
    }
    if moments is not None:
        mu, sigma2 = moments
        res["mean"] = abs(float(np.mean(g)) - mu)
        res["second"] = abs(float(np.mean(g * g)) - (sigma2 + mu * mu))
    return res


def numeric_worstcase(quantile: QuantileFunction, gamma: DistortionFunction,
                      uncertainty: UncertaintySet, *, n_starts: int = 5,
                      max_iter: int = 2000, seed: int = 0, cycles: int = 6,
                      polish_cycles: int = 50,
                      feasibility_tol: float = 1e-6) -> float:
    """Maximise the distortion risk over the uncertainty set by direct ascent.

    Projected gradient ascent with backtracking from step 1.0, multi-start,
    followed by a long projection polish; the returned value comes from an
    iterate whose constraint residuals are checked, not assumed.
    """
    if quantile.n > 2000:
        raise ValueError("numeric maximiser limited to grids of size <= 2000")
    f = np.asarray(quantile.values, dtype=float)
    g = np.asarray(gamma.values, dtype=float)
    n = f.size
    eps = uncertainty.epsilon
    if eps == 0.0:
        return float(np.dot(f, g) / n)
    moments = None
    if uncertainty.kind is SetKind.WASSERSTEIN_MOMENTS:
        mu = float(np.mean(f))
        moments = (mu, float(np.mean(f * f)) - mu * mu)

    def value(x: np.ndarray) -> float:
        return float(np.dot(x, g) / n)

    rng = np.random.default_rng(seed)
    gnorm = math.sqrt(float(np.mean(g * g)))
    starts = [f.copy(), f + eps * g / gnorm]
    while len(starts) < n_starts:
        starts.append(f + eps * rng.standard_normal(n))

    best_overall = -math.inf
    feasible_found = False
    for start in starts:
        x = _project(start, f, eps, moments, polish_cycles)
        best = value(x)
        step = 1.0
        stall = 0
        for _ in range(max_iter):
            cand = _project(x + step * g, f, eps, moments, cycles)
            v = value(cand)
            if v > best + 1e-14:
                x, best = cand, v
                stall = 0
            else:
                step *= 0.5
                stall += 1
                if step < 1e-13 or stall > 60:
                    break
        x = _project(x, f, eps, moments, polish_cycles)
        res = _residuals(x, f, eps, moments)
        worst_res = max(res.values())
        if worst_res > feasibility_tol:
            logger.warning("ascent start discarded: residuals %s", res)
            continue
        feasible_found = True
        best_overall = max(best_overall, value(x))

    if not feasible_found:
        raise OracleInfeasibleError("no ascent start produced a feasible iterate")
    return best_overall


def discrete_quantile(atoms: np.ndarray, probs: np.ndarray, n: int) -> QuantileFunction:
    """Left-continuous step quantile function of a finite discrete distribution."""
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if atoms.shape != probs.shape or atoms.ndim != 1:
        raise ValueError("atoms and probs must be matching 1-d vectors")
    if np.any(probs < -1e-12) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probs must form a probability vector")
    order = np.argsort(atoms, kind="stable")
    a = atoms[order]
    cum = np.cumsum(probs[order])
    u = grid_nodes(n)
    idx = np.clip(np.searchsorted(cum, u, side="left"), 0, a.size - 1)
    return QuantileFunction(a[idx])


@dataclass(frozen=True)
class DpTables:
    """Exact robust dynamic-programming tables.

    ``q[t, s, a]`` is the robust risk-to-go taking table action ``a`` in state
    ``s`` at period ``t`` and following the evaluated policy afterwards;
    ``v[t, s]`` the corresponding state value; ``greedy[t, s]`` the per-period
    minimising table action.
    """

    q: np.ndarray
    v: np.ndarray
    greedy: np.ndarray


def _policy_weights(policy, t: int, s: int, n_actions: int) -> np.ndarray:
    w = np.asarray(policy[t][s] if not isinstance(policy, np.ndarray) else policy[t, s])
    if w.ndim == 0:
        out = np.zeros(n_actions)
        out[int(w)] = 1.0
        return out
    return np.asarray(w, dtype=float)


def exact_dp(mdp: FiniteMdp, gamma: DistortionFunction,
             uncertainty: UncertaintySet, policy=None) -> DpTables:
    """Backward recursion with the exact per-(s, a) cost-to-go distribution.

    At each (t, s, a) the cost-to-go is a known discrete distribution; its
    step quantile function, on the distortion's grid, feeds the robust risk
    evaluation.  With ``policy=None`` the recursion minimises over table
    actions; otherwise the policy (table of action indices or of simplex
    weights) is evaluated.
    """
    grid_n = gamma.n
    s_n, a_n, tp = mdp.n_states, mdp.n_actions, mdp.horizon + 1
    if s_n * a_n * tp > 320:
        raise ValueError("exact DP limited to small MDPs (S*A*(T+1) <= 320)")
    q = np.zeros((tp, s_n, a_n))
    v = np.zeros((tp, s_n))
    greedy = np.zeros((tp, s_n), dtype=np.int64)
    v_next = np.zeros(s_n)
    for t in range(tp - 1, -1, -1):
        for s in range(s_n):
            for a in range(a_n):
                atoms = mdp.costs[s, a] + v_next
                probs = mdp.transitions[s, a]
                quant = discrete_quantile(atoms, probs, grid_n)
                q[t, s, a] = robust_risk(quant, gamma, uncertainty)
            greedy[t, s] = int(np.argmin(q[t, s]))
            if policy is None:
                v[t, s] = q[t, s, greedy[t, s]]
            else:
                w = _policy_weights(policy, t, s, a_n)
                if np.count_nonzero(w) == 1:
                    v[t, s] = q[t, s, int(np.argmax(w))]
                else:
                    probs, raw = mdp.mixture(s, w)
                    quant = discrete_quantile(raw + v_next, probs, grid_n)
                    v[t, s] = robust_risk(quant, gamma, uncertainty)
        v_next = v[t].copy()
    return DpTables(q=q, v=v, greedy=greedy)


def enumerate_policies(mdp: FiniteMdp, gamma: DistortionFunction,
                       uncertainty: UncertaintySet,
                       ) -> tuple[float, np.ndarray, np.ndarray]:
    """Evaluate every deterministic Markov policy; returns (best value, policy, values).

    Exhaustive, so guarded to tiny MDPs; its own certificate for the Bellman
    recursion's optimum.
    """
    s_n, a_n, tp = mdp.n_states, mdp.n_actions, mdp.horizon + 1
    n_policies = a_n ** (s_n * tp)
    if n_policies > 5000:
        raise ValueError(f"{n_policies} deterministic policies is too many to enumerate")
    values = np.empty(n_policies)
    best_value = math.inf
    best_policy = None
    for i, flat in enumerate(itertools.product(range(a_n), repeat=s_n * tp)):
        table = np.array(flat, dtype=np.int64).reshape(tp, s_n)
        tables = exact_dp(mdp, gamma, uncertainty, policy=table)
        values[i] = tables.v[0, mdp.initial_state]
        if values[i] < best_value:
            best_value = values[i]
            best_policy = table
    assert best_policy is not None
    return best_value, best_policy, values
