"""Episode generators: a cointegrated-price portfolio market and finite MDPs.

Both environments expose the same vectorised stepping interface consumed by
``rollout``: states are encoded as flat float vectors whose first entry is the
normalised period index, actions live on the probability simplex, and episode
noise is drawn from per-episode generators so batches are reproducible and
episodes can be simulated concurrently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "VecmParams",
    "PortfolioEnv",
    "FiniteMdp",
    "FiniteMdpEnv",
    "ExploreConfig",
    "TrajectoryBatch",
    "vecm_step",
    "wealth_step",
    "step_cost",
    "explore",
    "rollout",
]

_SIMPLEX_TOL = 1e-8


@dataclass(frozen=True)
class VecmParams:
    """Error-correction price dynamics: dS = c + A B^T S + L xi.

    ``loading`` (I x r) and ``cointegration`` (I x r) define the
    error-correction term, ``intercept`` the per-step drift and ``noise_chol``
    the lower-triangular factor of the innovation covariance.
    """

    s0: np.ndarray
    loading: np.ndarray
    cointegration: np.ndarray
    intercept: np.ndarray
    noise_chol: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        i = s0.size
        fields = {
            "s0": s0,
            "loading": np.asarray(self.loading, dtype=float).reshape(i, -1),
            "cointegration": np.asarray(self.cointegration, dtype=float).reshape(i, -1),
            "intercept": np.asarray(self.intercept, dtype=float).reshape(i),
            "noise_chol": np.asarray(self.noise_chol, dtype=float).reshape(i, i),
        }
        if fields["loading"].shape != fields["cointegration"].shape:
            raise ValueError("loading and cointegration must have matching shapes")
        if fields["loading"].shape[1] >= i:
            raise ValueError("cointegration rank must be below the asset count")
        if np.any(s0 <= 0.0):
            raise ValueError("initial prices must be positive")
        for name, arr in fields.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_assets(self) -> int:
        return int(self.s0.size)

    @property
    def rank(self) -> int:
        return int(self.loading.shape[1])


def vecm_step(prices: np.ndarray, params: VecmParams,
              noise: np.ndarray, floor: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """One error-correction step; prices are floored at a small positive level.

    ``noise`` holds standard normals, one row per simulated path.  Returns the
    next prices and the number of floor breaches.
    """
    prices = np.atleast_2d(prices)
    noise = np.atleast_2d(noise)
    drift = params.intercept + prices @ params.cointegration @ params.loading.T
    nxt = prices + drift + noise @ params.noise_chol.T
    if floor is None:
        floor = 1e-6 * params.s0
    breaches = int(np.sum(nxt < floor))
    return np.maximum(nxt, floor), breaches


def _check_simplex(weights: np.ndarray) -> None:
    if np.any(weights < -_SIMPLEX_TOL):
        raise ValueError("portfolio weights must be nonnegative")
    sums = np.sum(weights, axis=-1)
    if np.any(np.abs(sums - 1.0) > _SIMPLEX_TOL):
        raise ValueError("portfolio weights must sum to one")


def wealth_step(wealth: np.ndarray, weights: np.ndarray,
                prices: np.ndarray, prices_next: np.ndarray) -> np.ndarray:
    """Self-financing wealth update under the given portfolio weights."""
    _check_simplex(weights)
    returns = (prices_next - prices) / prices
    return wealth * (1.0 + np.sum(weights * returns, axis=-1))


def step_cost(wealth: np.ndarray, wealth_next: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """Per-period cost from the wealth path.

    The default convention is the wealth decrement y_t - y_{t+1}, whose episode
    sum telescopes to y_0 - y_{T+1}, so minimising total cost maximises
    terminal wealth.  ``sign = -1`` flips to the increment.
    """
    return sign * (wealth - wealth_next)


class PortfolioEnv:
    """Wealth allocation over cointegrated asset prices.

    An episode has periods t = 0..horizon; at each the agent observes
    (t/horizon, prices / s0, wealth), picks simplex weights, and pays the
    wealth decrement as cost.
    """

    def __init__(self, params: VecmParams, horizon: int,
                 cost_sign: float = 1.0) -> None:
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.params = params
        self.horizon = int(horizon)
        self.cost_sign = float(cost_sign)
        self.floor_breaches = 0
        self._floor = 1e-6 * params.s0

    @property
    def n_periods(self) -> int:
        return self.horizon + 1

    @property
    def state_dim(self) -> int:
        return self.params.n_assets + 2

    @property
    def action_dim(self) -> int:
        return self.params.n_assets

    def reset_batch(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        prices = np.tile(self.params.s0, (b, 1))
        wealth = np.ones(b)
        return prices, wealth

    def encode(self, t: int, prices: np.ndarray, wealth: np.ndarray) -> np.ndarray:
        prices = np.atleast_2d(prices)
        wealth = np.atleast_1d(wealth)
        tcol = np.full((prices.shape[0], 1), t / self.horizon)
        return np.concatenate([tcol, prices / self.params.s0, wealth[:, None]], axis=1)

    def noise_shape(self) -> tuple[int, ...]:
        return (self.n_periods, self.params.n_assets)

    def step_batch(self, t: int, prices: np.ndarray, wealth: np.ndarray,
                   actions: np.ndarray, noise: np.ndarray,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nxt, breaches = vecm_step(prices, self.params, noise, self._floor)
        if breaches:
            self.floor_breaches += breaches
            logger.warning("price floor applied to %d entries", breaches)
        wealth_next = wealth_step(wealth, actions, prices, nxt)
        costs = step_cost(wealth, wealth_next, self.cost_sign)
        return nxt, wealth_next, costs


@dataclass(frozen=True)
class FiniteMdp:
    """Tabular MDP: transition tensor P[s, a, s'] and cost tensor c[s, a, s'].

    Simplex actions act as mixtures of the table actions, in both the
    transition law and the cost, which keeps the map action -> outcome smooth.
    """

    transitions: np.ndarray
    costs: np.ndarray
    horizon: int
    initial_state: int = 0

    def __post_init__(self) -> None:
        p = np.asarray(self.transitions, dtype=float)
        c = np.asarray(self.costs, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError("transitions must have shape [S, A, S]")
        if c.shape != p.shape:
            raise ValueError("costs must match the transition tensor shape")
        if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-10):
            raise ValueError("each transition row must be a probability vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("costs must be finite")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not 0 <= self.initial_state < p.shape[0]:
            raise ValueError("initial state out of range")
        p = p.copy(); p.setflags(write=False)
        c = c.copy(); c.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "costs", c)

    @property
    def n_states(self) -> int:
        return int(self.transitions.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.transitions.shape[1])

    def mixture(self, s: int, action_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Transition probabilities and per-destination costs under a simplex action."""
        w = np.asarray(action_weights, dtype=float)
        probs = w @ self.transitions[s]
        raw = w @ self.costs[s]
        return probs, raw


class FiniteMdpEnv:
    """Rollout adapter for a tabular MDP with one-hot state encoding."""

    def __init__(self, mdp: FiniteMdp) -> None:
        self.mdp = mdp
        self.horizon = mdp.horizon

    @property
    def n_periods(self) -> int:
        return self.horizon + 1

    @property
    def state_dim(self) -> int:
        return 1 + self.mdp.n_states

    @property
    def action_dim(self) -> int:
        return self.mdp.n_actions

    def reset_batch(self, b: int) -> np.ndarray:
        return np.full(b, self.mdp.initial_state, dtype=np.int64)

    def encode(self, t: int, states: np.ndarray) -> np.ndarray:
        states = np.atleast_1d(states)
        onehot = np.eye(self.mdp.n_states)[states]
        tcol = np.full((states.size, 1), t / max(self.horizon, 1))
        return np.concatenate([tcol, onehot], axis=1)

    def step_batch(self, states: np.ndarray, actions: np.ndarray,
                   uniforms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        probs = np.einsum("ba,bas->bs", actions,
                          self.mdp.transitions[states])
        cum = np.cumsum(probs, axis=1)
        nxt = (uniforms[:, None] > cum).sum(axis=1)
        nxt = np.minimum(nxt, self.mdp.n_states - 1)
        raw = np.einsum("ba,bas->bs", actions, self.mdp.costs[states])
        costs = raw[np.arange(states.size), nxt]
        return nxt, costs


@dataclass(frozen=True)
class ExploreConfig:
    """Randomised-action scheme mixing the policy output with simplex noise."""

    p_explore: float = 0.5
    concentration: float = 0.05
    mix: float = 0.75
    kind: str = "dirichlet"  # "dirichlet" mixes noise in; "vertex" jumps to a corner

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_explore <= 1.0:
            raise ValueError("p_explore must be in [0, 1]")
        if self.concentration <= 0.0:
            raise ValueError("concentration must be positive")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must be in [0, 1]")
        if self.kind not in ("dirichlet", "vertex"):
            raise ValueError(f"unknown exploration kind {self.kind!r}")


def explore(action: np.ndarray, p_explore: float, concentration: float,
            rng: np.random.Generator, mix: float = 0.75) -> np.ndarray:
    """With probability ``p_explore`` blend the action with Dirichlet noise.

    The output stays on the simplex: mix * action + (1 - mix) * noise.
    """
    action = np.asarray(action, dtype=float)
    _check_simplex(action)
    if rng.random() >= p_explore:
        return action
    noise = rng.dirichlet(np.full(action.size, concentration))
    return mix * action + (1.0 - mix) * noise


@dataclass
class TrajectoryBatch:
    """B complete episodes: per (episode, period) state, action, cost, next state."""

    states: np.ndarray       # [B, T+1, state_dim]
    actions: np.ndarray      # [B, T+1, action_dim]
    costs: np.ndarray        # [B, T+1]
    next_states: np.ndarray  # [B, T+1, state_dim]
    terminal_wealth: np.ndarray | None = None  # portfolio envs only
    state_indices: np.ndarray | None = None    # finite MDP envs: [B, T+2]

    @property
    def n_episodes(self) -> int:
        return int(self.states.shape[0])

    @property
    def n_periods(self) -> int:
        return int(self.states.shape[1])

    def total_costs(self) -> np.ndarray:
        return self.costs.sum(axis=1)


def _episode_noise(env, gen: np.random.Generator, exp: ExploreConfig | None):
    """Pre-draw every random number one episode needs, in a fixed order."""
    tp = env.n_periods
    if isinstance(env, PortfolioEnv):
        dyn = gen.standard_normal(env.noise_shape())
    else:
        dyn = gen.random(tp)
    if exp is None or exp.p_explore == 0.0:
        return dyn, None, None
    flags = gen.random(tp) < exp.p_explore
    if exp.kind == "dirichlet":
        noise = gen.dirichlet(np.full(env.action_dim, exp.concentration), size=tp)
    else:
        noise = np.eye(env.action_dim)[gen.integers(0, env.action_dim, size=tp)]
    return dyn, flags, noise


def rollout(env, policy_fn, episodes: int, seed: int,
            explore_cfg: ExploreConfig | None = None) -> TrajectoryBatch:
    """Simulate complete episodes; deterministic given the seed.

    ``policy_fn`` maps a batch of encoded states [B, ds] to simplex actions
    [B, da].  Each episode owns a child generator spawned from the seed, so
    batches are order-stable and episodes could be simulated concurrently.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    gens = [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(episodes)]
    drawn = [_episode_noise(env, g, explore_cfg) for g in gens]
    dyn = np.stack([d[0] for d in drawn])
    flags = None if drawn[0][1] is None else np.stack([d[1] for d in drawn])
    exp_noise = None if drawn[0][2] is None else np.stack([d[2] for d in drawn])

    tp = env.n_periods
    b = episodes
    states = np.empty((b, tp, env.state_dim))
    actions = np.empty((b, tp, env.action_dim))
    costs = np.empty((b, tp))
    next_states = np.empty((b, tp, env.state_dim))

    is_portfolio = isinstance(env, PortfolioEnv)
    if is_portfolio:
        prices, wealth = env.reset_batch(b)
        idx_track = None
    else:
        mdp_states = env.reset_batch(b)
        idx_track = np.empty((b, tp + 1), dtype=np.int64)
        idx_track[:, 0] = mdp_states

    for t in range(tp):
        enc = env.encode(t, prices, wealth) if is_portfolio else env.encode(t, mdp_states)
        act = np.asarray(policy_fn(enc), dtype=float)
        if flags is not None:
            mask = flags[:, t]
            if np.any(mask):
                if explore_cfg.kind == "dirichlet":
                    act = np.where(mask[:, None],
                                   explore_cfg.mix * act + (1.0 - explore_cfg.mix) * exp_noise[:, t],
                                   act)
                else:
                    act = np.where(mask[:, None], exp_noise[:, t], act)
        states[:, t] = enc
        actions[:, t] = act
        if is_portfolio:
            prices, wealth, c = env.step_batch(t, prices, wealth, act, dyn[:, t])
            costs[:, t] = c
            next_states[:, t] = env.encode(t + 1, prices, wealth)
        else:
            mdp_states, c = env.step_batch(mdp_states, act, dyn[:, t])
            costs[:, t] = c
            next_states[:, t] = env.encode(t + 1, mdp_states)
            idx_track[:, t + 1] = mdp_states

    return TrajectoryBatch(
        states=states, actions=actions, costs=costs, next_states=next_states,
        terminal_wealth=wealth.copy() if is_portfolio else None,
        state_indices=idx_track,
    )
