"""Actor-critic trainer: distributional critic, robust targets, policy updates.

Each iteration simulates exploratory episodes, fits the conditional CDF of the
costs-to-go by a CRPS loss, the conditional first moment by squared error, and
the two-head value net by a strictly consistent (quantile, tail-mean) score
against worst-case-transformed realizations; it then simulates on-policy
episodes and takes a deterministic policy-gradient step whose correction term
accounts for the worst-case reweighting.  Targets are computed from slowly
updated copies of every network.
"""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from .envs import ExploreConfig, TrajectoryBatch, rollout
from .grids import QuantileFunction, cvar_distortion, grid_nodes, mean_distortion
from .nets import ArchConfig, NetworkSet, NonFiniteLossError, lr_decay, soft_update
from .scoring import CostPartition
from .worstcase import SetKind, worst_case_wasserstein

logger = logging.getLogger(__name__)

__all__ = [
    "CvarSpec",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "build_partition",
]

_DTYPE = torch.float64


@dataclass(frozen=True)
class CvarSpec:
    """Upper-tail-mean risk family: weights 1{u > alpha}/(1 - alpha).

    The trainer's value net carries a (quantile, tail-mean) head pair at the
    same level, so this is the distortion family it can train against.
    """

    alpha: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")

    nondecreasing = True

    def gamma_values(self, u):
        if torch.is_tensor(u):
            return (u > self.alpha).to(u.dtype) / (1.0 - self.alpha)
        return (np.asarray(u) > self.alpha) / (1.0 - self.alpha)

    def l2_norm(self) -> float:
        return math.sqrt(1.0 / (1.0 - self.alpha))

    def sigma_gamma2(self) -> float:
        return self.alpha / (1.0 - self.alpha)

    def grid(self, n: int):
        return cvar_distortion(self.alpha, n)


@dataclass
class TrainConfig:
    """Hyperparameters for the alternating training loop."""

    iterations: int = 1000
    episodes_per_iter: int = 128
    # epochs per iteration for the CDF, first-moment, value and policy nets
    k_cdf: int = 5
    k_mean: int = 5
    k_q: int = 5
    k_policy: int = 1
    # mini-batch sizes, in episodes
    b_cdf: int = 128
    b_mean: int = 128
    b_q: int = 128
    b_policy: int = 128
    lr_critic: float = 5e-4
    lr_actor: float = 3e-6
    critic_lr_decay: float = 0.999995
    actor_lr_decay: float = 0.999995
    tau: float = 0.008
    # exploration
    p_explore: float = 0.5
    p_explore_decay: float = 0.9999
    p_explore_floor: float = 0.05
    dirichlet_concentration: float = 0.05
    explore_mix: float = 0.75
    explore_kind: str = "dirichlet"
    # risk objective
    alpha: float = 0.1
    epsilon: float = 0.0
    set_kind: str = "wasserstein_moments"
    # grids
    n_partition: int = 501
    quantile_grid: int = 512
    # inner-loop convergence and the critic sweep cap
    max_critic_sweeps: int = 1
    convergence_rtol: float = 1e-3
    convergence_window: int = 3
    # numerical guards
    density_floor: float = 1e-3
    sigma2_floor: float = 1e-10
    # networks and reproducibility
    arch: ArchConfig = field(default_factory=ArchConfig)
    seed: int = 0
    # optional episode replay across iterations (off: fresh batches only)
    replay_buffer: bool = False
    buffer_capacity: int = 4096

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        data = dict(data)
        if "arch" in data and isinstance(data["arch"], dict):
            data["arch"] = ArchConfig(**data["arch"])
        return TrainConfig(**data)


@dataclass
class TrainResult:
    nets: NetworkSet
    metrics: list[dict]
    counters: dict


def build_partition(values: np.ndarray, n_points: int) -> CostPartition:
    """Evenly spaced points covering the observed costs-to-go with a 5% margin.

    A degenerate span is widened by a fixed constant so the partition always
    has positive length.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot build a partition from an empty batch")
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo
    if span < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = lo - 0.05 * span, hi + 0.05 * span
    return CostPartition(np.linspace(lo, hi, n_points))


@contextmanager
def _frozen(*modules: torch.nn.Module):
    saved: list[tuple[torch.nn.Parameter, bool]] = []
    for mod in modules:
        for p in mod.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


class _TorchBatch:
    """Trajectory arrays flattened to transition rows on the torch side."""

    def __init__(self, tb: TrajectoryBatch) -> None:
        self.episodes = tb.n_episodes
        self.periods = tb.n_periods
        self.states = torch.as_tensor(tb.states, dtype=_DTYPE)
        self.actions = torch.as_tensor(tb.actions, dtype=_DTYPE)
        self.costs = torch.as_tensor(tb.costs, dtype=_DTYPE)
        self.next_states = torch.as_tensor(tb.next_states, dtype=_DTYPE)
        self.raw = tb

    def rows(self, episode_idx: np.ndarray):
        s = self.states[episode_idx].reshape(-1, self.states.shape[-1])
        a = self.actions[episode_idx].reshape(-1, self.actions.shape[-1])
        return s, a


class Trainer:
    """Alternating critic/actor optimisation of the robust risk objective.

    ``risk_schedule`` optionally maps a batch of encoded states to per-state
    (tolerance, tail level) pairs; by default both are constants from the
    config.
    """

    def __init__(self, env, config: TrainConfig,
                 risk_schedule: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None) -> None:
        self.env = env
        self.cfg = config
        self.dist = CvarSpec(config.alpha)
        self.set_kind = SetKind(config.set_kind)
        self.risk_schedule = risk_schedule
        self.nets = NetworkSet.build(env.state_dim, env.action_dim, config.arch, config.seed)
        self.opt_policy = torch.optim.Adam(self.nets.policy.parameters(), lr=config.lr_actor)
        self.opt_q = torch.optim.Adam(self.nets.q.parameters(), lr=config.lr_critic)
        self.opt_mu = torch.optim.Adam(self.nets.mu.parameters(), lr=config.lr_critic)
        self.opt_cdf = torch.optim.Adam(self.nets.cdf.parameters(), lr=config.lr_critic)
        self._rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
        self._rollout_seeds = np.random.SeedSequence([config.seed, 0xABCD])
        self.p_explore = config.p_explore
        self.counters = {"degenerate": 0, "skipped": 0, "density_clamps": 0,
                         "stat_rows": 0, "realization_rows": 0}
        self.metrics: list[dict] = []
        self._buffer: list[TrajectoryBatch] = []

    # ----- simulation ---------------------------------------------------

    def policy_numpy(self, states: np.ndarray, use_target: bool = False) -> np.ndarray:
        net = self.nets.policy_target if use_target else self.nets.policy
        with torch.no_grad():
            out = net(torch.as_tensor(states, dtype=_DTYPE))
        return out.numpy()

    def _next_seed(self) -> int:
        return int(self._rollout_seeds.spawn(1)[0].generate_state(1)[0])

    def simulate(self, episodes: int, exploratory: bool) -> TrajectoryBatch:
        explore_cfg = None
        if exploratory and self.p_explore > 0.0:
            explore_cfg = ExploreConfig(
                p_explore=self.p_explore,
                concentration=self.cfg.dirichlet_concentration,
                mix=self.cfg.explore_mix,
                kind=self.cfg.explore_kind,
            )
        return rollout(self.env, self.policy_numpy, episodes,
                       seed=self._next_seed(), explore_cfg=explore_cfg)

    # ----- shared pieces ------------------------------------------------

    def _costs_to_go(self, tb: _TorchBatch, episode_idx: np.ndarray,
                     use_targets: bool) -> torch.Tensor:
        """Bootstrap targets Z_t = c_t + Q(s_{t+1}, policy(s_{t+1})); terminal
        periods use the bare cost."""
        policy = self.nets.policy_target if use_targets else self.nets.policy
        qnet = self.nets.q_target if use_targets else self.nets.q
        with torch.no_grad():
            ns = tb.next_states[episode_idx]
            flat = ns.reshape(-1, ns.shape[-1])
            qv = qnet.tail_value(flat, policy(flat)).reshape(ns.shape[0], ns.shape[1])
            z = tb.costs[episode_idx] + qv
            z[:, -1] = tb.costs[episode_idx][:, -1]
        return z.reshape(-1)

    def _risk_params(self, states: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-row (epsilon, alpha); constants unless a schedule is installed."""
        rows = states.shape[0]
        if self.risk_schedule is None:
            eps = torch.full((rows,), float(self.cfg.epsilon), dtype=_DTYPE)
            alpha = torch.full((rows,), float(self.dist.alpha), dtype=_DTYPE)
            return eps, alpha
        eps_np, alpha_np = self.risk_schedule(states.numpy())
        return (torch.as_tensor(eps_np, dtype=_DTYPE).reshape(rows),
                torch.as_tensor(alpha_np, dtype=_DTYPE).reshape(rows))

    def _implied_stats(self, s: torch.Tensor, a: torch.Tensor,
                       partition: CostPartition, alpha: torch.Tensor,
                       use_targets: bool) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(mean, variance, tail covariance) of the net-implied quantile function.

        The CDF net is evaluated on the cost partition and inverted onto a
        fixed grid of quantile levels; moments come from that implied step
        quantile function.
        """
        cdf = self.nets.cdf_target if use_targets else self.nets.cdf
        points = torch.as_tensor(partition.points, dtype=_DTYPE)
        with torch.no_grad():
            fvals = cdf.forward_grid(s, a, points)
            qg = self.cfg.quantile_grid
            u = torch.as_tensor(grid_nodes(qg), dtype=_DTYPE)
            idx = torch.searchsorted(fvals.contiguous(), u.expand(s.shape[0], qg),
                                     right=False).clamp_(max=points.shape[0] - 1)
            fq = points[idx]
            mu_f = fq.mean(dim=1)
            sigma2 = (fq * fq).mean(dim=1) - mu_f * mu_f
            gam = (u.unsqueeze(0) > alpha.unsqueeze(1)).to(_DTYPE) / (1.0 - alpha.unsqueeze(1))
            cov = (fq * gam).mean(dim=1) - mu_f
        return mu_f, sigma2.clamp_min(0.0), cov

    @staticmethod
    def _lambda_b(sigma2: torch.Tensor, cov: torch.Tensor, eps: torch.Tensor,
                  sigma_gamma2: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Multipliers of the moment-pinned worst case, rowwise.

        Rows past the large-budget threshold get lambda = 0; the same ``b``
        formula then reduces to sigma_gamma / sigma.
        """
        sigma = torch.sqrt(sigma2)
        sgam = torch.sqrt(sigma_gamma2)
        threshold = 2.0 * sigma2 * (1.0 - cov / (sigma * sgam))
        degenerate = eps * eps > threshold
        k = sigma2 - 0.5 * eps * eps
        # k^2 - sigma^4 factored to avoid cancellation at tiny tolerances
        denom = -0.5 * eps * eps * (k + sigma2)
        denom = torch.where(denom >= 0.0, torch.full_like(denom, -1e-300), denom)
        delta = (4.0 * k * k * (cov * cov - sigma2 * sigma_gamma2) / denom).clamp_min(0.0)
        lam = ((-2.0 * cov + torch.sqrt(delta)) / (2.0 * sigma2)).clamp_min(0.0)
        lam = torch.where(degenerate, torch.zeros_like(lam), lam)
        b = torch.sqrt((lam * lam * sigma2 + sigma_gamma2 + 2.0 * lam * cov).clamp_min(1e-300)) / sigma
        return lam, b, degenerate

    def _worst_case_realizations(
        self, s: torch.Tensor, a: torch.Tensor, z_tilde: torch.Tensor,
        partition: CostPartition,
    ) -> tuple[torch.Tensor, torch.Tensor, dict]:
        """Transform bootstrap samples into worst-case realizations (targets).

        Returns (realizations, keep mask, info); everything is detached.
        """
        info = {"lambda_mean": 0.0, "degenerate_frac": 0.0, "skipped": 0}
        eps, alpha = self._risk_params(s)
        with torch.no_grad():
            u_t = self.nets.cdf_target(s, a, z_tilde)
            gam_u = (u_t > alpha).to(_DTYPE) / (1.0 - alpha)
            if self.set_kind is SetKind.WASSERSTEIN:
                # nondecreasing weights: the worst case is an explicit shift
                norm = torch.sqrt(1.0 / (1.0 - alpha))
                zstar = z_tilde + eps * gam_u / norm
                return zstar, torch.ones_like(zstar, dtype=torch.bool), info
            mu_net = self.nets.mu_target(s, a)
            _, sigma2, cov = self._implied_stats(s, a, partition, alpha, use_targets=True)
            sgam2 = alpha / (1.0 - alpha)
            keep = sigma2 > self.cfg.sigma2_floor
            safe_sigma2 = torch.where(keep, sigma2, torch.ones_like(sigma2))
            lam, b, degenerate = self._lambda_b(safe_sigma2, cov, eps, sgam2)
            zstar = mu_net + (lam * (z_tilde - mu_net) + gam_u - 1.0) / b
            n_keep = int(keep.sum())
            info["skipped"] = int(keep.numel() - n_keep)
            if n_keep:
                info["lambda_mean"] = float(lam[keep].mean())
                info["degenerate_frac"] = float(degenerate[keep].to(_DTYPE).mean())
            if n_keep == 0:
                logger.warning("all transitions skipped; falling back to raw targets")
                return z_tilde, torch.ones_like(z_tilde, dtype=torch.bool), info
        return zstar, keep, info

    # ----- losses ---------------------------------------------------------

    def loss_cdf(self, tb: _TorchBatch, partition: CostPartition,
                 episode_idx: np.ndarray) -> torch.Tensor:
        """CRPS quadrature of the CDF net against bootstrap cost-to-go samples."""
        s, a = tb.rows(episode_idx)
        z = self._costs_to_go(tb, episode_idx, use_targets=False)
        points = torch.as_tensor(partition.points, dtype=_DTYPE)
        spacing = torch.as_tensor(partition.spacings(), dtype=_DTYPE)
        fvals = self.nets.cdf.forward_grid(s, a, points)
        indicator = (z.unsqueeze(1) <= points.unsqueeze(0)).to(_DTYPE)
        return (((fvals - indicator) ** 2) * spacing).sum(dim=1).mean()

    def loss_mean(self, tb: _TorchBatch, episode_idx: np.ndarray) -> torch.Tensor:
        """Squared error of the first-moment net against bootstrap samples."""
        s, a = tb.rows(episode_idx)
        z = self._costs_to_go(tb, episode_idx, use_targets=False)
        return ((self.nets.mu(s, a) - z) ** 2).mean()

    def _score_pair(self, var: torch.Tensor, cvar: torch.Tensor,
                    z: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
        """Vectorised strictly consistent score for the (quantile, tail-mean) pair."""
        arch = self.nets.arch
        shift = 1.0 + arch.var_scale + abs(arch.var_center)
        zmin = float(z.min())
        shift = max(shift, 1.0 - zmin)
        ind_le = (z <= var).to(_DTYPE)
        tail = var * (ind_le - alpha) + z * (1.0 - ind_le)
        return (torch.log((cvar + shift) / (z + shift)) - cvar / (cvar + shift)
                + tail / ((cvar + shift) * (1.0 - alpha)))

    def loss_q(self, tb: _TorchBatch, partition: CostPartition,
               episode_idx: np.ndarray) -> torch.Tensor:
        """Score the value heads against worst-case-transformed realizations.

        Zero tolerance scores the raw bootstrap samples; the ball-only set with
        nondecreasing weights uses the explicit shift; the moment-pinned set
        uses the closed-form rowwise transform with its large-budget branch.
        """
        s, a = tb.rows(episode_idx)
        z_tilde = self._costs_to_go(tb, episode_idx, use_targets=True)
        eps, alpha = self._risk_params(s)
        if float(eps.abs().max()) == 0.0:
            zstar, keep = z_tilde, torch.ones_like(z_tilde, dtype=torch.bool)
            info = {}
        else:
            zstar, keep, info = self._worst_case_realizations(s, a, z_tilde, partition)
        self.counters["skipped"] += info.get("skipped", 0)
        self.counters["stat_rows"] += int(keep.numel())
        self._last_q_info = info
        var, cvar = self.nets.q(s[keep], a[keep])
        return self._score_pair(var, cvar, zstar[keep], alpha[keep]).mean()

    def loss_q_wasserstein_only(self, tb: _TorchBatch, partition: CostPartition,
                                episode_idx: np.ndarray,
                                gamma_grid=None) -> torch.Tensor:
        """Ball-only value loss for weight profiles without monotonicity.

        Inverts the CDF net on the partition, solves the ball worst case by
        bisection with isotonic projections per transition, and scores the
        heads on the worst-case realizations.  Expensive; nondecreasing
        weights are redirected to the explicit-shift fast path.
        """
        qg = self.cfg.quantile_grid
        gamma_grid = gamma_grid if gamma_grid is not None else self.dist.grid(qg)
        if gamma_grid.nondecreasing:
            return self.loss_q(tb, partition, episode_idx)
        if gamma_grid.n != qg:
            raise ValueError("gamma grid must match the configured quantile grid")
        s, a = tb.rows(episode_idx)
        z_tilde = self._costs_to_go(tb, episode_idx, use_targets=True)
        eps, alpha = self._risk_params(s)
        points = torch.as_tensor(partition.points, dtype=_DTYPE)
        with torch.no_grad():
            u_t = self.nets.cdf_target(s, a, z_tilde)
            fvals = self.nets.cdf_target.forward_grid(s, a, points)
            u = torch.as_tensor(grid_nodes(qg), dtype=_DTYPE)
            idx = torch.searchsorted(fvals.contiguous(), u.expand(s.shape[0], qg),
                                     right=False).clamp_(max=points.shape[0] - 1)
            implied = points[idx].numpy()
            zstar = torch.empty_like(z_tilde)
            level_idx = np.clip((u_t.numpy() * qg).astype(int), 0, qg - 1)
            for r in range(implied.shape[0]):
                row_eps = float(eps[r])
                quant = QuantileFunction(implied[r])
                if row_eps == 0.0:
                    zstar[r] = z_tilde[r]
                    continue
                sol = worst_case_wasserstein(quant, gamma_grid, row_eps)
                zstar[r] = float(sol.worst_quantile.values[level_idx[r]])
        var, cvar = self.nets.q(s, a)
        return self._score_pair(var, cvar, zstar, alpha).mean()

    def loss_policy(self, tb: _TorchBatch, partition: CostPartition,
                    episode_idx: np.ndarray) -> torch.Tensor:
        """Deterministic policy-gradient surrogate with worst-case correction.

        Term one pushes the policy down the value net's action gradient; the
        correction reweights the CDF net's action sensitivity by the
        worst-case multipliers and vanishes as the tolerance goes to zero.
        The critic networks are held fixed; only the policy carries gradients.
        """
        s, _ = tb.rows(episode_idx)
        a_pol = self.nets.policy(s)
        values = self.nets.q.tail_value(s, a_pol)
        loss = values.mean()
        eps, alpha = self._risk_params(s)
        use_correction = (self.set_kind is SetKind.WASSERSTEIN_MOMENTS
                          and float(eps.abs().max()) > 0.0)
        if not use_correction:
            return loss
        with torch.no_grad():
            a_det = a_pol.detach()
            z = self._costs_to_go(tb, episode_idx, use_targets=False)
            mu_net = self.nets.mu(s, a_det)
            _, sigma2, cov = self._implied_stats(s, a_det, partition, alpha,
                                                 use_targets=False)
            sgam2 = alpha / (1.0 - alpha)
            keep = sigma2 > self.cfg.sigma2_floor
            safe_sigma2 = torch.where(keep, sigma2, torch.ones_like(sigma2))
            lam, b, _ = self._lambda_b(safe_sigma2, cov, eps, sgam2)
            ratio = (b - lam) / b
            coef = ratio * (ratio * b * (z - mu_net) + 1.0) * keep.to(_DTYPE)
        x = z.detach().clone().requires_grad_(True)
        fvals = self.nets.cdf(s, a_pol, x)
        density = torch.autograd.grad(fvals.sum(), x, retain_graph=True,
                                      create_graph=False)[0]
        clamped = density < self.cfg.density_floor
        self.counters["density_clamps"] += int(clamped.sum())
        density = density.clamp_min(self.cfg.density_floor)
        weight = (coef / density).detach()
        return loss - (weight * fvals).mean()

    # ----- loop -----------------------------------------------------------

    def _sample_episodes(self, total: int, batch: int) -> np.ndarray:
        if batch >= total:
            return np.arange(total)
        return self._rng.choice(total, size=batch, replace=False)

    def _converged(self, history: list[float]) -> bool:
        w = self.cfg.convergence_window
        if len(history) <= w:
            return False
        ref, cur = history[-1 - w], history[-1]
        return abs(ref - cur) < self.cfg.convergence_rtol * max(abs(ref), 1e-12)

    def _epoch_loop(self, name: str, k: int, batch_size: int, tb: _TorchBatch,
                    optimizer: torch.optim.Optimizer, loss_fn,
                    decay: float) -> tuple[float, bool]:
        history: list[float] = []
        converged = False
        for _ in range(k):
            idx = self._sample_episodes(tb.episodes, batch_size)
            loss = loss_fn(idx)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"{name} loss diverged: {float(loss)!r}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            lr_decay(optimizer, decay)
            history.append(float(loss))
            if self._converged(history):
                converged = True
                break
        return history[-1], converged

    def _critic_batch(self, fresh: TrajectoryBatch) -> TrajectoryBatch:
        if not self.cfg.replay_buffer:
            return fresh
        self._buffer.append(fresh)
        episodes = sum(b.n_episodes for b in self._buffer)
        while episodes > self.cfg.buffer_capacity and len(self._buffer) > 1:
            episodes -= self._buffer.pop(0).n_episodes
        return TrajectoryBatch(
            states=np.concatenate([b.states for b in self._buffer]),
            actions=np.concatenate([b.actions for b in self._buffer]),
            costs=np.concatenate([b.costs for b in self._buffer]),
            next_states=np.concatenate([b.next_states for b in self._buffer]),
        )

    def train(self) -> TrainResult:
        cfg = self.cfg
        for iteration in range(cfg.iterations):
            explore_tb = self._critic_batch(self.simulate(cfg.episodes_per_iter, exploratory=True))
            tb = _TorchBatch(explore_tb)
            all_idx = np.arange(tb.episodes)
            z_all = self._costs_to_go(tb, all_idx, use_targets=True)
            partition = build_partition(z_all.numpy(), cfg.n_partition)

            l_cdf = l_mu = l_q = math.nan
            sweeps = 0
            for sweep in range(max(cfg.max_critic_sweeps, 1)):
                sweeps = sweep + 1
                l_cdf, c1 = self._epoch_loop(
                    "cdf", cfg.k_cdf, cfg.b_cdf, tb, self.opt_cdf,
                    lambda idx: self.loss_cdf(tb, partition, idx), cfg.critic_lr_decay)
                l_mu, c2 = self._epoch_loop(
                    "mean", cfg.k_mean, cfg.b_mean, tb, self.opt_mu,
                    lambda idx: self.loss_mean(tb, idx), cfg.critic_lr_decay)
                l_q, c3 = self._epoch_loop(
                    "q", cfg.k_q, cfg.b_q, tb, self.opt_q,
                    lambda idx: self.loss_q(tb, partition, idx), cfg.critic_lr_decay)
                if c1 and c2 and c3:
                    break

            onpolicy = self.simulate(cfg.episodes_per_iter, exploratory=False)
            tb_on = _TorchBatch(onpolicy)
            with _frozen(self.nets.q, self.nets.mu, self.nets.cdf):
                l_pol, _ = self._epoch_loop(
                    "policy", cfg.k_policy, cfg.b_policy, tb_on, self.opt_policy,
                    lambda idx: self.loss_policy(tb_on, partition, idx), cfg.actor_lr_decay)

            self.p_explore = max(self.p_explore * cfg.p_explore_decay,
                                 cfg.p_explore_floor)
            self.nets.soft_update_targets(cfg.tau)

            info = getattr(self, "_last_q_info", {})
            self.metrics.append({
                "iteration": iteration,
                "loss_cdf": l_cdf,
                "loss_mean": l_mu,
                "loss_q": l_q,
                "loss_policy": l_pol,
                "mean_terminal_pnl": float(-onpolicy.total_costs().mean()),
                "p_explore": self.p_explore,
                "lambda_mean": info.get("lambda_mean", 0.0),
                "degenerate_frac": info.get("degenerate_frac", 0.0),
                "density_clamps": self.counters["density_clamps"],
                "skipped": self.counters["skipped"],
                "critic_sweeps": sweeps,
            })
        return TrainResult(nets=self.nets, metrics=self.metrics, counters=dict(self.counters))
