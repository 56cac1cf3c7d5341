"""Compact feed-forward approximators with a monotone-constrained CDF head.

Four networks: a simplex policy, a two-head quantile/tail-mean value net, a
first-moment net, and a conditional CDF net whose layers downstream of the
cost input carry nonnegative weights and monotone activations, so the output
is nondecreasing in the cost argument by construction.

Everything runs in float64 on CPU; parameters are initialised from an
explicit generator so runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import torch
from torch import nn

__all__ = [
    "ArchConfig",
    "NetworkSet",
    "MonotoneLinear",
    "PolicyNet",
    "QNet",
    "MuNet",
    "CdfNet",
    "soft_update",
    "lr_decay",
    "loss_gradients",
    "NonFiniteLossError",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1

_DTYPE = torch.float64


class NonFiniteLossError(RuntimeError):
    """A loss evaluated to NaN or infinity."""


@dataclass(frozen=True)
class ArchConfig:
    """Widths and depths for the four networks."""

    width: int = 32
    policy_depth: int = 5
    q_depth: int = 6
    mu_depth: int = 6
    cdf_trunk_depth: int = 4
    cdf_tail_depth: int = 4
    var_scale: float = 5.0
    var_center: float = 0.0

    def __post_init__(self) -> None:
        for name in ("width", "policy_depth", "q_depth", "mu_depth",
                     "cdf_trunk_depth", "cdf_tail_depth"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.var_scale <= 0.0:
            raise ValueError("var_scale must be positive")


def _init_linear(layer: nn.Linear, gen: torch.Generator | None) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=gen)
        layer.bias.uniform_(-bound, bound, generator=gen)


def _softplus_inverse(y: torch.Tensor) -> torch.Tensor:
    return y + torch.log(-torch.expm1(-y))


class MonotoneLinear(nn.Module):
    """Affine layer whose effective weights are softplus(raw) > 0.

    Keeping the raw weights unconstrained leaves the optimiser untouched while
    the effective map stays nondecreasing coordinatewise at all times.
    """

    def __init__(self, in_features: int, out_features: int,
                 gen: torch.Generator | None = None) -> None:
        super().__init__()
        self.raw_weight = nn.Parameter(torch.empty(out_features, in_features, dtype=_DTYPE))
        self.bias = nn.Parameter(torch.empty(out_features, dtype=_DTYPE))
        bound = 1.0 / math.sqrt(in_features)
        with torch.no_grad():
            eff = torch.empty_like(self.raw_weight)
            eff.uniform_(0.05 * bound, bound, generator=gen)
            self.raw_weight.copy_(_softplus_inverse(eff))
            self.bias.uniform_(-bound, bound, generator=gen)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return nn.functional.linear(x, nn.functional.softplus(self.raw_weight), self.bias)


def _mlp(in_dim: int, width: int, depth: int, gen: torch.Generator | None) -> nn.Sequential:
    layers: list[nn.Module] = []
    d = in_dim
    for _ in range(depth):
        lin = nn.Linear(d, width, dtype=_DTYPE)
        _init_linear(lin, gen)
        layers += [lin, nn.SiLU()]
        d = width
    return nn.Sequential(*layers)


class PolicyNet(nn.Module):
    """State to portfolio weights on the simplex (softmax output)."""

    def __init__(self, state_dim: int, action_dim: int, arch: ArchConfig,
                 gen: torch.Generator | None = None) -> None:
        super().__init__()
        self.trunk = _mlp(state_dim, arch.width, arch.policy_depth, gen)
        self.head = nn.Linear(arch.width, action_dim, dtype=_DTYPE)
        _init_linear(self.head, gen)

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.head(self.trunk(s)), dim=-1)


class QNet(nn.Module):
    """Two-head value net: a bounded quantile head and a nonnegative excess.

    The tail-mean head is quantile + excess, so the ordering constraint holds
    by construction.  The quantile head is tanh rescaled to the configured
    cost range.
    """

    def __init__(self, state_dim: int, action_dim: int, arch: ArchConfig,
                 gen: torch.Generator | None = None) -> None:
        super().__init__()
        self.trunk = _mlp(state_dim + action_dim, arch.width, arch.q_depth, gen)
        self.var_head = nn.Linear(arch.width, 1, dtype=_DTYPE)
        self.excess_head = nn.Linear(arch.width, 1, dtype=_DTYPE)
        _init_linear(self.var_head, gen)
        _init_linear(self.excess_head, gen)
        self.var_scale = arch.var_scale
        self.var_center = arch.var_center

    def forward(self, s: torch.Tensor, a: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(torch.cat([s, a], dim=-1))
        var = self.var_center + self.var_scale * torch.tanh(self.var_head(h)).squeeze(-1)
        excess = nn.functional.softplus(self.excess_head(h)).squeeze(-1)
        return var, var + excess

    def tail_value(self, s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        """The tail-mean head: the value used for bootstrapping."""
        return self.forward(s, a)[1]


class MuNet(nn.Module):
    """First moment of the costs-to-go given a state-action pair."""

    def __init__(self, state_dim: int, action_dim: int, arch: ArchConfig,
                 gen: torch.Generator | None = None) -> None:
        super().__init__()
        self.trunk = _mlp(state_dim + action_dim, arch.width, arch.mu_depth, gen)
        self.head = nn.Linear(arch.width, 1, dtype=_DTYPE)
        _init_linear(self.head, gen)

    def forward(self, s: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(torch.cat([s, a], dim=-1))).squeeze(-1)


class CdfNet(nn.Module):
    """Conditional CDF of costs-to-go, nondecreasing in the cost argument.

    An unconstrained trunk embeds (s, a); the cost enters a tail of
    nonnegative-weight tanh layers followed by a nonnegative-weight sigmoid
    output, which makes z -> F(s, a, z) nondecreasing for any parameters.
    """

    def __init__(self, state_dim: int, action_dim: int, arch: ArchConfig,
                 gen: torch.Generator | None = None) -> None:
        super().__init__()
        self.trunk = _mlp(state_dim + action_dim, arch.width, arch.cdf_trunk_depth, gen)
        tail: list[nn.Module] = []
        d = arch.width + 1
        for _ in range(arch.cdf_tail_depth):
            tail.append(MonotoneLinear(d, arch.width, gen))
            d = arch.width
        self.tail = nn.ModuleList(tail)
        self.out = MonotoneLinear(d, 1, gen)

    def _tail_forward(self, feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        h = torch.cat([feat, z.unsqueeze(-1)], dim=-1)
        for layer in self.tail:
            h = torch.tanh(layer(h))
        return torch.sigmoid(self.out(h)).squeeze(-1)

    def forward(self, s: torch.Tensor, a: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        feat = self.trunk(torch.cat([s, a], dim=-1))
        return self._tail_forward(feat, z)

    def forward_grid(self, s: torch.Tensor, a: torch.Tensor,
                     z_grid: torch.Tensor) -> torch.Tensor:
        """Evaluate F(s, a, z) for every grid point; trunk runs once per row.

        Returns a tensor of shape [rows, len(z_grid)].
        """
        feat = self.trunk(torch.cat([s, a], dim=-1))
        rows, p = feat.shape[0], z_grid.shape[0]
        feat_rep = feat.unsqueeze(1).expand(rows, p, feat.shape[-1]).reshape(rows * p, -1)
        z_rep = z_grid.unsqueeze(0).expand(rows, p).reshape(rows * p)
        return self._tail_forward(feat_rep, z_rep).reshape(rows, p)


@dataclass
class NetworkSet:
    """Main networks plus their slowly-updated target copies."""

    policy: PolicyNet
    q: QNet
    mu: MuNet
    cdf: CdfNet
    policy_target: PolicyNet
    q_target: QNet
    mu_target: MuNet
    cdf_target: CdfNet
    arch: ArchConfig
    state_dim: int
    action_dim: int

    @staticmethod
    def build(state_dim: int, action_dim: int, arch: ArchConfig, seed: int) -> "NetworkSet":
        gen = torch.Generator().manual_seed(int(seed))
        mains = {
            "policy": PolicyNet(state_dim, action_dim, arch, gen),
            "q": QNet(state_dim, action_dim, arch, gen),
            "mu": MuNet(state_dim, action_dim, arch, gen),
            "cdf": CdfNet(state_dim, action_dim, arch, gen),
        }
        targets = {
            "policy": PolicyNet(state_dim, action_dim, arch),
            "q": QNet(state_dim, action_dim, arch),
            "mu": MuNet(state_dim, action_dim, arch),
            "cdf": CdfNet(state_dim, action_dim, arch),
        }
        for name, tgt in targets.items():
            tgt.load_state_dict(mains[name].state_dict())
        return NetworkSet(
            policy=mains["policy"], q=mains["q"], mu=mains["mu"], cdf=mains["cdf"],
            policy_target=targets["policy"], q_target=targets["q"],
            mu_target=targets["mu"], cdf_target=targets["cdf"],
            arch=arch, state_dim=state_dim, action_dim=action_dim,
        )

    def pairs(self) -> list[tuple[nn.Module, nn.Module]]:
        return [
            (self.policy_target, self.policy),
            (self.q_target, self.q),
            (self.mu_target, self.mu),
            (self.cdf_target, self.cdf),
        ]

    def soft_update_targets(self, tau: float) -> None:
        for target, main in self.pairs():
            soft_update(target, main, tau)

    def main_modules(self) -> dict[str, nn.Module]:
        return {"policy": self.policy, "q": self.q, "mu": self.mu, "cdf": self.cdf}

    def target_modules(self) -> dict[str, nn.Module]:
        return {"policy": self.policy_target, "q": self.q_target,
                "mu": self.mu_target, "cdf": self.cdf_target}


def soft_update(target: nn.Module, main: nn.Module, tau: float) -> None:
    """target <- tau * main + (1 - tau) * target, parameterwise."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    with torch.no_grad():
        for p_t, p_m in zip(target.parameters(), main.parameters(), strict=True):
            p_t.mul_(1.0 - tau).add_(p_m, alpha=tau)


def lr_decay(optimizer: torch.optim.Optimizer, factor: float) -> None:
    """Multiply every parameter-group learning rate by ``factor``."""
    if factor <= 0.0:
        raise ValueError("decay factor must be positive")
    for group in optimizer.param_groups:
        group["lr"] *= factor


def loss_gradients(loss: torch.Tensor,
                   params: Iterable[torch.Tensor]) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar loss for the given parameters."""
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"loss is not finite: {float(loss)!r}")
    return list(torch.autograd.grad(loss, list(params), allow_unused=False))


def save_checkpoint(path, nets: NetworkSet,
                    optimizers: dict[str, torch.optim.Optimizer] | None = None,
                    meta: dict | None = None) -> None:
    """Versioned key-value checkpoint: config, parameters, optimizer state."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": asdict(nets.arch),
        "state_dim": nets.state_dim,
        "action_dim": nets.action_dim,
        "nets": {name: mod.state_dict() for name, mod in nets.main_modules().items()},
        "targets": {name: mod.state_dict() for name, mod in nets.target_modules().items()},
        "optimizers": {name: opt.state_dict() for name, opt in (optimizers or {}).items()},
        "meta": dict(meta or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[NetworkSet, dict]:
    """Rebuild a network set from a checkpoint; returns (nets, payload)."""
    payload = torch.load(path, weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {version!r}")
    arch = ArchConfig(**payload["arch"])
    nets = NetworkSet.build(payload["state_dim"], payload["action_dim"], arch, seed=0)
    for name, mod in nets.main_modules().items():
        mod.load_state_dict(payload["nets"][name])
    for name, mod in nets.target_modules().items():
        mod.load_state_dict(payload["targets"][name])
    return nets, payload
