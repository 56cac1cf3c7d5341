"""Run configuration: YAML schema, environment construction, manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .envs import FiniteMdp, FiniteMdpEnv, PortfolioEnv, VecmParams
from .nets import ArchConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "load_config",
    "build_env",
    "build_train_config",
    "manifest_hash",
    "write_manifest",
]


class ConfigError(ValueError):
    """The run configuration is missing keys or holds invalid values."""


def load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    return data


def build_env(env_cfg: dict):
    """Construct the environment described by the ``environment`` section."""
    if not isinstance(env_cfg, dict):
        raise ConfigError("'environment' section must be a mapping")
    kind = env_cfg.get("kind")
    try:
        if kind == "portfolio":
            assets = env_cfg["assets"]
            params = VecmParams(
                s0=np.asarray(assets["s0"], dtype=float),
                loading=np.asarray(assets["loading"], dtype=float),
                cointegration=np.asarray(assets["cointegration"], dtype=float),
                intercept=np.asarray(assets["intercept"], dtype=float),
                noise_chol=np.asarray(assets["noise_chol"], dtype=float),
                seed=int(env_cfg.get("seed", 0)),
            )
            return PortfolioEnv(params, horizon=int(env_cfg["horizon"]),
                                cost_sign=float(env_cfg.get("cost_sign", 1.0)))
        if kind == "finite_mdp":
            mdp = FiniteMdp(
                transitions=np.asarray(env_cfg["transitions"], dtype=float),
                costs=np.asarray(env_cfg["costs"], dtype=float),
                horizon=int(env_cfg["horizon"]),
                initial_state=int(env_cfg.get("initial_state", 0)),
            )
            return FiniteMdpEnv(mdp)
    except KeyError as exc:
        raise ConfigError(f"environment config missing key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"invalid environment config: {exc}") from exc
    raise ConfigError(f"unknown environment kind: {kind!r}")


def build_train_config(train_cfg: dict, seed: int | None = None) -> TrainConfig:
    if not isinstance(train_cfg, dict):
        raise ConfigError("'training' section must be a mapping")
    data = dict(train_cfg)
    arch = data.pop("arch", {})
    try:
        cfg = TrainConfig(arch=ArchConfig(**arch), **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


def manifest_hash(config: dict, seed: int) -> str:
    canonical = json.dumps({"config": config, "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def write_manifest(out_dir, config: dict, seed: int, created_at: str,
                   note: str = "") -> str:
    """Write the run manifest and return its hash; outputs reference the hash."""
    digest = manifest_hash(config, seed)
    payload = {
        "artifact_version": 1,
        "manifest_hash": digest,
        "seed": seed,
        "created_at": created_at,
        "note": note,
        "config": config,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.yaml", "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=False)
    return digest
