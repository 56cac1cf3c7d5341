"""Command-line entry point: train, eval, verify and sweep subcommands.

Every run writes a manifest with a hash of its configuration and seed; all
other output files carry that hash so runs can be reproduced byte for byte
(timestamps live only in the manifest).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from .config import ConfigError, build_env, build_train_config, load_config, write_manifest
from .envs import rollout
from .grids import cvar_distortion, distortion_risk, empirical_quantile
from .nets import load_checkpoint, save_checkpoint
from .training import Trainer
from .verify import run_suite

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

METRIC_COLUMNS = [
    "iteration", "loss_cdf", "loss_mean", "loss_q", "loss_policy",
    "mean_terminal_pnl", "p_explore", "lambda_mean", "degenerate_frac",
    "density_clamps", "skipped", "critic_sweeps",
]


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_metrics(path: Path, rows: list[dict], manifest: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest: {manifest}\n")
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row.get(k, "")) if isinstance(row.get(k), float)
                             else row.get(k, "") for k in METRIC_COLUMNS})


def _policy_fn(nets):
    def fn(states: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return nets.policy(torch.as_tensor(states, dtype=torch.float64)).numpy()
    return fn


def _evaluate_policy(env, nets, samples: int, seed: int) -> dict:
    """Simulate without exploration; summary statistics of terminal PnL."""
    batch = rollout(env, _policy_fn(nets), episodes=samples, seed=seed)
    pnl = -batch.total_costs()
    losses = -pnl
    summary = {
        "episodes": int(samples),
        "mean_pnl": float(pnl.mean()),
        "std_pnl": float(pnl.std(ddof=1)),
        "stderr_pnl": float(pnl.std(ddof=1) / np.sqrt(samples)),
    }
    quant = empirical_quantile(losses, 1000)
    for level in (0.1, 0.2):
        summary[f"cvar{int(level * 100):02d}_loss"] = float(
            distortion_risk(cvar_distortion(level, 1000), quant))
    mean_weights = batch.actions.mean(axis=0)  # [T+1, assets]
    summary["weight_dispersion"] = float(np.mean(np.std(mean_weights, axis=1)))
    return {"summary": summary, "pnl": pnl, "mean_weights": mean_weights}


def _write_eval(out: Path, result: dict, manifest: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "pnl_samples.csv", result["pnl"], delimiter=",",
               header=f"manifest: {manifest}\nterminal_pnl", comments="# ")
    with open(out / "weights_by_period.csv", "w", newline="") as fh:
        fh.write(f"# manifest: {manifest}\n")
        writer = csv.writer(fh)
        n_assets = result["mean_weights"].shape[1]
        writer.writerow(["period"] + [f"asset_{i}" for i in range(n_assets)])
        for t, row in enumerate(result["mean_weights"]):
            writer.writerow([t] + [repr(float(x)) for x in row])
    with open(out / "eval_summary.yaml", "w") as fh:
        yaml.safe_dump({"manifest_hash": manifest, **result["summary"]}, fh,
                       sort_keys=False)


def cmd_train(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    env = build_env(config.get("environment", {}))
    train_cfg = build_train_config(config.get("training", {}), seed=seed)
    out = Path(args.out)
    manifest = write_manifest(out, config, seed, _now(), note="train")
    trainer = Trainer(env, train_cfg)
    try:
        result = trainer.train()
    except Exception as exc:
        save_checkpoint(out / "checkpoint_failed.pt", trainer.nets,
                        meta={"error": str(exc), "manifest": manifest})
        _write_metrics(out / "metrics.csv", trainer.metrics, manifest)
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_metrics(out / "metrics.csv", result.metrics, manifest)
    save_checkpoint(out / "checkpoint.pt", result.nets,
                    optimizers={"policy": trainer.opt_policy, "q": trainer.opt_q,
                                "mu": trainer.opt_mu, "cdf": trainer.opt_cdf},
                    meta={"manifest": manifest, "iterations": train_cfg.iterations})
    with open(out / "run_summary.yaml", "w") as fh:
        yaml.safe_dump({
            "manifest_hash": manifest,
            "iterations": train_cfg.iterations,
            "final_metrics": result.metrics[-1] if result.metrics else {},
            "counters": result.counters,
        }, fh, sort_keys=False)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    env = build_env(config.get("environment", {}))
    nets, payload = load_checkpoint(args.checkpoint)
    if nets.state_dim != env.state_dim or nets.action_dim != env.action_dim:
        print(f"checkpoint dims ({nets.state_dim}, {nets.action_dim}) do not match "
              f"environment ({env.state_dim}, {env.action_dim})", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    manifest = write_manifest(out, config, seed, _now(), note="eval")
    result = _evaluate_policy(env, nets, args.samples, seed)
    _write_eval(out, result, manifest)
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        reports = run_suite(args.suite)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_USAGE
    failed = [r for r in reports if not r.passed]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"verify_{args.suite}.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(reports[0].row()))
            writer.writeheader()
            for r in reports:
                writer.writerow(r.row())
    for r in failed:
        print(f"FAIL {r.quantity}: library={r.library_value!r} "
              f"oracle={r.oracle_value!r} tol={r.tolerance}", file=sys.stderr)
    print(f"{len(reports) - len(failed)}/{len(reports)} oracle checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_sweep(args) -> int:
    epsilons = [float(e) for e in args.epsilons.split(",") if e.strip() != ""]
    if not epsilons:
        print("need at least one tolerance in --epsilons", file=sys.stderr)
        return EXIT_USAGE
    config = load_config(args.config)
    base_seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    out = Path(args.out)
    manifest = write_manifest(out, config, base_seed, _now(), note="sweep")
    rows = []
    for eps in epsilons:
        sub = dict(config)
        sub["training"] = dict(config.get("training", {}))
        sub["training"]["epsilon"] = eps
        env = build_env(sub.get("environment", {}))
        train_cfg = build_train_config(sub["training"], seed=base_seed)
        trainer = Trainer(env, train_cfg)
        result = trainer.train()
        eps_dir = out / f"epsilon_{eps:g}"
        eps_dir.mkdir(parents=True, exist_ok=True)
        _write_metrics(eps_dir / "metrics.csv", result.metrics, manifest)
        save_checkpoint(eps_dir / "checkpoint.pt", result.nets,
                        meta={"manifest": manifest, "epsilon": eps})
        ev = _evaluate_policy(env, result.nets, args.samples, base_seed + 909)
        _write_eval(eps_dir, ev, manifest)
        hist, edges = np.histogram(ev["pnl"], bins=60)
        with open(eps_dir / "pnl_histogram.csv", "w", newline="") as fh:
            fh.write(f"# manifest: {manifest}\n")
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            for i in range(hist.size):
                writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])),
                                 int(hist[i])])
        rows.append({"epsilon": eps, **ev["summary"]})
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        fh.write(f"# manifest: {manifest}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustdrm",
        description="Train, evaluate and verify robust risk-aware allocation policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the actor-critic trainer")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint without exploration")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--samples", type=int, default=10_000)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_verify = sub.add_parser("verify", help="run an oracle verification suite")
    p_verify.add_argument("--suite", required=True,
                          help="worstcase, gradients, dp, scoring, or all")
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(fn=cmd_verify)

    p_sweep = sub.add_parser("sweep", help="train and evaluate across tolerances")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--epsilons", required=True, help="comma-separated list")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--samples", type=int, default=10_000)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
