"""Command-line entry point: train / evaluate / bench / ablate.

Config files are flat key = value text; flags layer on top of file values,
which layer on top of the documented defaults. Every run writes a manifest
first, so a run can be reproduced from its output directory alone.

Exit codes: 0 ok, 1 config error, 2 runtime error. The output root defaults
to ./runs and can be moved with the MPPIQ_RUNS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import uuid
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .trainer import (
    ARTIFACT_VERSION,
    SPS_BENCH_ARMS,
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_sps_benchmark,
    run_training,
)


class ConfigError(ValueError):
    pass


# flat config key -> (TrainConfig attribute, type)
CONFIG_KEYS = {
    "env": ("env_id", str),
    "steps": ("total_steps", int),
    "seed": ("seed", int),
    "batch_size": ("batch_size", int),
    "updates_per_step": ("updates_per_step", int),
    "warmup_steps": ("warmup_steps", int),
    "buffer_capacity": ("buffer_capacity", int),
    "metrics_every": ("metrics_every", int),
    "gamma": ("gamma", float),
    "q_lr": ("q_lr", float),
    "q_lr_decay": ("q_lr_decay", float),
    "model_lr": ("model_lr", float),
    "optimizer": ("optimizer", str),
    "activation": ("activation", str),
    "polyak": ("polyak", float),
    "use_target_network": ("use_target_network", bool),
    "ensemble_size": ("ensemble_size", int),
    "warm_start": ("warm_start", bool),
    "use_terminal_q": ("use_terminal_q", bool),
    "planner_for_control": ("planner_for_control", bool),
    "planner_for_targets": ("planner_for_targets", bool),
    "member_resample": ("member_resample", str),
    "planner.n_samples": ("online_samples", int),
    "planner.iterations": ("online_iterations", int),
    "planner.horizon": ("horizon", int),
    "planner.lam": ("lam", float),
    "planner.sigma": ("sigma", float),
    "planner.antithetic": ("antithetic", bool),
    "target.n_samples": ("target_samples", int),
    "target.iterations": ("target_iterations", int),
    "target.lam": ("target_lam", float),
    "target.refresh": ("target_refresh", int),
}

ABLATION_ARMS = {
    "full": {},
    "no-terminal-q": {"use_terminal_q": False},
    "single-model": {"ensemble_size": 1},
    "cold-start": {"warm_start": False},
    "control-only": {"planner_for_targets": False},
    "targets-only": {"planner_for_control": False},
}


def _coerce(key: str, raw: str):
    attr, typ = CONFIG_KEYS[key]
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError
        return typ(raw)
    except ValueError:
        raise ConfigError(
            f"bad value for '{key}': expected {typ.__name__}, got {raw!r}"
        ) from None


def read_config_file(path) -> dict:
    """Parse 'key = value' lines; '#' starts a comment."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            values[key] = raw
    return values


def parse_config(file_path=None, overrides: dict | None = None) -> TrainConfig:
    """Layered resolution: defaults <- file <- flags/overrides."""
    cfg = TrainConfig()
    layers = []
    if file_path is not None:
        layers.append(read_config_file(file_path))
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for key, raw in layer.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown key '{key}'")
            setattr(cfg, CONFIG_KEYS[key][0], _coerce(key, str(raw)))
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        out[key.strip()] = raw.strip()
    return out


def _run_dir(name: str, out_flag) -> Path:
    if out_flag:
        return Path(out_flag)
    root = Path(os.environ.get("MPPIQ_RUNS", "runs"))
    return root / f"{name}-{time.strftime('%Y%m%d-%H%M%S')}-{uuid.uuid4().hex[:6]}"


def write_manifest(out_dir: Path, cfg: TrainConfig, command: str, extra=None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "start_timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "output_dir": str(out_dir),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def config_from_manifest(path) -> TrainConfig:
    with open(path) as f:
        manifest = json.load(f)
    d = manifest["config"]
    d["hidden"] = tuple(d["hidden"])
    cfg = TrainConfig(**d)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mppiq")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="flat key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("--out", type=str, help="output directory")

    p = sub.add_parser("train", parents=[common], help="run the learning loop")
    p.add_argument("--env", type=str)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--manifest", type=str, help="reproduce a run from its manifest")

    p = sub.add_parser("evaluate", parents=[common], help="roll out a checkpoint")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--env", type=str)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", parents=[common], help="steps-per-second benchmark")
    p.add_argument("--env", type=str)
    p.add_argument("--grid", type=str, default="table1",
                   help="'table1' or comma-separated target sample counts")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", parents=[common], help="multi-seed ablation arm")
    p.add_argument("--arm", type=str, required=True, choices=sorted(ABLATION_ARMS))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--env", type=str)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    return parser


def _resolve_cfg(args, extra_overrides=None) -> TrainConfig:
    overrides = _parse_sets(getattr(args, "set", None))
    for flag, key in (("env", "env"), ("steps", "steps"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = str(val)
    if extra_overrides:
        overrides.update({k: str(v) for k, v in extra_overrides.items()})
    return parse_config(getattr(args, "config", None), overrides)


def cmd_train(args) -> int:
    if getattr(args, "manifest", None):
        cfg = config_from_manifest(args.manifest)
    else:
        cfg = _resolve_cfg(args)
    out_dir = _run_dir("train", args.out)
    write_manifest(out_dir, cfg, "train")
    run_training(cfg, out_dir=out_dir)
    print(f"run complete: {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    agent = load_checkpoint(args.checkpoint)
    if args.env is not None and args.env != agent.cfg.env_id:
        raise ConfigError(
            f"checkpoint was trained on '{agent.cfg.env_id}', not '{args.env}'"
        )
    result = evaluate(agent, episodes=args.episodes, seed=args.seed)
    print(json.dumps({k: result[k] for k in ("mean_return", "median_return")}))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "evaluation.json", "w") as f:
            json.dump(result, f, indent=2)
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve_cfg(args)
    if args.grid == "table1":
        n_list = (10, 20, 50)
    else:
        n_list = tuple(int(x) for x in args.grid.split(","))
    out_dir = _run_dir("bench", args.out)
    write_manifest(out_dir, cfg, "bench", extra={"grid": list(n_list)})
    rows = run_sps_benchmark(
        env_id=cfg.env_id,
        n_list=n_list,
        arms=SPS_BENCH_ARMS,
        steps=args.steps,
        reps=args.reps,
        seed=args.seed,
        base_cfg=cfg,
    )
    with open(out_dir / "sps.csv", "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["n_target", "mode", "iterations", "sps_mean", "sps_std"]
        )
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(
            f"N={row['n_target']:>3} {row['mode']:>4} {row['iterations']:>2} iter: "
            f"{row['sps_mean']:.1f} +/- {row['sps_std']:.2f} SPS"
        )
    print(f"benchmark written to {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_cfg(args, extra_overrides=None)
    for attr, value in ABLATION_ARMS[args.arm].items():
        setattr(cfg, attr, value)
    out_dir = _run_dir(f"ablate-{args.arm}", args.out)
    write_manifest(out_dir, cfg, "ablate", extra={"arm": args.arm, "n_seeds": args.seeds})
    finals = []
    for k in range(args.seeds):
        seed_cfg = TrainConfig(**asdict(cfg))
        seed_cfg.seed = args.seed + k
        seed_dir = out_dir / f"seed_{seed_cfg.seed}"
        _, _, info = run_training(seed_cfg, out_dir=seed_dir)
        returns = info["episode_returns"]
        finals.append(float(np.median(returns[-10:])) if returns else float("nan"))
        print(f"seed {seed_cfg.seed}: final median return {finals[-1]:.2f}")
    aggregate = {
        "arm": args.arm,
        "per_seed_final_median_return": finals,
        "median_final_return": float(np.median(finals)),
    }
    with open(out_dir / "aggregate.json", "w") as f:
        json.dump(aggregate, f, indent=2)
    print(f"ablation written to {out_dir}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
