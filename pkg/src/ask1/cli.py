"""Command-line entry points: train, eval, and plot."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import ppo
from .config import ConfigError, RunConfig
from .evaluate import load_profile, run_eval, write_eval_outputs
from .nets import CheckpointError, init_bundle, load_checkpoint, save_checkpoint
from .obs import layout_table
from .plots import CsvFormatError, plot_csv, plot_training_curves


def _num_threads() -> int:
    raw = os.environ.get("ASK1_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return cfgmod.load_config(path)


def _apply_overrides(cfg: RunConfig, args) -> None:
    if args.seed is not None:
        cfg.run.seed = args.seed
    if getattr(args, "num_envs", None) is not None:
        cfg.run.num_envs = args.num_envs
    if getattr(args, "iterations", None) is not None:
        cfg.run.iterations = args.iterations
    if args.out is not None:
        cfg.run.output_dir = args.out
    if getattr(args, "robot", None) is not None:
        cfg.robot.preset = args.robot
    if getattr(args, "terrain", None) is not None:
        cfg.terrain.kind = args.terrain


class MetricsWriter:
    def __init__(self, path):
        self.file = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.file, lineterminator="\n")
        self.writer.writerow(ppo.METRICS_COLUMNS)
        self.file.flush()

    def __call__(self, row: dict) -> None:
        self.writer.writerow(
            [_fmt_cell(row[name]) for name in ppo.METRICS_COLUMNS])
        self.file.flush()

    def close(self):
        self.file.close()


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def cmd_train(args) -> int:
    try:
        cfg = _load_config(args.config)
        _apply_overrides(cfg, args)
        out_dir = Path(cfg.run.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfgmod.save_config(cfg, out_dir / "config.json")
        (out_dir / "obs_layout.txt").write_text(layout_table(), encoding="utf-8")
        env = cfgmod.build_env(cfg, num_threads=_num_threads())
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.run.seed, 100))))
    bundle = init_bundle(init_rng)
    save_checkpoint(bundle, out_dir / "checkpoint_init.ckpt")

    metrics = MetricsWriter(out_dir / "metrics.csv")

    def on_checkpoint(it, b):
        save_checkpoint(b, out_dir / f"checkpoint_{it + 1:06d}.ckpt")
        save_checkpoint(b, out_dir / "checkpoint.ckpt")

    try:
        rows = ppo.train(env, bundle, cfg.ppo, cfg.run.iterations, cfg.run.seed,
                         on_metrics=metrics, on_checkpoint=on_checkpoint,
                         checkpoint_every=cfg.run.checkpoint_every)
    except ppo.TrainingFailure as e:
        metrics.close()
        (out_dir / "failure.txt").write_text(str(e) + "\n", encoding="utf-8")
        print(f"training failed: {e}", file=sys.stderr)
        return 2
    metrics.close()
    if cfg.run.iterations == 0:
        save_checkpoint(bundle, out_dir / "checkpoint.ckpt")

    summary = {
        "iterations": cfg.run.iterations,
        "seed": cfg.run.seed,
        "num_envs": cfg.run.num_envs,
        "final": rows[-1] if rows else None,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if rows:
        plot_training_curves(out_dir / "metrics.csv", out_dir / "metrics.svg")
    print(f"run complete: {out_dir}")
    return 0


def cmd_eval(args) -> int:
    try:
        cfg = _load_config(args.config)
        _apply_overrides(cfg, args)
        bundle = load_checkpoint(args.checkpoint)
        profile = load_profile(args.profile)
    except (ConfigError, CheckpointError, CsvFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    expected = init_bundle(np.random.default_rng(0))
    for name, net in bundle.networks().items():
        want = expected.networks()[name].layer_dims
        got = net.layer_dims
        if want[0] != got[0] or want[-1] != got[-1]:
            print(f"error: checkpoint/config layout mismatch: {name} expects input "
                  f"{got[0]} and output {got[-1]}, this config builds {want[0]} -> {want[-1]}",
                  file=sys.stderr)
            return 1

    out_dir = Path(args.out if args.out is not None else "eval_out")
    trace = run_eval(bundle, cfg, profile, seconds=args.seconds)
    paths = write_eval_outputs(trace, out_dir)
    err = np.mean(np.abs(trace.vel[:, 0] - trace.cmd[:, 0]))
    print(f"eval complete: {out_dir} (mean |vx error| {err:.3f} m/s, resets {trace.resets})")
    for p in paths.values():
        print(f"  {p}")
    return 0


def cmd_plot(args) -> int:
    try:
        plot_csv(args.csv, args.out)
    except (CsvFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ask1",
        description="Quadruped locomotion RL: train policies in the simplified "
                    "vectorized simulator, evaluate them, and plot run artifacts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run PPO training")
    p_train.add_argument("--config", help="JSON run config (defaults used when omitted)")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--num-envs", type=int, dest="num_envs")
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--out", help="output directory")
    p_train.add_argument("--robot", choices=["go1", "ask1"])
    p_train.add_argument("--terrain", choices=["flat", "stairs", "rough"])
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="roll out a checkpoint against a command profile")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config")
    p_eval.add_argument("--profile", required=True, help="CSV schedule: t,vx,vy,wz")
    p_eval.add_argument("--seconds", type=float, default=10.0)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--out")
    p_eval.add_argument("--robot", choices=["go1", "ask1"])
    p_eval.add_argument("--terrain", choices=["flat", "stairs", "rough"])
    p_eval.set_defaults(func=cmd_eval)

    p_plot = sub.add_parser("plot", help="render a CSV as an SVG line plot")
    p_plot.add_argument("--csv", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
