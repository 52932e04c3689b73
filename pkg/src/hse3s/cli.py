"""Command-line surface: train, eval, and inspect subcommands producing
reproducible on-disk artifacts (CSV curves, weight checkpoints, PGM height
maps). The HSE3S_OUT environment variable overrides the output root."""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .approximator import Arch, WeightsFormatError, load, save
from .config import (ConfigError, RunConfig, canonical_text, config_hash,
                     load_config, hash_of_text)
from .learner import (ExplorationSchedule, FAILURE_KINDS, N_DECISION_STEPS,
                      RoundConfig, evaluate, train)
from .geometry import Extent, Pose, crop, height_maps
from .sampling import default_schedule
from .world import scene_to_text, sense, spawn_scene

_FLOAT_FMT = "%.17g"


def _fmt(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT % value
    return str(value)


def write_csv(path: Path, fieldnames, rows, cfg_hash: str):
    """CSV with a config-hash comment, a header row, and LF line endings."""
    lines = ["# config=%s" % cfg_hash, ",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(_fmt(row[k]) for k in fieldnames))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_pgm(path: Path, image: np.ndarray, cfg_hash: str):
    """Binary portable graymap of an image with values in [0, 1]."""
    h, w = image.shape
    data = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    header = "P5\n# config=%s\n%d %d\n255\n" % (cfg_hash, w, h)
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())


def output_root(out_dir: str) -> Path:
    env = os.environ.get("HSE3S_OUT")
    if env:
        return Path(env) / out_dir
    return Path(out_dir)


def _write_manifest(out: Path, cfg_hash: str, seed, extra=None):
    lines = ["config_hash = %s" % cfg_hash,
             "seed = %s" % seed,
             "package_version = %s" % __version__,
             "numpy_version = %s" % np.__version__]
    for key, value in (extra or {}).items():
        lines.append("%s = %s" % (key, value))
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    if args.workers is not None:
        cfg.workers = args.workers
    out = output_root(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    (out / "config.cfg").write_text(canonical_text(cfg))

    def checkpoint(round_index, qfuncs):
        ckpt = out / ("round_%d" % round_index)
        ckpt.mkdir(exist_ok=True)
        for t, q in enumerate(qfuncs):
            save(q, ckpt / ("step_%d.weights" % t))

    def progress(curve_row, stats_row):
        print("round %d: grasp %.3f place %.3f (eps %.2f/%.2f, %.0fs)"
              % (curve_row["round"], curve_row["mean_grasp_reward"],
                 curve_row["mean_place_reward"], curve_row["epsilon_grasp"],
                 curve_row["epsilon_place"], curve_row["wall_seconds"]))

    t0 = time.monotonic()
    result = train(
        cfg.task,
        RoundConfig(cfg.episodes_per_round, cfg.sgd_iters_per_round,
                    cfg.rounds),
        default_schedule(), cfg.seed,
        exploration=ExplorationSchedule(
            rounds=cfg.rounds, floor=cfg.eps_floor,
            decay_rounds=cfg.eps_decay_rounds, zero_tail=cfg.eps_zero_tail,
            place_target=cfg.place_target),
        n_samples=cfg.n_samples, lr=cfg.lr, lr_decay_steps=cfg.lr_decay_steps,
        batch_size=cfg.batch_size, buffer_capacity=cfg.buffer_capacity,
        spawn_kwargs=cfg.spawn_kwargs(), workers=cfg.workers,
        checkpoint_fn=checkpoint, progress_fn=progress)

    from .learner import CURVE_FIELDS, STATS_FIELDS
    write_csv(out / "learning_curve.csv", CURVE_FIELDS, result.curve, h)
    write_csv(out / "round_stats.csv", STATS_FIELDS, result.round_stats, h)
    _write_manifest(out, h, cfg.seed,
                    {"wall_seconds_total": "%.1f" % (time.monotonic() - t0)})
    print("wrote %s" % (out / "learning_curve.csv"))
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def load_checkpoint(ckpt_dir: Path):
    qfuncs = []
    for t in range(N_DECISION_STEPS):
        path = ckpt_dir / ("step_%d.weights" % t)
        if not path.exists():
            raise WeightsFormatError("missing checkpoint file %s" % path)
        qfuncs.append(load(path))
    return qfuncs


def _wilson(successes: int, n: int, z: float = 1.96):
    if n == 0:
        return 0.0, 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return p, max(0.0, center - half), min(1.0, center + half)


def cmd_eval(args) -> int:
    if args.episodes < 1:
        print("usage error: --episodes must be >= 1", file=sys.stderr)
        return 2
    if args.conditions not in ("a", "acf"):
        print("usage error: --conditions must be a or acf", file=sys.stderr)
        return 2
    ckpt = Path(args.ckpt)
    try:
        qfuncs = load_checkpoint(ckpt)
    except WeightsFormatError as exc:
        print("checkpoint error: %s" % exc, file=sys.stderr)
        return 1
    threshold = args.threshold if args.threshold > 0 else None
    spawn_kwargs = {}
    if args.min_objects >= 0:
        spawn_kwargs["min_objects"] = args.min_objects
    if args.max_objects >= 0:
        spawn_kwargs["max_objects"] = args.max_objects
    report = evaluate(args.task, qfuncs, args.episodes, args.trials,
                      seed=args.seed, n_samples=args.samples,
                      detect_threshold=threshold,
                      spawn_kwargs=spawn_kwargs or None)
    seed_text = "task=%s episodes=%d trials=%d seed=%d threshold=%s" % (
        args.task, args.episodes, args.trials, args.seed, threshold)
    h = hash_of_text(seed_text)

    rows = []
    n = report.episodes
    for name, successes, denom in (
            ("grasp_A", report.grasp_a, n),
            ("grasp_ACF", report.grasp_acf, n),
            ("place", report.place_success, max(report.grasp_rewarded, 1)),
            ("task", report.task_success, n)):
        rate, lo, hi = _wilson(successes, denom)
        rows.append({"metric": name, "successes": successes,
                     "episodes": denom, "rate": rate,
                     "ci_lo": lo, "ci_hi": hi})
    for kind in FAILURE_KINDS:
        rows.append({"metric": "failure_%s" % kind,
                     "successes": report.failures[kind], "episodes": n,
                     "rate": report.failures[kind] / n, "ci_lo": 0.0,
                     "ci_hi": 0.0})
    headline = "grasp_ACF" if args.conditions == "acf" else "grasp_A"
    rows.append({"metric": "headline_condition", "successes": 0,
                 "episodes": n,
                 "rate": next(r["rate"] for r in rows
                              if r["metric"] == headline),
                 "ci_lo": 0.0, "ci_hi": 0.0})

    print("%-20s %10s %10s %8s %8s %8s" % ("metric", "successes", "episodes",
                                           "rate", "ci_lo", "ci_hi"))
    for r in rows:
        print("%-20s %10d %10d %8.3f %8.3f %8.3f"
              % (r["metric"], r["successes"], r["episodes"], r["rate"],
                 r["ci_lo"], r["ci_hi"]))
    if args.out:
        out = output_root(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "eval.csv",
                  ("metric", "successes", "episodes", "rate", "ci_lo",
                   "ci_hi"), rows, h)
        print("wrote %s" % (out / "eval.csv"))
    return 0


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


def cmd_inspect(args) -> int:
    out = output_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    h = hash_of_text("task=%s seed=%d level=%s" % (args.task, args.seed,
                                                   args.level))
    state = spawn_scene(args.task, args.seed)
    (out / "scene.txt").write_text(scene_to_text(state.scene))
    schedule = default_schedule()
    levels = ([args.level] if args.level > 0
              else list(range(1, len(schedule) + 1)))
    if state.scene:
        focus = state.scene[0].pose.translation.copy()
        focus[2] = max(focus[2], 0.02)
    else:
        focus = np.array([0.0, 0.0, 0.02])
    names = "zyx"
    for lv in levels:
        extent = schedule.levels[lv - 1].extent
        gaze = Pose(np.eye(3), focus) if lv > 1 else state.gaze
        seen = sense(state, gaze, extent)
        for ch in range(3):
            write_pgm(out / ("level%d_%s.pgm" % (lv, names[ch])),
                      seen.i1[ch], h)
    print("wrote %d graymaps under %s" % (3 * len(levels), out))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hse3s",
        description="Hierarchical SE(3) gaze sampling for 6-DoF pick-and-place")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train per-step value networks")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--workers", type=int, default=None,
                   help="episode fan-out processes")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True, help="round_<n> checkpoint dir")
    e.add_argument("--task", required=True,
                   choices=("blocks", "mugs", "bottles"))
    e.add_argument("--episodes", type=int, required=True)
    e.add_argument("--trials", type=int, default=10)
    e.add_argument("--conditions", default="acf", choices=("a", "acf"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--samples", type=int, default=100)
    e.add_argument("--threshold", type=float, default=0.0,
                   help="detection-failure value threshold; 0 disables")
    e.add_argument("--min-objects", type=int, default=-1)
    e.add_argument("--max-objects", type=int, default=-1)
    e.add_argument("--out", default="", help="also write eval.csv here")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("inspect",
                       help="dump height-map graymaps for a scene")
    i.add_argument("--task", required=True,
                   choices=("blocks", "mugs", "bottles"))
    i.add_argument("--seed", type=int, required=True)
    i.add_argument("--level", type=int, default=0,
                   help="schedule level 1-6; 0 for all")
    i.add_argument("--out", default="inspect_out")
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
