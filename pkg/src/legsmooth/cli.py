"""Command-line harness: dataset generation, estimation runs, preset sweeps.

Exit codes: 0 success, 2 file/config parse problems, 3 generation or solver
failures. Output files are deterministic for a fixed seed and config; wall
times go to stdout only.
"""

from __future__ import annotations

import argparse
import dataclasses
import pathlib
import sys
import time

import numpy as np

from .dataio import ParseError, default_config, load_config, load_dataset, save_dataset
from .graph import LinearSolveFailure, NotAnchoredError
from .pipeline import (
    PRESETS,
    compute_cdf,
    prepare_measurements,
    run_estimate,
)
from .sim import InfeasibleChainError, corrupt, generate_truth


def _fmt(x):
    return "%.17g" % x


def _load(config_path):
    return load_config(config_path) if config_path else default_config()


def _override_sim(sim, args):
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        updates["duration"] = args.duration
    return dataclasses.replace(sim, **updates) if updates else sim


def _write_table(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(" ".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _write_trajectory(path, trajectory):
    rows = []
    for rec in trajectory:
        rows.append([rec.timestamp, *rec.rotation.ravel().tolist(),
                     *rec.position.tolist(), *rec.velocity.tolist()])
    _write_table(path, rows)


def _write_run_outputs(out_dir, output, suffix=""):
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_trajectory(out_dir / f"trajectory{suffix}.txt", output.trajectory)
    _write_table(out_dir / f"errors{suffix}.txt",
                 [[e.node_index, e.translation, e.rotation] for e in output.errors])
    _write_table(out_dir / f"cdf_trans{suffix}.txt",
                 compute_cdf([e.translation for e in output.errors]))
    _write_table(out_dir / f"cdf_rot{suffix}.txt",
                 compute_cdf([e.rotation for e in output.errors]))
    res = output.result
    summary = [
        f"preset = {output.preset}",
        f"nodes = {len(output.trajectory)}",
        f"factors = {output.factor_count}",
        f"initial_cost = {_fmt(res.initial_cost)}",
        f"final_cost = {_fmt(res.cost)}",
        f"iterations = {res.iterations}",
        f"converged = {res.converged}",
        f"reason = {res.reason}",
        f"median_translation_error = {_fmt(float(np.median([e.translation for e in output.errors])))}",
        f"median_rotation_error = {_fmt(float(np.median([e.rotation for e in output.errors])))}",
    ]
    (out_dir / f"summary{suffix}.txt").write_text("\n".join(summary) + "\n")


def _cmd_generate(args):
    config = _load(args.config)
    sim = _override_sim(config.sim, args)
    start = time.perf_counter()
    dataset = generate_truth(sim)
    if not args.noiseless:
        dataset = corrupt(dataset, sim.noise, sim.seed)
    save_dataset(args.output, dataset)
    wall = time.perf_counter() - start
    print(f"wrote {args.output}: {len(dataset.imu)} imu samples, "
          f"{len(dataset.truth)} nodes, {len(dataset.loop_closures)} loop closures "
          f"({wall:.2f} s)")
    return 0


def _cmd_run(args):
    config = _load(args.config)
    dataset = load_dataset(args.dataset)
    start = time.perf_counter()
    output = run_estimate(dataset, config.sim, config.estimator, args.preset)
    wall = time.perf_counter() - start
    _write_run_outputs(args.out, output)
    res = output.result
    print(f"{args.preset}: cost {res.initial_cost:.6g} -> {res.cost:.6g} "
          f"in {res.iterations} iterations ({wall:.2f} s), outputs in {args.out}")
    return 0


def _cmd_compare(args):
    config = _load(args.config)
    sim = _override_sim(config.sim, args)
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    for p in presets:
        if p not in PRESETS:
            raise ValueError(f"unknown preset {p!r}; expected one of {PRESETS}")
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()

    clean = generate_truth(sim)
    pooled = {p: {"trans": [], "rot": []} for p in presets}
    iterations = {p: [] for p in presets}
    for i in range(args.seeds):
        noisy = corrupt(clean, sim.noise, sim.seed + i)
        meas = prepare_measurements(noisy, sim, config.estimator)
        for preset in presets:
            output = run_estimate(noisy, sim, config.estimator, preset, meas)
            pooled[preset]["trans"].extend(e.translation for e in output.errors)
            pooled[preset]["rot"].extend(e.rotation for e in output.errors)
            iterations[preset].append(output.result.iterations)

    lines = [f"seeds = {args.seeds}", f"duration = {_fmt(sim.duration)}"]
    for preset in presets:
        trans, rot = pooled[preset]["trans"], pooled[preset]["rot"]
        _write_table(out_dir / f"cdf_trans_{preset}.txt", compute_cdf(trans))
        _write_table(out_dir / f"cdf_rot_{preset}.txt", compute_cdf(rot))
        lines.append(f"{preset}: median_translation = {_fmt(float(np.median(trans)))} "
                     f"median_rotation = {_fmt(float(np.median(rot)))} "
                     f"mean_iterations = {_fmt(float(np.mean(iterations[preset])))}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    wall = time.perf_counter() - start
    print(f"compared {presets} over {args.seeds} seeds ({wall:.1f} s), "
          f"outputs in {args.out}")
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="legsmooth",
        description="Legged-robot trajectory smoothing: simulate walks, run "
                    "the factor-graph estimator, compare factor presets.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a walk and write a dataset file")
    g.add_argument("--output", required=True, help="dataset file to write")
    g.add_argument("--config", help="INI config (defaults used when omitted)")
    g.add_argument("--seed", type=int, help="override [sim] seed")
    g.add_argument("--duration", type=float, help="override [sim] duration")
    g.add_argument("--noiseless", action="store_true",
                   help="skip measurement corruption")
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="estimate a trajectory from a dataset file")
    r.add_argument("--dataset", required=True)
    r.add_argument("--config", help="INI config (defaults used when omitted)")
    r.add_argument("--preset", default="All", choices=list(PRESETS))
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="sweep presets over seeds, pool error CDFs")
    c.add_argument("--config", help="INI config (defaults used when omitted)")
    c.add_argument("--out", required=True, help="output directory")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--duration", type=float, help="override [sim] duration")
    c.add_argument("--presets", default=",".join(PRESETS),
                   help="comma-separated subset of presets")
    c.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NotAnchoredError, LinearSolveFailure, InfeasibleChainError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
