"""Command-line entry point: ``ganlab train|dirac|diag|sweep``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import losses
from .config import (
    ConfigError,
    build_dirac_config,
    list_presets,
    parse_config,
    parse_dataset_spec,
    parse_grid,
    resolve,
    _read_ini,
)
from .datasets import IdxError
from .dirac import train_dirac, write_curves, write_history_csv
from .nn import load_checkpoint
from .train import DataSource, NumericalFailure, run_experiment, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="ganlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ganlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a GAN from a config file or preset")
    t.add_argument("--config", required=True, help="INI file or preset name")
    t.add_argument("--seed", type=int, help="run only this seed")
    t.add_argument("--out", help="output directory (default: train.out)")
    t.add_argument("--resume", action="store_true", help="continue from the newest state file")

    d = sub.add_parser("dirac", help="run the Dirac GAN bench")
    d.add_argument("--preset", required=True, help="dirac preset name or INI file")
    d.add_argument("--lr", type=float)
    d.add_argument("--penalty", help="'none' or 'r1:LAMBDA'")
    d.add_argument("--replay", action="store_true", help="add the previous fake position to the D loss")
    d.add_argument("--iters", type=int)
    d.add_argument("--out", default="dirac_out")

    g = sub.add_parser("diag", help="landscape diagnostics of a saved discriminator")
    g.add_argument("--checkpoint", required=True, help="discriminator checkpoint file")
    g.add_argument("--dataset", required=True, help="e.g. 'ring:radius=2,mode_std=0.05' or 'mnist:images=P,labels=P'")
    g.add_argument("--out", required=True)
    g.add_argument("--generator", help="generator checkpoint, enables mode coverage")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--anchors", type=int, default=64)
    g.add_argument("--k", type=float, help="slice half-width (default 2 for 2-D data, 100 otherwise)")
    g.add_argument("--points", type=int, default=201)
    g.add_argument("--window", type=int, default=5)

    s = sub.add_parser("sweep", help="run a config over a grid of overrides")
    s.add_argument("--config", required=True, help="INI file or preset name")
    s.add_argument("--grid", action="append", default=[], help="section.key=v1,v2,... (repeatable)")
    s.add_argument("--out")
    s.add_argument("--workers", type=int, default=1)
    return p


def cmd_train(args):
    cfg = parse_config(resolve(args.config))
    seeds = [args.seed] if args.seed is not None else None
    results = run_experiment(cfg, out=args.out, seeds=seeds, resume=args.resume)
    for r in results:
        print(f"seed {r.seed}: {r.state.t} iterations -> {r.out_dir}")
    return EXIT_OK


def cmd_dirac(args):
    raw = _read_ini(resolve(args.preset))
    section = raw.setdefault("dirac", {})
    if args.lr is not None:
        section["lr"] = str(args.lr)
    if args.iters is not None:
        section["iters"] = str(args.iters)
    if args.replay:
        section["replay_old_fake"] = "true"
    if args.penalty is not None:
        kind, _, lam = args.penalty.partition(":")
        if kind not in ("none", "r1") or (kind == "r1" and not lam):
            raise ConfigError(f"--penalty must be 'none' or 'r1:LAMBDA', got {args.penalty!r}")
        section["penalty"] = kind
        section["lambda"] = lam or "0"
    cfg = build_dirac_config(raw)
    hist = train_dirac(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_history_csv(os.path.join(args.out, "history.csv"), hist)
    write_curves(os.path.join(args.out, "curves"), hist)
    r = hist.radius_sq
    print(f"final theta={hist.theta[-1]!r}  min/initial radius^2={float(r.min() / r[0])!r}")
    if hist.diverged:
        print("diverged: |theta| exceeded the guard", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_diag(args):
    spec = parse_dataset_spec(args.dataset)
    D, _ = load_checkpoint(args.checkpoint)
    if D.config.input_dim != spec.dim:
        raise ConfigError(f"checkpoint expects {D.config.input_dim}-D inputs, dataset is {spec.dim}-D")
    rng = np.random.default_rng(args.seed)
    data = DataSource(spec)
    anchors = data.sample(args.anchors, rng)
    k = args.k if args.k is not None else (2.0 if spec.dim == 2 else 100.0)
    direction = dg.random_direction(spec.dim, rng)
    slices = dg.slice_many(D, anchors, direction, -k, k, args.points)
    os.makedirs(args.out, exist_ok=True)
    dg.write_slices_csv(os.path.join(args.out, "slices.csv"), slices)
    summary = {
        "mean_monotonicity": float(np.mean([dg.monotonicity_score(s) for s in slices])),
        "local_max_frac": float(np.mean([dg.detect_local_maximum(s, args.window) for s in slices])),
        "median_basin_width": float(np.median([dg.basin_width(s) for s in slices])),
    }
    if spec.dim == 2:
        variant = losses.GanVariant("wgan_gp", 1.0) if D.config.output_activation == "linear" else losses.GanVariant()
        grid = dg.lattice(-3.0, 3.0, -3.0, 3.0, 21, 21)
        field = dg.gradient_field(lambda x: losses.generator_loss_per_sample(variant, D, x), grid, real=anchors)
        dg.write_field_csv(os.path.join(args.out, "field.csv"), field)
        if args.generator:
            G, _ = load_checkpoint(args.generator)
            hit, counts = dg.mode_coverage(G(rng.standard_normal((2500, G.config.input_dim)), track=False), spec.ring)
            summary["modes_hit"] = hit
            summary["mode_counts"] = counts.tolist()
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args):
    cfg = parse_config(resolve(args.config))
    grid = parse_grid(args.grid)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    for out in run_sweep(cfg, grid, out=args.out, workers=args.workers):
        print(out)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "dirac": cmd_dirac, "diag": cmd_diag, "sweep": cmd_sweep}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors are configuration errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, IdxError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def presets_help():
    return ", ".join(list_presets())


if __name__ == "__main__":
    sys.exit(main())
