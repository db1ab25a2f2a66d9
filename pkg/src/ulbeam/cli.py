"""Command-line entry point (``ulbeam``).

Exit codes: 0 success, 1 unexpected error or failed verification,
2 configuration error, 3 solver failure while labeling, 4 shape mismatch,
5 missing checkpoint.
"""
from __future__ import annotations

import argparse
import os
import sys

from . import runner, verify
from .errors import ConfigError, DatasetError, MissingCheckpoint, ShapeMismatch, SolverFailure
from .experiment import ExperimentConfig, default_config
from .channels import KINDS

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_SHAPE, EXIT_CHECKPOINT = 0, 1, 2, 3, 4, 5
EXIT_BY_ERROR = {
    "ConfigError": EXIT_CONFIG,
    "DatasetError": EXIT_CONFIG,
    "SolverFailure": EXIT_SOLVER,
    "ShapeMismatch": EXIT_SHAPE,
    "MissingCheckpoint": EXIT_CHECKPOINT,
}


def _load(args):
    exp = ExperimentConfig.load(args.config)
    if getattr(args, "out", None):
        exp.output = args.out
    return exp


def cmd_print_config(args):
    sys.stdout.write(default_config(args.kind).to_yaml())
    return EXIT_OK


def cmd_gen_data(args):
    exp = _load(args)
    out = args.data or runner.data_dir(exp)
    manifests = runner.gen_data(exp, out)
    for split, man in manifests.items():
        print(f"{split}: {man['count']} samples -> {os.path.join(out, split)} (hash {man['scenario_hash'][:12]})")
    return EXIT_OK


def cmd_train(args):
    exp = _load(args)
    if args.epochs is not None:
        exp.train.epochs = args.epochs
    names = args.models.split(",") if args.models else None
    doc = runner.train_models(exp, args.data, args.models_dir, names, resume=args.resume)
    for name, info in doc["models"].items():
        if "best_epoch" in info:
            print(f"{name}: epochs {info['first_epoch']}-{info['last_epoch']}, best epoch {info['best_epoch']}")
    return EXIT_OK


def cmd_eval(args):
    exp = _load(args)
    schemes = args.schemes.split(",") if args.schemes else None
    rows = runner.evaluate(exp, schemes, args.data, args.models_dir)
    out = exp.output_dir()
    runner.write_table(rows, os.path.join(out, "results.csv"), os.path.join(out, "results.json"),
                       {"config": exp.to_dict()})
    for r in rows:
        print(f"{r['scheme']:18s} {r['mean_rate']:.4f} +- {r['stderr']:.4f}  NMSE {r['mean_nmse']:.4g}")
    return EXIT_OK


def cmd_sweep(args):
    exp = _load(args)
    if args.parallel < 1:
        raise ConfigError("--parallel must be at least 1")
    rows, failures = runner.sweep(exp, parallel=args.parallel)
    print(f"{len(rows)} rows -> {os.path.join(exp.output_dir(), 'sweep.csv')}")
    for value, kind, msg in failures:
        print(f"sweep point {value} failed: {kind}: {msg}", file=sys.stderr)
    if failures:
        return EXIT_BY_ERROR.get(failures[0][1], EXIT_FAIL)
    return EXIT_OK


def cmd_verify(args):
    return EXIT_OK if verify.run_all() else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="ulbeam", description="Learned downlink beamforming experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("print-config", help="print the default experiment config")
    s.add_argument("--kind", choices=KINDS, default="small_tdd")
    s.set_defaults(fn=cmd_print_config)

    def with_config(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="experiment YAML file")
        s.add_argument("--out", help="override the config's output directory")
        s.set_defaults(fn=fn)
        return s

    s = with_config("gen-data", cmd_gen_data, "generate labeled datasets")
    s.add_argument("--data", help="dataset directory (default <output>/data)")

    s = with_config("train", cmd_train, "train the networks the configured schemes need")
    s.add_argument("--data", help="dataset directory (default <output>/data)")
    s.add_argument("--models-dir", help="checkpoint directory (default <output>/models)")
    s.add_argument("--models", help="comma-separated subset of networks to train")
    s.add_argument("--epochs", type=int, help="override train.epochs")
    s.add_argument("--resume", action="store_true", help="continue from the last-epoch checkpoints")

    s = with_config("eval", cmd_eval, "score schemes on the test split")
    s.add_argument("--data", help="dataset directory (default <output>/data)")
    s.add_argument("--models-dir", help="checkpoint directory (default <output>/models)")
    s.add_argument("--schemes", help="comma-separated schemes (default: the config's)")

    s = with_config("sweep", cmd_sweep, "generate, train and evaluate over the sweep axis")
    s.add_argument("--parallel", type=int, default=1, help="sweep points run concurrently")

    s = sub.add_parser("verify", help="run the invariant battery")
    s.set_defaults(fn=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ShapeMismatch as exc:
        print(f"shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except MissingCheckpoint as exc:
        print(f"missing checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
