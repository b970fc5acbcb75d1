"""Command-line front end.

Subcommands: collect, train, estimate, simulate, verify, bench. Each takes
--config FILE or --preset {di,quad} plus optional --seed and --out-dir
overrides. Exit codes: 0 success, 1 configuration error, 2 runtime budget
exceeded. The output directory can also be overridden with ORIO_OUT_DIR.

Heavy imports happen after argument parsing so `bench` can pin BLAS to a
single thread before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orio",
        description="Residual-distribution learning and risk-informed "
                    "barrier safety filtering")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="path to a key-value config file")
        src.add_argument("--preset", choices=["di", "quad"],
                         help="stock configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override every section seed")
        p.add_argument("--out-dir", default=None, help="override output directory")

    p = sub.add_parser("collect", help="simulate trajectories and write the dataset")
    common(p)
    p.add_argument("--dataset", default=None, help="dataset output path")

    p = sub.add_parser("train", help="fit the residual model (cvae or mlp)")
    common(p)
    p.add_argument("--dataset", default=None, help="dataset input path")
    p.add_argument("--model", default=None, help="model output path")
    p.add_argument("--kind", choices=["cvae", "mlp"], default=None,
                   help="override train.model")

    p = sub.add_parser("estimate", help="moment-estimation sweep over the state grid")
    common(p)
    p.add_argument("--model", default=None, help="trained cvae path")
    p.add_argument("--out", default=None, help="estimates CSV path")

    p = sub.add_parser("simulate", help="one filtered closed-loop rollout")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--regressor", default=None)
    p.add_argument("--ablation", default=None, help="override simulate.ablation")
    p.add_argument("--out", default=None, help="trajectory CSV path")

    p = sub.add_parser("verify", help="Monte Carlo exit-probability verification")
    common(p)
    p.add_argument("--dataset", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--regressor", default=None)
    p.add_argument("--out", default=None, help="report CSV path")

    p = sub.add_parser("bench", help="estimator timing benchmark (single-threaded)")
    common(p)
    p.add_argument("--model", default=None, help="trained cvae path")
    p.add_argument("--out", default=None, help="timing CSV path")
    return parser


def _pin_single_thread() -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench":
        _pin_single_thread()

    from dataclasses import replace

    from . import experiments
    from .config import load_config, preset
    from .errors import BudgetExceededError, ConfigError, OrioError

    try:
        config = load_config(args.config) if args.config else preset(args.preset)
        if args.out_dir:
            config = replace(config, out_dir=args.out_dir)
        if getattr(args, "kind", None):
            config = replace(config, train_model=args.kind)
        if getattr(args, "ablation", None):
            config = replace(config, simulate_ablation=args.ablation)
        if args.seed is not None:
            config = replace(
                config,
                collect_seed=args.seed, train_seed=args.seed,
                estimate_seed=args.seed, verify_seed=args.seed,
                simulate_seed=args.seed, bench_seed=args.seed)
        config = config.validate()

        def default(path, name):
            return path if path else experiments.out_path(config, name)

        if args.command == "collect":
            experiments.run_collect(config, dataset_path=args.dataset)
        elif args.command == "train":
            experiments.run_train(config, default(args.dataset, "dataset.csv"),
                                  model_path=args.model)
        elif args.command == "estimate":
            experiments.run_estimate(config, default(args.model, "cvae.txt"),
                                     estimates_path=args.out)
        elif args.command == "simulate":
            experiments.run_simulate(
                config, dataset_path=default(args.dataset, "dataset.csv"),
                model_path=default(args.model, "cvae.txt"),
                regressor_path=default(args.regressor, "mlp.txt"),
                trajectory_path=args.out)
        elif args.command == "verify":
            experiments.run_verify(
                config, dataset_path=default(args.dataset, "dataset.csv"),
                model_path=default(args.model, "cvae.txt"),
                regressor_path=default(args.regressor, "mlp.txt"),
                report_path=args.out)
        elif args.command == "bench":
            experiments.run_bench(config, default(args.model, "cvae.txt"),
                                  bench_path=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except BudgetExceededError as exc:
        print(f"runtime budget exceeded: {exc}", file=sys.stderr)
        return 2
    except OrioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
