"""Command-line front end.

Subcommands: ``simulate-delays`` (cache a queuing-delay pool), ``run``
(full Monte Carlo comparison), ``bound`` (genie lower bound only), and
``classify`` (EM attack classification on one synthesized trial). Exit
codes: 0 success, 1 configuration problems, 2 runtime/convergence
failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .delaysim import simulate_cascade, write_delays_csv
from .em import write_em_trace_csv
from .errors import (
    ConfigError,
    DegenerateSupportError,
    NoCleanLinkError,
    NumericalSupportError,
    SupportMismatchError,
)
from .harness import (
    ExperimentConfig,
    cache_delay_pool,
    classify_once,
    emit_table,
    load_config,
    run_experiment,
)

_RUNTIME_ERRORS = (
    DegenerateSupportError,
    NoCleanLinkError,
    NumericalSupportError,
    SupportMismatchError,
)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ptpkit",
        description="Delay-attack simulation and robust offset estimation",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate-delays", "simulate a queuing-delay pool and write CSV"),
        ("run", "run the configured Monte Carlo comparison"),
        ("bound", "genie lower bound only"),
        ("classify", "EM attack classification on one synthesized trial"),
    ):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--verbose", action="store_true",
                        help="dump EM iteration traces")
    return p


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _summarize(table) -> list[str]:
    lines = []
    for r in table.rows:
        acc = ("" if np.isnan(r.classification_accuracy)
               else f" acc={r.classification_accuracy:.3f}")
        lines.append(
            f"{r.approach} P={r.P}: rmse={r.rmse_s:.3e}s "
            f"std={r.std_s:.3e}s bias={r.bias_s:.3e}s "
            f"n={r.n_trials}{acc}"
        )
    return lines


def cli_main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "simulate-delays":
            path = cache_delay_pool(cfg, args.out)
            pool = simulate_cascade(cfg.traffic, cfg.pool_size, seed=cfg.seed)
            print(
                f"simulated {cfg.pool_size} delays "
                f"({cfg.traffic_model} load={cfg.load:g}): "
                f"mean={pool.mean:.3e}s std={pool.variance**0.5:.3e}s -> {path}"
            )
            return 0
        if args.command in ("run", "bound"):
            if args.command == "bound":
                cfg = dataclasses.replace(cfg, approaches=("genie",))
            trace_dir = args.out if args.verbose else None
            table = run_experiment(cfg, trace_dir=trace_dir)
            out_csv = os.path.join(args.out, "results.csv")
            emit_table(table, out_csv)
            cache_delay_pool(cfg, args.out)
            for line in _summarize(table):
                print(line)
            print(f"wrote {out_csv}")
            return 0
        if args.command == "classify":
            truth, _, res = classify_once(cfg)
            pi = ", ".join(f"{x:.3f}" for x in res.theta.pi)
            attacked = np.flatnonzero(res.attacked).tolist()
            true_set = np.flatnonzero(truth.eta).tolist()
            print(f"pi = [{pi}]")
            print(f"classified attacked links: {attacked} (truth: {true_set})")
            print(f"converged: {res.converged} after {res.n_iterations} iterations")
            if args.verbose:
                trace_path = os.path.join(args.out, "em_trace_0.csv")
                write_em_trace_csv(res.trace, trace_path)
                print(f"wrote {trace_path}")
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
