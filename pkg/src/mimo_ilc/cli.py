"""Command-line entry point: ``ilc run | sweep | certify | version``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import CertificationError, ConfigError, IlcError, InvalidArgument, NumericalError, UnreachableError
from .harness import ExperimentConfig, certify, export_report, run_ilc, speed_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CERTIFICATION = 3
EXIT_NUMERICAL = 4


def _periods(text: str) -> list:
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad period list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilc", description="Frequency-domain MIMO learning control on a simulated plant.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full learning-control experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (overrides the config)")

    sweep = sub.add_parser("sweep", help="initial tracking error for several task periods")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--periods", type=_periods, default=[0.5, 2.0, 5.0, 10.0])

    cert = sub.add_parser("certify", help="gain feasibility report from the learning trials")
    cert.add_argument("--config", required=True)

    sub.add_parser("version", help="print the package version")
    return parser


def _run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    result = run_ilc(cfg)
    export_report(result, cfg, out)
    final = result.max_errors[-1]
    print(f"iterations: {len(result.records) - 1}  converged: {result.converged}")
    print("final max error [rad]: " + " ".join(f"{e:.4f}" for e in final))
    print("reduction [%]: " + " ".join(f"{100 * r:.1f}" for r in result.reductions()))
    return EXIT_OK


def _sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    rows = speed_sweep(cfg, args.periods)
    m = rows[0][1].size if rows else 0
    print("T_s," + ",".join(f"E{j + 1}_0" for j in range(m)))
    for T, E in rows:
        print(f"{T:g}," + ",".join(f"{e:.6f}" for e in E))
    return EXIT_OK


def _certify(args) -> int:
    report = certify(ExperimentConfig.load(args.config))
    print(json.dumps(report, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    handlers = {"run": _run, "sweep": _sweep, "certify": _certify}
    try:
        return handlers[args.command](args)
    except (ConfigError, InvalidArgument, UnreachableError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATION
    except (NumericalError, np.linalg.LinAlgError, IlcError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
