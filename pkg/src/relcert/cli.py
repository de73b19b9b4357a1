"""Command line entry point: ``relcert verify ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .errors import NetworkFormatError, PropertyError, SolverError
from .pipeline import METHODS, RunConfig, run

log = logging.getLogger("relcert")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SOLVER = 3

CSV_FIELDS = ("method", "epsilon", "k", "bound", "seconds")


def _writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise OSError(f"output directory does not exist: {parent}")
    return Path(path)


def emit_reports(report, config):
    """Write the JSON report and append one CSV row; returns the paths written."""
    written = []
    if config.out:
        path = _writable(config.out)
        text = json.dumps(report.to_dict(timings=config.timings), indent=2, sort_keys=False)
        path.write_text(text + "\n")
        written.append(path)
    if config.csv:
        path = _writable(config.csv)
        new = not path.exists() or path.stat().st_size == 0
        with path.open("a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(CSV_FIELDS)
            seconds = round(sum(report.timings.values()), 6) if config.timings else ""
            writer.writerow([report.method, report.epsilon, report.k, report.bound, seconds])
        written.append(path)
    return written


def build_parser():
    parser = argparse.ArgumentParser(prog="relcert", description="Certify relational properties of ReLU networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="bound worst-case k-UAP accuracy or hamming distance")
    v.add_argument("--network", required=True, help="network JSON")
    v.add_argument("--data", required=True, help="inputs/labels JSON")
    v.add_argument("--property", choices=("kuap", "hamming"), default="kuap")
    v.add_argument("--epsilon", type=float, default=None, help="perturbation radius (overrides the data file)")
    v.add_argument("--norm", default=None, help="'inf' or p >= 1 (overrides the data file)")
    v.add_argument("--k", type=int, default=None, help="use only the first k executions")
    v.add_argument("--method", choices=METHODS, default="racoon")
    v.add_argument("--k0", type=int, default=6)
    v.add_argument("--k1", type=int, default=4)
    v.add_argument("--adam-iters", type=int, default=20)
    v.add_argument("--lr-alpha", type=float, default=0.1)
    v.add_argument("--lr-lambda", type=float, default=0.1)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None, help="report JSON path (stdout if omitted)")
    v.add_argument("--csv", default=None, help="CSV file to append a sweep row to")
    v.add_argument("--no-timings", action="store_true", help="omit timings for byte-stable reports")
    v.add_argument("--no-elimination", action="store_true", help="keep verified executions in the MILP")
    v.add_argument("--check-dominance", action="store_true", help="run every method and assert their ordering")
    v.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = RunConfig(network=args.network, data=args.data, property=args.property, epsilon=args.epsilon,
                           norm=args.norm, k=args.k, k0=args.k0, k1=args.k1, adam_iters=args.adam_iters,
                           lr_alpha=args.lr_alpha, lr_lambda=args.lr_lambda, method=args.method, seed=args.seed,
                           out=args.out, csv=args.csv, timings=not args.no_timings,
                           elimination=not args.no_elimination)
        for target in (config.out, config.csv):
            if target:
                _writable(target)
        report = run(config, check=args.check_dominance)
    except (PropertyError, NetworkFormatError) as exc:
        print(f"relcert: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverError as exc:
        print(f"relcert: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"relcert: {exc}", file=sys.stderr)
        return 1
    try:
        written = emit_reports(report, config)
    except OSError as exc:
        print(f"relcert: cannot write output: {exc}", file=sys.stderr)
        return 1
    if not config.out:
        print(json.dumps(report.to_dict(timings=config.timings), indent=2))
    log.info("bound %s (%s), wrote %s", report.bound, report.method, ", ".join(map(str, written)) or "nothing")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
