"""Command line driver.

    python -m stiso cases
    python -m stiso run   CONFIG [--levels 0,1] [--seed N] [--out FILE]
    python -m stiso study CONFIG [--levels N]   [--seed N] [--out FILE]

Exit codes: 0 success, 1 EOC threshold missed, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
import warnings

from .analysis import _fmt
from .study import (ConfigError, NumericalFailure, StudyConfig, eoc_table, install_warning_printer, list_cases,
                    run_case, run_study)

EXIT_OK, EXIT_THRESHOLD, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="stiso", description="Space-time isoparametric geometry studies")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("cases", help="list built-in level set cases")
    for name, helptext, levels_help in (
        ("run", "evaluate metrics on single ladder levels", "comma-separated level indices (default 0)"),
        ("study", "run a refinement ladder and check EOC thresholds", "number of ladder levels"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config")
        s.add_argument("--levels", help=levels_help)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="CSV output path")
    return p


def _cmd_cases():
    for name, schema in list_cases():
        print(name)
        for key, desc in schema.items():
            print(f"  {key}: {desc}")
    return EXIT_OK


def _cmd_run(cfg, args):
    levels = [0] if args.levels is None else [int(v) for v in args.levels.split(",")]
    rows = []
    for lv in levels:
        vals = run_case(cfg, lv, args.seed)
        rows.append((lv, vals))
        print(f"level {lv}: " + ", ".join(f"{k}={v:.6e}" for k, v in vals.items()))
    if args.out:
        keys = ["h", "dt"] + list(cfg.metrics)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level"] + keys)
            for lv, vals in rows:
                w.writerow([lv] + [_fmt(vals[k]) for k in keys])
    return EXIT_OK


def _cmd_study(cfg, args):
    levels = None if args.levels is None else int(args.levels)
    res = run_study(cfg, levels=levels, seed=args.seed, out=args.out,
                    log=lambda s: print(s, file=sys.stderr))
    print(eoc_table(res.record))
    for name, order, target in res.failures:
        print(f"FAIL {name}: EOC {order:.3f} < {target}", file=sys.stderr)
    return EXIT_THRESHOLD if res.failures else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    with warnings.catch_warnings():
        install_warning_printer()
        return _dispatch(args)


def _dispatch(args) -> int:
    if args.command == "cases":
        return _cmd_cases()
    try:
        cfg = StudyConfig.load(args.config)
        if args.levels is not None and not all(p.strip().isdigit() for p in args.levels.split(",")):
            raise ConfigError(f"invalid --levels {args.levels!r}")
        return _cmd_run(cfg, args) if args.command == "run" else _cmd_study(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
