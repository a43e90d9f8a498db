"""Command-line interface: run, sweep, report, selftest.

Exit codes: 0 success, 1 configuration error, 2 runtime abort during a sweep,
3 selftest failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import selftest as selftest_mod
from .errors import CadError, ConfigurationError
from .experiments import (
    PRESETS,
    load_record,
    resolve_config,
    run_sweep,
    save_record,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_SELFTEST = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadsim",
        description="Cooperative activity detection simulator for cell-free random access.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True,
                       help=f"config JSON path or preset name {sorted(PRESETS)}")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--trials", type=int, default=None, help="trials per grid point")
        p.add_argument("--mode", choices=["sourced", "unsourced"], default=None)
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--workers", type=int, default=1, help="trial worker processes")

    p_run = sub.add_parser("run", help="execute a config file as-is")
    add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="execute a config with axis overrides")
    add_common(p_sweep)
    p_sweep.add_argument("--axis", default=None, help="sweep axis name")
    p_sweep.add_argument("--grid", default=None, help="comma-separated grid values")

    p_report = sub.add_parser("report", help="convert a RunRecord JSON to plot CSV")
    p_report.add_argument("record", help="RunRecord JSON path")
    p_report.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    p_self = sub.add_parser("selftest", help="run the built-in identity/oracle suite")
    p_self.add_argument("--quiet", action="store_true")
    return parser


def _parse_grid(text: str):
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(int(token))
        except ValueError:
            values.append(float(token))
    if not values:
        raise ConfigurationError("grid must contain at least one value")
    return tuple(values)


def _apply_overrides(config, args):
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.trials is not None:
        config = replace(config, trials=args.trials)
    if args.mode is not None and args.mode != config.mode:
        raise ConfigurationError(
            f"--mode {args.mode} conflicts with the config's mode {config.mode!r}; "
            "pick a config of the requested mode"
        )
    if getattr(args, "axis", None) is not None:
        config = replace(config, axis=args.axis)
    if getattr(args, "grid", None) is not None:
        config = replace(config, grid=_parse_grid(args.grid))
    config.validate()
    return config


def _execute(args) -> int:
    config = _apply_overrides(resolve_config(args.config), args)
    printer = None
    if not args.quiet:
        def printer(axis, value, mean, stderr):
            shown = "nan" if mean is None else f"{mean:.6g}"
            print(f"{axis}={value}: metric {shown} +/- {stderr:.2g}")
    record = run_sweep(config, workers=args.workers, progress=printer)
    total_aborts = sum(p["aborts"] for p in record.points)
    name = f"record_{record.fingerprint}_{record.master_seed}.json"
    path = os.path.join(args.out, name)
    save_record(record, path)
    if not args.quiet:
        print(f"wrote {path}")
    return EXIT_RUNTIME if total_aborts else EXIT_OK


def _report(args) -> int:
    record = load_record(args.record)
    csv_text = record.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("run", "sweep"):
            return _execute(args)
        if args.command == "report":
            return _report(args)
        if args.command == "selftest":
            ok = selftest_mod.run_selftest(quiet=args.quiet)
            return EXIT_OK if ok else EXIT_SELFTEST
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CadError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
