"""Command-line interface: ``ergoloop {simulate,certify,reproduce,sweep}``."""

from __future__ import annotations

import argparse
import sys
import warnings

from .config import ConfigError, load_config
from .experiments import (
    EXIT_OK,
    EXIT_USAGE,
    FIGURES,
    run_certify,
    run_reproduce,
    run_simulate,
    run_sweep,
)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1; status 2 is reserved for negative certificates."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ergoloop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="Monte Carlo run of a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--paths", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)

    c = sub.add_parser("certify", help="run the ergodicity certificates on a config")
    c.add_argument("--config", required=True)

    r = sub.add_parser("reproduce", help="run a figure preset")
    r.add_argument("--figure", type=int, required=True, choices=FIGURES)
    r.add_argument("--out", required=True)
    r.add_argument("--fast", action="store_true", help="200 paths instead of 2000")
    r.add_argument("--paths", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int, default=1)

    w = sub.add_parser("sweep", help="one Monte Carlo run per value of a config field")
    w.add_argument("--config", required=True)
    w.add_argument("--param", required=True, help="dotted path, e.g. controller.initial")
    w.add_argument("--values", required=True, help="comma-separated list")
    w.add_argument("--out", required=True)
    w.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = load_config(args.config)
            m = run_simulate(cfg, args.out, args.paths, args.horizon, args.seed, args.workers)
            print(f"wrote {len(m.files)} files to {args.out}")
            return EXIT_OK
        if args.command == "certify":
            report = run_certify(load_config(args.config))
            print(report.table())
            return report.exit_code
        if args.command == "reproduce":
            m = run_reproduce(args.figure, args.out, fast=args.fast, n_paths=args.paths,
                              seed=args.seed, workers=args.workers)
            print(f"wrote {len(m.files)} files to {args.out}")
            return EXIT_OK
        cfg = load_config(args.config)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            m = run_sweep(cfg, args.param, values, args.out, args.workers)
        print(f"wrote {len(m.files)} files to {args.out}")
        return EXIT_OK
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
