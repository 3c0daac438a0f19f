"""Command-line entry point: ``opeval <mode> --config <path> --out <dir>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import MODES, load_config
from .errors import ConfigError, NumericalError
from .experiment import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opeval", description="Offline policy evaluation experiments.")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="INI experiment configuration")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override experiment.master_seed")
    parser.add_argument("--fast", action="store_true", help="reduced repetitions and sample sizes")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        cfg = load_config(args.config).with_overrides(seed=args.seed, mode=args.mode)
        summary = run_experiment(cfg, args.out, fast=args.fast)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{summary['mode']} finished: seed={summary['seed']}, config_hash={summary['config_hash']}, "
          f"output in {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
