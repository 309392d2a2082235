"""Command-line entry point.

Exit codes: 0 success, 2 configuration/schema error, 3 numeric failure,
4 fingerprint conflict.
"""

import argparse
import logging
import sys

from .errors import ConfigurationError, FingerprintConflictError, IngestionError, NumericError
from .experiment import STAGES, ExperimentConfig, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_FINGERPRINT = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trigward",
        description="Train trigger-activated classifiers and benchmark their "
                    "robustness to transferred sign-gradient attacks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("train", "train every configured model (cached by fingerprint)"),
            ("attack", "generate perturbation archives on the surrogates"),
            ("eval", "fill robustness matrices from persisted archives"),
            ("theory", "run the first-order checks on triggered victims"),
            ("report", "emit tables, plots, and the manifest"),
            ("all", "run every stage in dependency order")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", default=None, help="artifact directory (defaults to config)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--resume", action="store_true",
                       help="reuse fingerprint-matched artifacts (the default behavior)")
        p.add_argument("--parallel", type=int, default=1, metavar="K",
                       help="train independent models across K processes")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = ExperimentConfig.load(args.config)
        if args.seed is not None:
            config = ExperimentConfig({**config.raw, "seed": args.seed})
        stages = STAGES if args.command == "all" else _stages_through(args.command)
        artifact = run_experiment(config, out=args.out, stages=stages,
                                  parallel=args.parallel, resume=True)
        print(f"artifact directory: {artifact.out_dir}")
        return EXIT_OK
    except FingerprintConflictError as e:
        print(f"fingerprint conflict: {e}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (ConfigurationError, IngestionError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e} {e.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC


def _stages_through(command):
    """A stage implies its upstream dependencies (cache hits make them cheap)."""
    order = list(STAGES)
    return tuple(order[: order.index(command) + 1])


if __name__ == "__main__":
    sys.exit(main())
