"""Command-line entry point: ``python -m app.main <subcommand> <recipe.yaml>``."""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import config
from . import __version__
from .errors import ConfigError
from .experiments import exit_code, load_run_config, run, validate

logger = logging.getLogger(__name__)

# Subcommand -> experiment kind
SUBCOMMANDS = {
    "beta-min": "beta-curve",
    "smoother": "smoother-curve",
    "amp-profile": "amplification-profile",
    "heatmap": "heatmap",
    "iter-min": "iteration-minimum",
    "hpc": "hpc-curve",
    "convfactor": "convfactor-table",
    "invariance": "invariance-check",
}


def configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, str(config.get("log_level", "info")).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftscope",
        description="Local Fourier Analysis and experiments for the complex shifted Laplacian.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, kind in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=f"run a {kind} recipe")
        sub.add_argument("recipe", type=Path, help="YAML recipe file")
        sub.add_argument("--output", type=Path, default=None,
                         help="output directory (default: SHIFTSCOPE_OUTPUT_DIR or config output_dir)")
        sub.add_argument("--jobs", type=int, default=None, help="number of worker processes")
        sub.add_argument("--seed", type=int, default=None, help="random seed for measured factors")
        sub.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="KEY=VALUE", help="override a recipe key (value parsed as YAML)")

    check = subparsers.add_parser("validate", help="check a recipe without running it")
    check.add_argument("recipe", type=Path, help="YAML recipe file")
    return parser


def _run_command(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    run_config = load_run_config(args.recipe, overrides)
    expected = SUBCOMMANDS[args.command]
    if run_config.kind != expected:
        raise ConfigError([f"recipe kind {run_config.kind!r} does not match subcommand "
                           f"{args.command!r} (expects {expected!r})"])
    result = run(run_config, output_dir=args.output, jobs=args.jobs)
    return exit_code(result, run_config)


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)

    if args.command == "validate":
        violations = validate(args.recipe)
        if violations:
            for violation in violations:
                print(f"{args.recipe}: {violation}", file=sys.stderr)
            return 2
        print(f"{args.recipe}: ok")
        return 0

    try:
        return _run_command(args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"{args.recipe}: {violation}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
