"""
CLI for the ion-saturation toolkit.

Predicts saturation powers and coupling budgets, fits measured saturation
curves, and simulates and reconstructs saturation-based focal scans.
"""
import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Any

from ._version import __version__
from .command_base import CommandHandler
from .commands import create_command
from .config import load_config
from .errors import DataFormatError, IonSaturationError
from .report import FORMATS

logger = logging.getLogger(__name__)

# Debug mode flag - accessible from other modules
DEBUG = False


def configure_logging(debug: bool = False) -> None:
    """Configure the root logger once; --debug selects DEBUG, otherwise WARNING."""
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subcommand per command."""
    parser = argparse.ArgumentParser(
        prog="ion-saturation",
        description="Ion saturation and parabolic mirror coupling toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Minimal and expected saturation powers for the shipped Yb+ defaults
  ion-saturation predict

  # Fit the bundled synthetic saturation curve
  ion-saturation fit

  # Fit your own data with a custom configuration, as CSV rows
  ion-saturation --config my.json --format csv fit data.csv

  # Simulate and reconstruct a focal scan
  ion-saturation --seed 7 --out scan/ scan simulate
  ion-saturation --out scan/ scan reconstruct
        """,
    )

    parser.add_argument("--debug", action="store_true", help="Enable debug mode")
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "--config", help="JSON configuration merged over the shipped defaults"
    )
    parser.add_argument("--seed", type=int, help="Override scan.seed")
    parser.add_argument(
        "--out", help="Output directory for reports and data files"
    )
    parser.add_argument(
        "--format",
        choices=FORMATS,
        default="json",
        help="Report format (default: json)",
    )

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("predict", help="Minimal and expected saturation powers")

    fit = commands.add_parser("fit", help="Fit a saturation curve")
    fit.add_argument(
        "csv", nargs="?", help="Saturation CSV (default: bundled synthetic dataset)"
    )

    scan = commands.add_parser("scan", help="Saturation-based focal scans")
    scan_modes = scan.add_subparsers(dest="mode", required=True)
    scan_modes.add_parser("simulate", help="Write a forward-scan CSV")
    reconstruct = scan_modes.add_parser(
        "reconstruct", help="Fit a forward-scan CSV into a focal map"
    )
    reconstruct.add_argument(
        "scan_csv", nargs="?", help="Forward-scan CSV (default: OUT/scan_simulate.csv)"
    )

    commands.add_parser(
        "optimize-waist", help="Doughnut waist maximizing the dipole overlap"
    )

    coupling = commands.add_parser(
        "coupling-report", help="Measured vs expected coupling efficiency"
    )
    source = coupling.add_mutually_exclusive_group()
    source.add_argument(
        "--p-exp", type=float, help="Measured rho=1/4 power in pW (default: fit CSV)"
    )
    coupling.add_argument(
        "--fit-sigma", type=float, default=0.0, help="Fit uncertainty of --p-exp in pW"
    )
    coupling.add_argument(
        "--at-mirror",
        action="store_true",
        help="--p-exp is measured before the mirror reflection",
    )
    source.add_argument("--csv", help="Saturation CSV to fit instead of --p-exp")
    return parser


def command_arguments(args: argparse.Namespace) -> tuple[str, dict[str, Any]]:
    """Map parsed arguments to a command name and its run() keyword arguments."""
    out_dir = args.out or "."
    if args.command == "fit":
        return "fit", {"csv_path": args.csv}
    if args.command == "scan":
        if args.mode == "simulate":
            return "scan simulate", {"out_dir": out_dir}
        return "scan reconstruct", {"scan_path": args.scan_csv, "out_dir": out_dir}
    if args.command == "coupling-report":
        return "coupling-report", {
            "p_exp_pw": args.p_exp,
            "fit_sigma_pw": args.fit_sigma,
            "at_mirror": args.at_mirror,
            "csv_path": args.csv,
        }
    return args.command, {}


def run_command(args: argparse.Namespace) -> int:
    """Run one parsed command line and return the process exit code."""
    command: CommandHandler | None = None
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_overrides({"scan.seed": args.seed})
        name, kwargs = command_arguments(args)
        command = create_command(name, config)
        report = command.run(**kwargs)
        if args.out:
            path = report.write(args.out, args.format)
            logger.info(f"Report written to {path}")
        print(report.render(args.format))
        return 0
    except IonSaturationError as e:
        print(f"❌ {e}", file=sys.stderr)
        if command is not None:
            diagnostics = command.handle_error(e).get("diagnostics")
            if diagnostics:
                print(f"   diagnostics: {diagnostics}", file=sys.stderr)
        if DEBUG:
            traceback.print_exc()
        return e.exit_code
    except OSError as e:
        print(f"❌ {e.strerror}: {e.filename}", file=sys.stderr)
        return DataFormatError.exit_code


def main(argv: list[str] | None = None) -> int:
    """Entry point for the CLI application."""
    global DEBUG
    args = build_parser().parse_args(argv)
    DEBUG = args.debug
    configure_logging(DEBUG)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)

    try:
        return run_command(args)
    except KeyboardInterrupt:
        print("\n👋 Interrupted by user", file=sys.stderr)
        return 130
    except Exception as e:
        print(f"❌ Application error: {e}", file=sys.stderr)
        if DEBUG:
            traceback.print_exc()
        return 1


def run_cli():
    """Entry point for main.py; exits with the command status."""
    sys.exit(main())


if __name__ == "__main__":
    run_cli()
