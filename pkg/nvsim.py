import argparse
import logging
import sys

from components import analysis_commands, kinetics_commands, simulation_commands
from core import __version__
from core.errors import EXIT_USAGE_ERROR, NVSimError, exit_code_for

LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nvsim",
        description="Charge-state and nuclear-spin QND simulator for a single NV center",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON config file (default: $NVSIM_CONFIG, else built-in defaults)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    simulation_commands.register(subparsers)
    kinetics_commands.register(subparsers)
    analysis_commands.register(subparsers)
    return parser


# ===== MAIN APPLICATION =====
def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVELS.get(args.verbose, logging.DEBUG),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NVSimError as exc:
        print(f"nvsim: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"nvsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
