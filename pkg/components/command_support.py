"""Pieces shared by every sub-command: common flags, config resolution and output."""
import argparse
import logging

from core.charge_kinetics import ChargePopulations, ChargeRateModel, Laser
from core.config import build_kinetics, build_readout, build_spin_system, resolve_config
from core.errors import EXIT_OK, ParseError, UsageError
from core.output import write_outputs
from core.pulse_dsl import UNITS, Dimension, parse_quantity
from core.qnd import QNDExecutor

logger = logging.getLogger(__name__)

# command name -> handler(args, config) -> CommandOutput
COMMANDS = {}

# flag dest -> dotted config key
OVERRIDES = {
    "isotope": "spin.isotope",
    "field_T": "spin.field_T",
    "fidelity": "readout.fidelity",
    "eta": "kinetics.misalignment_eta",
    "seed": "simulation.seed",
    "shots": "simulation.n_shots",
    "workers": "simulation.workers",
}

# never recorded in manifests
_UNRECORDED = {"func", "verbose", "config", "out", "command"}


def command(name):
    def register(handler):
        COMMANDS[name] = handler
        return handler
    return register


def quantity(dimension, default_unit):
    """argparse type: '120us' or a bare number in default_unit -> base units"""
    def convert(text):
        try:
            return float(text) * 10.0 ** UNITS[default_unit][1]
        except ValueError:
            pass
        try:
            return parse_quantity(text, dimension)
        except ParseError as exc:
            raise argparse.ArgumentTypeError(f"{text!r}: {exc.message}")
    convert.__name__ = f"{dimension.value} quantity"
    return convert


FREQUENCY_MHZ = quantity(Dimension.FREQUENCY, "MHz")
FREQUENCY_KHZ = quantity(Dimension.FREQUENCY, "kHz")
TIME_S = quantity(Dimension.TIME, "s")
POWER_MW = quantity(Dimension.POWER, "mW")


def output_parent():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--out", help="CSV path (default: <command>.csv, '-' for stdout)")
    return parent


def physics_parent():
    """Flags overriding the configuration for any simulation"""
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("model overrides")
    group.add_argument("--isotope", choices=["N14", "N15"])
    group.add_argument("--field-T", dest="field_T", type=float, help="magnetic field in tesla")
    group.add_argument("--fidelity", type=float, help="readout fidelity F")
    group.add_argument("--eta", type=float, help="misalignment factor in (0, 1]")
    group.add_argument("--shots", type=int, help="shots per grid point")
    group.add_argument("--seed", type=int, help="master seed")
    group.add_argument("--workers", type=int, help="worker processes for grid scans")
    return parent


def config_overrides(args):
    return {key: getattr(args, dest, None) for dest, key in OVERRIDES.items()}


def recorded_args(args):
    return {k: v for k, v in vars(args).items() if k not in _UNRECORDED}


def initial_populations(kin, choice):
    if choice == "bright":
        return ChargePopulations.bright()
    if choice == "dark":
        return ChargePopulations.from_bright(0.0)
    return ChargeRateModel.steady_state(kin, Laser.GREEN)


def build_executor(config, choice="steady"):
    system = build_spin_system(config)
    kin = build_kinetics(config)
    return QNDExecutor(system, kin, build_readout(config), initial_populations(kin, choice), workers=config.workers)


def require(condition, message):
    if not condition:
        raise UsageError(message)


def execute(args):
    """Resolve the configuration, run the handler, write CSV and manifest"""
    shots = getattr(args, "shots", None)
    require(shots is None or shots >= 1, "--shots must be >= 1")
    config = resolve_config(args.config, config_overrides(args))
    logger.info("%s: seed %d, %d shots per point", args.command, config.seed, config.n_shots)
    output = COMMANDS[args.command](args, config)
    out = args.out or f"{args.command}.csv"
    manifest = write_outputs(args.command, recorded_args(args), config, output, out)
    if manifest is not None:
        logger.info("manifest %s", manifest)
    return EXIT_OK


def add_initial(parser):
    parser.add_argument("--initial", choices=["steady", "bright", "dark"], default="steady",
                        help="charge populations before the program (default: green steady state)")
