"""kinetics and powerdep: deterministic charge-state population traces and rate laws."""
import logging

import numpy as np
import pandas as pd

from components.command_support import (
    POWER_MW, TIME_S, command, execute, initial_populations, output_parent, require,
)
from core.charge_kinetics import ChargeRateModel, Laser
from core.config import build_kinetics
from core.output import CommandOutput

logger = logging.getLogger(__name__)

TRANSITIONS = ("bright-to-dark", "dark-to-bright")


def _power_mW(args, kin, laser):
    if args.power is None:
        return kin.reference_power(laser)
    require(args.power > 0, "--power must be > 0")
    return args.power * 1e3


@command("kinetics")
def kinetics(args, config):
    require(args.points >= 2, "--points must be >= 2")
    laser = Laser(args.laser)
    kin = build_kinetics(config)
    power = _power_mW(args, kin, laser)
    if args.tau_target is not None:
        require(args.tau_target > 0, "--tau-target must be > 0")
        kin = kin.calibrated(laser, args.tau_target, power)
        logger.info("%s bright->dark law rescaled to k=%.6g MHz/mW",
                    laser.value, kin.laws(laser)[0].k)
    tau = ChargeRateModel.lifetime(kin, laser, power)
    duration = args.duration if args.duration is not None else 5.0 * tau
    require(np.isfinite(duration) and duration > 0, "--duration must be > 0")
    logger.info("%s at %.4g mW: lifetime %.4g s, trace of %.4g s", laser.value, power, tau, duration)

    initial = initial_populations(kin, args.initial)
    times = np.linspace(0.0, duration, args.points)
    p_bright = np.array([
        ChargeRateModel.evolve_populations(initial, kin, laser, power, float(t)).p_bright for t in times
    ])
    fluorescence = ChargeRateModel.fluorescence_trace(
        kin, laser, power, times, args.counts_bright, args.counts_dark, initial)
    table = pd.DataFrame({
        "time_s": times,
        "p_bright": p_bright,
        "p_dark": 1.0 - p_bright,
        "fluorescence_kcps": fluorescence,
    })
    if args.bin_time is not None:
        require(args.bin_time > 0, "--bin-time must be > 0")
        rng = np.random.default_rng(config.seed)
        table["counts"] = rng.poisson(fluorescence * 1e3 * args.bin_time)
    return CommandOutput(table, result={"lifetime_s": tau, "power_mW": power, "laser": laser.value})


@command("powerdep")
def powerdep(args, config):
    require(args.points >= 2, "--points must be >= 2")
    require(0 < args.pmin < args.pmax, "need 0 < --pmin < --pmax")
    laser = Laser(args.laser)
    kin = build_kinetics(config)
    to_dark, to_bright = kin.laws(laser)
    if args.transition == "bright-to-dark":
        law, eta = to_dark, kin.misalignment_eta
    else:
        law, eta = to_bright, 1.0
    require(law.k > 0, f"no {args.transition} transfer under {laser.value} light")
    powers = np.geomspace(args.pmin * 1e3, args.pmax * 1e3, args.points)
    rates = [ChargeRateModel.rate(law, float(p), eta) for p in powers]
    return CommandOutput(pd.DataFrame({"power_mW": powers, "rate_MHz": rates}))


def register(subparsers):
    out = output_parent()

    p = subparsers.add_parser("kinetics", parents=[out], help="charge populations under continuous illumination")
    p.add_argument("--laser", choices=["red", "green"], default="red")
    p.add_argument("--power", type=POWER_MW, help="laser power (mW; default: configured reference power)")
    p.add_argument("--tau-target", dest="tau_target", type=TIME_S,
                   help="rescale the bright->dark law so the lifetime equals this")
    p.add_argument("--duration", type=TIME_S, help="trace length (default: five lifetimes)")
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--initial", choices=["bright", "dark", "steady"], default="bright")
    p.add_argument("--counts-bright", dest="counts_bright", type=float, default=30.0, help="kcounts/s")
    p.add_argument("--counts-dark", dest="counts_dark", type=float, default=3.0, help="kcounts/s")
    p.add_argument("--bin-time", dest="bin_time", type=TIME_S,
                   help="add a Poisson 'counts' column integrated over this bin")
    p.add_argument("--eta", type=float, help="misalignment factor in (0, 1]")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=execute)

    p = subparsers.add_parser("powerdep", parents=[out], help="transfer rate against laser power")
    p.add_argument("--laser", choices=["red", "green"], default="red")
    p.add_argument("--transition", choices=TRANSITIONS, default="bright-to-dark")
    p.add_argument("--pmin", type=POWER_MW, default=1e-6, help="lowest power (mW)")
    p.add_argument("--pmax", type=POWER_MW, default=1.0, help="highest power (mW)")
    p.add_argument("--points", type=int, default=25)
    p.add_argument("--eta", type=float, help="misalignment factor in (0, 1]")
    p.set_defaults(func=execute)
