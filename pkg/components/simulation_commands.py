"""spectrum, rabi, map2d and run: Monte Carlo scans over pulse programs."""
import logging
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd

from components.command_support import (
    FREQUENCY_KHZ, FREQUENCY_MHZ, POWER_MW, TIME_S, add_initial, build_executor, command, execute,
    output_parent, physics_parent, require,
)
from core import sequences
from core.config import dark_linewidth_kHz
from core.output import CommandOutput
from core.pulse_dsl import Dimension, RfPulse, expand_sweeps, parse
from core.qnd import deduce_populations, map2d, rabi_scan, run_grid, spectrum_scan
from core.spin_levels import SpinLevelCalculator

logger = logging.getLogger(__name__)

BASE_UNITS = {
    Dimension.FREQUENCY: "Hz",
    Dimension.TIME: "s",
    Dimension.POWER: "W",
    Dimension.FIELD: "T",
}


def _target(executor, m_I):
    if m_I is None:
        return sequences.default_target(executor.system.isotope)
    return Fraction(m_I)


def _candidate_lines(system, fmin_MHz, fmax_MHz):
    """Every line the occupied manifolds can show, flagged when inside the scan"""
    lines = []
    for line in SpinLevelCalculator.visible_transitions(system):
        lines.append({
            "frequency_MHz": line.frequency,
            "manifold": line.manifold.kind.value,
            "m_M": str(line.manifold.electronic_projection_m),
            "m_I": [str(line.m_I_from), str(line.m_I_to)],
            "in_range": bool(fmin_MHz <= line.frequency <= fmax_MHz),
        })
    return lines


def _result_columns(results):
    return {
        "flip_fraction": [r.flip_fraction for r in results],
        "stderr": [r.stderr for r in results],
        "n_shots": [r.n_shots for r in results],
    }


@command("spectrum")
def spectrum(args, config):
    require(args.points >= 2, "--points must be >= 2")
    require(args.fmin < args.fmax, "--fmin must be below --fmax")
    executor = build_executor(config, args.initial)
    m_I = _target(executor, args.m_I)
    rabi_kHz = args.rabi / 1e3
    duration = args.duration if args.duration is not None else 1.0 / (2.0 * args.rabi)
    freqs = np.linspace(args.fmin / 1e6, args.fmax / 1e6, args.points)
    step_kHz = (freqs[1] - freqs[0]) * 1e3
    if step_kHz > dark_linewidth_kHz(config):
        logger.warning("grid step %.3g kHz is coarser than the %.3g kHz dark linewidth; dark lines may be missed",
                       step_kHz, dark_linewidth_kHz(config))
    lines = _candidate_lines(executor.system, freqs[0], freqs[-1])
    if not any(line["in_range"] for line in lines):
        logger.warning("no NMR line between %.6g and %.6g MHz", freqs[0], freqs[-1])
    results = spectrum_scan(freqs, executor, config.n_shots, config.seed, rabi_kHz, duration, m_I)
    expected = [
        executor.expected_fraction(RfPulse(f * 1e6, args.rabi, duration), m_I) for f in freqs
    ]
    table = pd.DataFrame({"frequency_MHz": freqs, **_result_columns(results), "expected": expected})
    return CommandOutput(table, result={"candidate_lines": lines})


@command("rabi")
def rabi(args, config):
    require(args.points >= 2, "--points must be >= 2")
    executor = build_executor(config, args.initial)
    m_I = _target(executor, args.m_I)
    rabi_kHz = args.rabi / 1e3
    freq_MHz = args.freq / 1e6 if args.freq is not None else sequences.bright_line(executor.system, m_I).frequency
    t_max = args.tmax if args.tmax is not None else 4.0 / (2.0 * args.rabi)
    require(t_max > 0, "--tmax must be > 0")
    durations = np.linspace(0.0, t_max, args.points)
    results = rabi_scan(durations, executor, config.n_shots, config.seed, rabi_kHz, freq_MHz, m_I)
    expected = [
        executor.expected_fraction(RfPulse(freq_MHz * 1e6, args.rabi, t), m_I) for t in durations
    ]
    table = pd.DataFrame({"duration_s": durations, **_result_columns(results), "expected": expected})
    return CommandOutput(table)


def _map_frequencies(args, executor, m_I):
    if args.fmin is None and args.fmax is None:
        lines = [sequences.bright_line(executor.system, m_I), sequences.dark_line(executor.system, m_I)]
        return np.array(sorted(line.frequency for line in lines))
    require(args.fmin is not None and args.fmax is not None, "give both --fmin and --fmax")
    require(args.fmin < args.fmax and args.fpoints >= 2, "invalid frequency grid")
    return np.linspace(args.fmin / 1e6, args.fmax / 1e6, args.fpoints)


@command("map2d")
def map2d_command(args, config):
    require(args.red_points >= 1, "--red-points must be >= 1")
    require(0 <= args.red_min <= args.red_max, "invalid red pulse range")
    executor = build_executor(config, args.initial)
    m_I = _target(executor, args.m_I)
    freqs = _map_frequencies(args, executor, m_I)
    if args.red_grid == "log":
        require(args.red_min > 0, "a log red grid needs --red-min > 0")
        reds = np.geomspace(args.red_min, args.red_max, args.red_points)
    else:
        reds = np.linspace(args.red_min, args.red_max, args.red_points)
    rows = map2d(freqs, reds, executor, config.n_shots, config.seed, args.rabi / 1e3,
                 args.rf_duration, args.red_power * 1e3, m_I)
    labels = [f"{f:.6f}" for f in freqs]
    matrix = pd.DataFrame([[r.flip_fraction for r in row] for row in rows], columns=labels)
    matrix.insert(0, "red_length_s", reds)
    stderr = pd.DataFrame([[r.stderr for r in row] for row in rows], columns=labels)
    stderr.insert(0, "red_length_s", reds)

    # bright/dark amplitudes at the grid points nearest to the two lines
    F = executor.readout.implied_fidelity()
    bright_col = int(np.argmin(np.abs(freqs - sequences.bright_line(executor.system, m_I).frequency)))
    dark_col = int(np.argmin(np.abs(freqs - sequences.dark_line(executor.system, m_I).frequency)))
    populations = []
    for red, row in zip(reds, rows):
        deduced = deduce_populations(row[bright_col].flip_fraction, row[dark_col].flip_fraction, F)
        populations.append({
            "red_length_s": red,
            "bright_amp": row[bright_col].flip_fraction,
            "dark_amp": row[dark_col].flip_fraction,
            "p_bright": deduced.p_bright,
            "p_dark": deduced.p_dark,
            "remainder": deduced.remainder,
        })
    extras = {".stderr.csv": stderr, ".populations.csv": pd.DataFrame(populations)}
    return CommandOutput(matrix, extras)


@command("run")
def run(args, config):
    if getattr(args, "program_text", None) is None:
        args.program_text = Path(args.sequence).read_text(encoding="utf-8-sig")
    program = parse(args.program_text)
    executor = build_executor(config, args.initial)
    programs = expand_sweeps(program)
    logger.info("%s: %d grid points", program.name, len(programs))
    results = run_grid(programs, executor, config.n_shots, config.seed)
    columns = {}
    for sweep in program.sweeps:
        columns[f"{sweep.name}_{BASE_UNITS[sweep.dimension]}"] = [dict(p.point)[sweep.name] for p in programs]
    columns.update(_result_columns(results))
    for charge in ("bright", "dark"):
        columns[f"n_{charge}"] = [r.by_charge.get(charge, {}).get("n", 0) for r in results]
        columns[f"flips_{charge}"] = [r.by_charge.get(charge, {}).get("flips", 0) for r in results]
    table = pd.DataFrame(columns)
    extras = {}
    if len(program.sweeps) == 2:
        outer, inner = (f"{s.name}_{BASE_UNITS[s.dimension]}" for s in program.sweeps)
        pivot = table.pivot(index=outer, columns=inner, values="flip_fraction").reset_index()
        pivot.columns = [str(c) for c in pivot.columns]
        extras[".matrix.csv"] = pivot
    return CommandOutput(table, extras)


def register(subparsers):
    physics = physics_parent()
    out = output_parent()

    p = subparsers.add_parser("spectrum", parents=[physics, out], help="NMR spectrum over an rf frequency grid")
    p.add_argument("--fmin", type=FREQUENCY_MHZ, default=2e6, help="lowest rf frequency (MHz)")
    p.add_argument("--fmax", type=FREQUENCY_MHZ, default=8e6, help="highest rf frequency (MHz)")
    p.add_argument("--points", type=int, default=601)
    p.add_argument("--rabi", type=FREQUENCY_KHZ, default=25e3, help="Rabi frequency (kHz)")
    p.add_argument("--duration", type=TIME_S, help="rf pulse length (default: pi pulse)")
    p.add_argument("--manifolds", dest="initial", choices=["both", "bright", "dark"], default="both",
                   help="charge states present: both (green steady state), bright or dark")
    p.add_argument("--m-I", dest="m_I", help="initialized nuclear level (default: 0 for 14N, 1/2 for 15N)")
    p.set_defaults(func=execute)

    p = subparsers.add_parser("rabi", parents=[physics, out], help="Rabi oscillation on a bright line")
    p.add_argument("--rabi", type=FREQUENCY_KHZ, default=25e3, help="Rabi frequency (kHz)")
    p.add_argument("--freq", type=FREQUENCY_MHZ, help="rf frequency (default: bright line)")
    p.add_argument("--tmax", type=TIME_S, help="longest pulse (default: two Rabi periods)")
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--m-I", dest="m_I")
    add_initial(p)
    p.set_defaults(func=execute)

    p = subparsers.add_parser("map2d", parents=[physics, out],
                              help="NMR amplitude over rf frequency and red pulse length")
    p.add_argument("--fmin", type=FREQUENCY_MHZ, help="(default: only the bright and dark line positions)")
    p.add_argument("--fmax", type=FREQUENCY_MHZ)
    p.add_argument("--fpoints", type=int, default=41)
    p.add_argument("--red-min", type=TIME_S, default=0.0)
    p.add_argument("--red-max", type=TIME_S, default=1e-3)
    p.add_argument("--red-points", type=int, default=30)
    p.add_argument("--red-grid", choices=["lin", "log"], default="lin")
    p.add_argument("--red-power", type=POWER_MW, default=sequences.RED_POWER_MW * 1e-3)
    p.add_argument("--rabi", type=FREQUENCY_KHZ, default=sequences.MAP_RABI_KHZ * 1e3)
    p.add_argument("--rf-duration", type=TIME_S, default=sequences.MAP_RF_DURATION_S)
    p.add_argument("--m-I", dest="m_I")
    add_initial(p)
    p.set_defaults(func=execute)

    p = subparsers.add_parser("run", parents=[physics, out], help="expand and execute a .seq pulse program")
    p.add_argument("sequence", help="pulse program file")
    add_initial(p)
    p.set_defaults(func=execute)
