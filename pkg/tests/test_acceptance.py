"""Desk-scale reproduction of the published observations from the forward model."""
import math
from fractions import Fraction

import numpy as np
import pytest

from core import bloch, sequences
from core.charge_kinetics import ChargePopulations, ChargeRateModel, Laser
from core.config import build_kinetics, build_readout, build_spin_system
from core.fitting import fit, fit_power_dependence
from core.qnd import QNDExecutor, deduce_populations, expected_flip_fraction, map2d, run_grid, spectrum_scan
from core.spin_levels import SpinLevelCalculator

F = 0.98
HALF = Fraction(1, 2)


def _sigma(p, n):
    return max(math.sqrt(p * (1 - p) / n), 1.0 / n)


def test_charge_equilibrium(kinetics):
    pop = ChargeRateModel.steady_state(kinetics, Laser.GREEN)
    r_bd, r_db = ChargeRateModel.rates(kinetics, Laser.GREEN, kinetics.green_reference_power)
    assert pop.p_dark == pytest.approx(0.30, abs=1e-3)
    assert r_bd / r_db == pytest.approx(0.429, abs=1e-3)


@pytest.mark.parametrize("eta, tau", [(1.0, 120e-6), (120 / 184, 184e-6)])
def test_red_pump_decay(kinetics, eta, tau):
    kin = kinetics.with_eta(eta)
    times = np.linspace(0.0, 5 * tau, 101)
    trace = ChargeRateModel.fluorescence_trace(kin, Laser.RED, 1.0, times, 30.0, 3.0)
    assert fit("exp", times, trace).params["tau"] == pytest.approx(tau, rel=5e-3)

    rng = np.random.default_rng(120)
    counts = rng.poisson(trace * 1e4 / trace.sum()).astype(float)
    noisy = fit("exp", times, counts, sigmas=np.sqrt(np.maximum(counts, 1.0)))
    assert noisy.params["tau"] == pytest.approx(tau, rel=0.05)


def test_power_law_crossover(kinetics):
    law = kinetics.red_bright_to_dark
    powers = np.geomspace(1e-3, 1e3, 31)
    rates = [ChargeRateModel.rate(law, p) for p in powers]
    dependence = fit_power_dependence(powers, rates)
    assert dependence.low_power_slope == pytest.approx(2.0, abs=0.02)
    assert dependence.high_power_slope == pytest.approx(1.0, abs=0.02)


@pytest.mark.slow
def test_rabi_contrast_algebra(n15_system, polarized_kinetics, readout):
    executor = QNDExecutor(n15_system, polarized_kinetics, readout)
    n = 10_000
    baseline, peak = run_grid(
        [sequences.nmr_program(sequences.bright_line(n15_system).frequency, 25.0, t, HALF) for t in (0.0, 20e-6)],
        executor, n, seed=101,
    )
    p_bright = executor.initial_populations.p_bright
    assert p_bright == pytest.approx(0.70, abs=1e-3)
    expected_base = 1 - F ** 2
    expected_peak = expected_flip_fraction(F, 0.7)
    assert abs(baseline.flip_fraction - expected_base) <= 4 * _sigma(expected_base, n)
    assert abs(peak.flip_fraction - expected_peak) <= 4 * _sigma(expected_peak, n)
    # about 30 % of the shots never flip, so the trace is not centred on 0.5
    assert (baseline.flip_fraction + peak.flip_fraction) / 2 < 0.4


def test_dark_state_saturation_is_drive_independent():
    T1, T2 = 0.09, 6e-6
    for omega in (25.0, 25.0 / 7.9):
        p = bloch.flip_probability(bloch.DriveParams(omega, 0.0, 5e-3), T2, T1)
        assert p == pytest.approx(0.5, abs=1e-3)


@pytest.mark.slow
@pytest.mark.parametrize("isotope, lines", [("N14", (2.808, 6.500)), ("N15", (2.589,))])
def test_line_positions(config, isotope, lines):
    run_config = config.with_overrides({"spin.isotope": isotope})
    executor = QNDExecutor(build_spin_system(run_config), build_kinetics(run_config), build_readout(run_config))
    step = 0.005
    for line in lines:
        grid = np.round(np.arange(line - 0.1, line + 0.1 + step / 2, step), 6)
        results = spectrum_scan(grid, executor, 1000, seed=6, rabi_kHz=25.0)
        peak = grid[int(np.argmax([r.flip_fraction for r in results]))]
        assert abs(peak - line) <= step + 1e-3


@pytest.mark.parametrize("isotope, product", [("N14", 3.03), ("N15", 4.242)])
def test_dark_lines_offset_by_the_hyperfine_product(config, isotope, product):
    system = build_spin_system(config.with_overrides({"spin.isotope": isotope}))
    bright = SpinLevelCalculator.level_energies(system, system.bright)
    dark = SpinLevelCalculator.level_energies(system, system.polarized_dark)
    shift = [bright[m] - dark[m] for m in system.isotope.m_values]
    for lower, upper in zip(shift, shift[1:]):
        assert abs(upper - lower) == pytest.approx(product, abs=1e-9)


def test_dark_linewidth_at_weak_drive():
    detunings = np.linspace(-150.0, 150.0, 121)
    profile = bloch.line_profile(1.0, 200e-6, 6e-6, detunings, T1=0.09)
    width = fit("lorentzian", detunings, np.array(profile)).params["gamma"]
    assert 30.0 <= width <= 60.0


def test_bright_line_matches_closed_form():
    detunings = np.linspace(-100.0, 100.0, 41)
    profile = bloch.line_profile(25.0, 20e-6, math.inf, detunings)
    exact = [bloch.detuned_rabi_probability(25.0, d, 20e-6) for d in detunings]
    np.testing.assert_allclose(profile, exact, atol=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("manifold, T1", [("dark", 0.09), ("bright", 0.8)])
def test_nuclear_t1_round_trip(n15_system, kinetics, readout, manifold, T1):
    if manifold == "dark":
        executor = QNDExecutor(n15_system, kinetics, readout)
        red = 2e-3
    else:
        executor = QNDExecutor(n15_system, kinetics, readout, ChargePopulations.bright())
        red = None
    dwells = np.linspace(0.0, 3.0 * T1, 9)
    programs = [sequences.relaxation_program(float(t), HALF, red_length_s=red) for t in dwells]
    results = run_grid(programs, executor, 10_000, seed=90)
    flips = np.array([r.flip_fraction for r in results])
    sigmas = np.array([_sigma(r.flip_fraction, r.n_shots) for r in results])
    assert fit("exp", dwells, flips, sigmas).params["tau"] == pytest.approx(T1, rel=0.05)


@pytest.mark.slow
def test_red_pulse_map_recovers_the_charge_trajectory(n15_system, polarized_kinetics, readout):
    executor = QNDExecutor(n15_system, polarized_kinetics, readout)
    n = 10_000
    freqs = [sequences.dark_line(n15_system).frequency, sequences.bright_line(n15_system).frequency]
    reds = [0.0, 60e-6, 120e-6, 240e-6, 480e-6, 960e-6]
    rows = map2d(freqs, reds, executor, n, seed=33)
    dark_amps = [row[0].flip_fraction for row in rows]
    bright_amps = [row[1].flip_fraction for row in rows]

    baseline = 1 - F ** 2
    assert bright_amps[0] > bright_amps[-1]
    assert abs(bright_amps[-1] - baseline) <= 4 * _sigma(baseline, n)
    assert dark_amps[0] > baseline + 10 * _sigma(baseline, n)
    assert dark_amps[-1] > dark_amps[0]

    contrast = 2 * F ** 2 - 1
    start = executor.initial_populations
    for red, bright_amp, dark_amp in zip(reds, bright_amps, dark_amps):
        programmed = ChargeRateModel.evolve_populations(start, polarized_kinetics, Laser.RED, 1.0, red)
        deduced = deduce_populations(bright_amp, dark_amp, F)
        assert abs(deduced.raw_bright - programmed.p_bright) <= 3 * _sigma(bright_amp, n) / contrast
        assert abs(deduced.raw_dark - programmed.p_dark) <= 3 * 2 * _sigma(dark_amp, n) / contrast
        assert deduced.p_bright + deduced.p_dark >= 0.95
