from dataclasses import replace
from fractions import Fraction

import pytest

from core.config import build_spin_system
from core.errors import InvariantError
from core.spin_levels import (
    Isotope, IsotopeKind, Manifold, ManifoldKind, SpinLevelCalculator, default_isotope,
)

HALF = Fraction(1, 2)


def _frequencies(system, manifold):
    return [t.frequency for t in SpinLevelCalculator.transitions(system, manifold)]


def test_n15_bright_line_is_the_larmor_frequency(n15_system):
    (line,) = SpinLevelCalculator.transitions(n15_system, n15_system.bright)
    assert line.frequency == pytest.approx(4.3156 * 0.6, abs=1e-6)
    assert round(line.frequency, 3) == 2.589


def test_n14_bright_lines(n14_system):
    assert _frequencies(n14_system, n14_system.bright) == pytest.approx([2.80804, 6.49996], abs=1e-6)


@pytest.mark.parametrize("B_field", [0.0, 0.3, 0.6, 1.5])
def test_n14_bright_pair_sums_to_twice_the_quadrupole(n14_system, B_field):
    system = n14_system.with_field(B_field)
    low, high = _frequencies(system, system.bright)
    linear = -system.isotope.gamma_over_2pi * B_field + system.bright.hyperfine_shift
    assert low + high == pytest.approx(2 * abs(system.isotope.quadrupole_Q), abs=1e-9)
    assert high - low == pytest.approx(2 * abs(linear), abs=1e-9)


def test_n14_dark_pair_splits_by_twice_the_linear_term_once_it_exceeds_q(n14_system):
    dark = n14_system.polarized_dark
    low, high = _frequencies(n14_system, dark)
    linear = -n14_system.isotope.gamma_over_2pi * n14_system.B_field + dark.hyperfine_shift
    assert abs(linear) > abs(n14_system.isotope.quadrupole_Q)
    assert high - low == pytest.approx(2 * abs(n14_system.isotope.quadrupole_Q), abs=1e-9)
    assert low + high == pytest.approx(2 * abs(linear), abs=1e-9)


def test_n15_dark_line(n15_system):
    (line,) = SpinLevelCalculator.transitions(n15_system, n15_system.polarized_dark)
    assert line.frequency == pytest.approx(abs(2.58936 - 4.242), abs=1e-6)


@pytest.mark.parametrize("isotope, product", [("N14", 3.03), ("N15", 4.242)])
def test_dark_levels_are_offset_by_the_hyperfine_product(config, isotope, product):
    system = build_spin_system(config.with_overrides({"spin.isotope": isotope}))
    bright = SpinLevelCalculator.level_energies(system, system.bright)
    dark = SpinLevelCalculator.level_energies(system, system.polarized_dark)
    ms = system.isotope.m_values
    for lo, hi in zip(ms[:-1], ms[1:]):
        shift = (bright[hi] - bright[lo]) - (dark[hi] - dark[lo])
        assert abs(shift) == pytest.approx(product, abs=1e-9)


def test_integer_spin_levels_are_gauge_fixed_at_zero(n14_system):
    energies = SpinLevelCalculator.level_energies(n14_system, n14_system.bright)
    assert energies[Fraction(0)] == 0.0


def test_half_integer_levels_have_zero_mean(n15_system):
    energies = SpinLevelCalculator.level_energies(n15_system, n15_system.polarized_dark)
    assert sum(energies.values()) == pytest.approx(0.0, abs=1e-12)


def test_dark_visibility_above_threshold():
    assert SpinLevelCalculator.dark_line_visibility(0.6, 0.4) == frozenset({HALF})


def test_dark_visibility_below_threshold():
    assert SpinLevelCalculator.dark_line_visibility(0.1, 0.4) == frozenset({HALF, -HALF})


def test_dark_visibility_at_threshold_counts_as_polarized():
    assert SpinLevelCalculator.dark_line_visibility(0.4, 0.4) == frozenset({HALF})


def test_dark_visibility_rejects_negative_field():
    with pytest.raises(InvariantError):
        SpinLevelCalculator.dark_line_visibility(-0.1, 0.4)


def test_n14_shows_four_candidate_lines_at_high_field(n14_system):
    lines = SpinLevelCalculator.visible_transitions(n14_system)
    kinds = [t.manifold.kind for t in lines]
    assert len(lines) == 4
    assert kinds.count(ManifoldKind.BRIGHT_MS0) == 2
    assert kinds.count(ManifoldKind.DARK) == 2


def test_low_field_shows_both_dark_branches(n14_system):
    lines = SpinLevelCalculator.visible_transitions(n14_system.with_field(0.1))
    assert len(lines) == 6
    projections = {t.manifold.electronic_projection_m for t in lines if t.manifold.kind is ManifoldKind.DARK}
    assert projections == {HALF, -HALF}


def test_visible_lines_are_sorted(n14_system):
    freqs = [t.frequency for t in SpinLevelCalculator.visible_transitions(n14_system.with_field(0.1))]
    assert freqs == sorted(freqs)


def test_nearest_transition(n14_system):
    line = SpinLevelCalculator.nearest_transition(n14_system, n14_system.bright, 6.4)
    assert line.frequency == pytest.approx(6.49996, abs=1e-6)
    assert line.involves(Fraction(0))
    assert line.partner(Fraction(0)) == Fraction(1)


def test_mirrored_dark_branch(n15_system):
    mirror = n15_system.dark(-HALF)
    assert mirror.electronic_projection_m == -HALF
    assert mirror.hyperfine_shift == -n15_system.polarized_dark.hyperfine_shift


def test_m_values():
    assert default_isotope("N14").m_values == (-1, 0, 1)
    assert default_isotope("N15").m_values == (-HALF, HALF)


def test_isotope_spin_must_match_kind():
    with pytest.raises(InvariantError):
        Isotope(IsotopeKind.N14, HALF, 3.0766)
    with pytest.raises(InvariantError):
        Isotope(IsotopeKind.N15, HALF, -4.3156, quadrupole_Q=1.0)


def test_manifold_invariants():
    with pytest.raises(InvariantError):
        Manifold(ManifoldKind.BRIGHT_MS0, HALF, 0.0, 1.0, 0.1)
    with pytest.raises(InvariantError):
        Manifold(ManifoldKind.DARK, HALF, -8.484, 1.0, 3.0)
    with pytest.raises(InvariantError):
        Manifold(ManifoldKind.DARK, Fraction(1), -8.484, 1.0, 0.1)


@pytest.mark.parametrize("isotope", ["N14", "N15"])
def test_dark_line_set_is_unchanged_by_flipping_the_hyperfine_sign(config, isotope):
    system = build_spin_system(config.with_overrides({"spin.isotope": isotope})).with_field(0.1)
    flipped = replace(system, manifolds=[
        replace(m, hyperfine_a=-m.hyperfine_a) if m.kind is ManifoldKind.DARK else m
        for m in system.manifolds
    ])

    def dark_lines(s):
        return sorted(f for m_M in (HALF, -HALF) for f in _frequencies(s, s.dark(m_M)))

    assert dark_lines(flipped) == pytest.approx(dark_lines(system), abs=1e-12)
    assert _frequencies(flipped, flipped.polarized_dark) != pytest.approx(_frequencies(system, system.polarized_dark))
