"""Nuclear spin levels and NMR line positions of the nitrogen nucleus.

Only the secular part of the Hamiltonian is kept, so every manifold is diagonal
in m_I:

    E(m_I) = Q * m_I**2 + (-gamma * B + a * m_M) * m_I      [MHz]

The bright manifold (NV-, m_S = 0) carries no first-order hyperfine shift; the
dark manifold couples to an electronic moment with projection m_M = +-mu.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction

from core.errors import InvariantError

logger = logging.getLogger(__name__)


class IsotopeKind(Enum):
    N14 = "N14"
    N15 = "N15"


class ManifoldKind(Enum):
    BRIGHT_MS0 = "bright"
    DARK = "dark"


@dataclass(frozen=True)
class Isotope:
    kind: IsotopeKind
    spin_I: Fraction
    gamma_over_2pi: float  # MHz/T, signed
    quadrupole_Q: float = 0.0  # MHz

    def __post_init__(self):
        object.__setattr__(self, "spin_I", Fraction(self.spin_I))
        if self.kind is IsotopeKind.N14 and self.spin_I != 1:
            raise InvariantError("14N must have I = 1")
        if self.kind is IsotopeKind.N15:
            if self.spin_I != Fraction(1, 2):
                raise InvariantError("15N must have I = 1/2")
            if self.quadrupole_Q != 0:
                raise InvariantError("15N has no quadrupole splitting")
        if self.gamma_over_2pi == 0:
            raise InvariantError("gyromagnetic ratio must be nonzero")

    @property
    def m_values(self):
        """Allowed m_I from -I to +I"""
        n = int(2 * self.spin_I) + 1
        return tuple(-self.spin_I + k for k in range(n))


# tabulated gyromagnetic ratios; the config file may override them
GAMMA_N14 = 3.0766
GAMMA_N15 = -4.3156
QUADRUPOLE_N14 = -4.654


def default_isotope(kind):
    kind = IsotopeKind(kind)
    if kind is IsotopeKind.N14:
        return Isotope(kind, Fraction(1), GAMMA_N14, QUADRUPOLE_N14)
    return Isotope(kind, Fraction(1, 2), GAMMA_N15, 0.0)


@dataclass(frozen=True)
class Manifold:
    kind: ManifoldKind
    electronic_projection_m: Fraction
    hyperfine_a: float  # MHz
    T1_nuclear: float  # s
    T2_nuclear: float  # s

    def __post_init__(self):
        object.__setattr__(self, "electronic_projection_m", Fraction(self.electronic_projection_m))
        m = self.electronic_projection_m
        if self.kind is ManifoldKind.BRIGHT_MS0 and m != 0:
            raise InvariantError("bright m_S=0 manifold has m = 0")
        if self.kind is ManifoldKind.DARK and abs(m) != Fraction(1, 2):
            raise InvariantError("dark manifold needs |m_M| = 1/2")
        if self.T1_nuclear <= 0 or self.T2_nuclear <= 0:
            raise InvariantError("nuclear T1 and T2 must be positive")
        if self.T2_nuclear > 2 * self.T1_nuclear:
            raise InvariantError("T2 cannot exceed 2*T1")

    @property
    def hyperfine_shift(self):
        """a * m_M in MHz"""
        return self.hyperfine_a * float(self.electronic_projection_m)

    def mirrored(self):
        return replace(self, electronic_projection_m=-self.electronic_projection_m)


@dataclass(frozen=True)
class SpinSystem:
    isotope: Isotope
    B_field: float  # T
    manifolds: tuple = field(default_factory=tuple)
    polarization_threshold_B: float = 0.4  # T

    def __post_init__(self):
        object.__setattr__(self, "manifolds", tuple(self.manifolds))
        if self.B_field < 0:
            raise InvariantError("B field must be >= 0")
        kinds = [m.kind for m in self.manifolds]
        if kinds.count(ManifoldKind.BRIGHT_MS0) != 1:
            raise InvariantError("spin system needs exactly one bright manifold")
        if ManifoldKind.DARK not in kinds:
            raise InvariantError("spin system needs at least one dark manifold")

    @property
    def bright(self):
        return next(m for m in self.manifolds if m.kind is ManifoldKind.BRIGHT_MS0)

    @property
    def polarized_dark(self):
        """The dark branch seen at high field (first dark manifold declared)"""
        return next(m for m in self.manifolds if m.kind is ManifoldKind.DARK)

    def dark(self, m_M):
        """Dark manifold with projection m_M; the mirror branch is derived if absent"""
        m_M = Fraction(m_M)
        for manifold in self.manifolds:
            if manifold.kind is ManifoldKind.DARK and manifold.electronic_projection_m == m_M:
                return manifold
        polarized = self.polarized_dark
        if polarized.electronic_projection_m == -m_M:
            return polarized.mirrored()
        raise InvariantError(f"no dark manifold with m_M = {m_M}")

    def with_field(self, B_field):
        return replace(self, B_field=B_field)


@dataclass(frozen=True)
class Transition:
    manifold: Manifold
    m_I_from: Fraction
    m_I_to: Fraction
    frequency: float  # MHz

    def involves(self, m_I):
        return m_I in (self.m_I_from, self.m_I_to)

    def partner(self, m_I):
        return self.m_I_to if m_I == self.m_I_from else self.m_I_from


class SpinLevelCalculator:
    @staticmethod
    def level_energies(system, manifold):
        """Energies in MHz keyed by m_I, gauge-fixed to E(0) = 0 (integer I) or zero mean"""
        isotope = system.isotope
        linear = -isotope.gamma_over_2pi * system.B_field + manifold.hyperfine_shift
        energies = {m: isotope.quadrupole_Q * float(m) ** 2 + linear * float(m) for m in isotope.m_values}
        if isotope.spin_I.denominator == 1:
            offset = energies[Fraction(0)]
        else:
            offset = sum(energies.values()) / len(energies)
        return {m: e - offset for m, e in energies.items()}

    @staticmethod
    def transitions(system, manifold):
        """All single-quantum transitions of one manifold, sorted by frequency"""
        energies = SpinLevelCalculator.level_energies(system, manifold)
        ms = system.isotope.m_values
        lines = [
            Transition(manifold, lo, hi, abs(energies[hi] - energies[lo]))
            for lo, hi in zip(ms[:-1], ms[1:])
        ]
        return sorted(lines, key=lambda t: t.frequency)

    @staticmethod
    def dark_line_visibility(B_field, polarization_threshold_B, mu=Fraction(1, 2)):
        """Dark m_M branches that show NMR lines at this field.

        Above the threshold only the polarized branch +mu is populated; the
        boundary itself counts as polarized.
        """
        if B_field < 0:
            raise InvariantError("B field must be >= 0")
        mu = Fraction(mu)
        if B_field >= polarization_threshold_B:
            return frozenset({mu})
        return frozenset({mu, -mu})

    @staticmethod
    def visible_transitions(system):
        """Bright lines plus the lines of every visible dark branch"""
        lines = list(SpinLevelCalculator.transitions(system, system.bright))
        mu = system.polarized_dark.electronic_projection_m
        branches = SpinLevelCalculator.dark_line_visibility(
            system.B_field, system.polarization_threshold_B, mu
        )
        for m_M in sorted(branches, reverse=True):
            lines.extend(SpinLevelCalculator.transitions(system, system.dark(m_M)))
        return sorted(lines, key=lambda t: t.frequency)

    @staticmethod
    def nearest_transition(system, manifold, frequency_MHz):
        """Transition of `manifold` closest to an rf frequency"""
        lines = SpinLevelCalculator.transitions(system, manifold)
        return min(lines, key=lambda t: abs(t.frequency - frequency_MHz))
