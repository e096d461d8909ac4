"""Program templates for the standard scans.

Every template starts with a QND initialization of the target level and ends
with a readout; the sweep variable of a scan fills one field of the template.
"""
import logging
from fractions import Fraction

from core.errors import ExecutionError
from core.pulse_dsl import InitNuclear, LaserColor, LaserPulse, PulseProgram, Readout, RfPulse, Wait
from core.spin_levels import IsotopeKind, SpinLevelCalculator

logger = logging.getLogger(__name__)

# rf pulse for the red-pulse map: 5 pi at 25 kHz, long against the dark T2
MAP_RABI_KHZ = 25.0
MAP_RF_DURATION_S = 100e-6
RED_POWER_MW = 1.0


def default_target(isotope):
    """Level that takes part in every NMR line: m_I=0 for 14N, +1/2 for 15N"""
    if isotope.kind is IsotopeKind.N14:
        return Fraction(0)
    return Fraction(1, 2)


def line_for(system, manifold, m_I):
    """Lowest-frequency transition of `manifold` that involves m_I"""
    for line in SpinLevelCalculator.transitions(system, manifold):
        if line.involves(m_I):
            return line
    raise ExecutionError(f"no transition of the {manifold.kind.value} manifold involves m_I={m_I}")


def bright_line(system, m_I=None):
    m_I = default_target(system.isotope) if m_I is None else Fraction(m_I)
    return line_for(system, system.bright, m_I)


def dark_line(system, m_I=None):
    m_I = default_target(system.isotope) if m_I is None else Fraction(m_I)
    return line_for(system, system.polarized_dark, m_I)


def nmr_program(freq_MHz, rabi_kHz, duration_s, m_I, red_length_s=None, red_power_mW=RED_POWER_MW,
                wait_s=None, name="nmr"):
    """init -> [red laser] -> [wait] -> rf -> readout"""
    instructions = [InitNuclear(Fraction(m_I))]
    if red_length_s is not None:
        instructions.append(LaserPulse(LaserColor.RED, red_power_mW * 1e-3, red_length_s))
    if wait_s is not None:
        instructions.append(Wait(wait_s))
    instructions.append(RfPulse(freq_MHz * 1e6, rabi_kHz * 1e3, duration_s))
    instructions.append(Readout())
    return PulseProgram(name, instructions)


def relaxation_program(dwell_s, m_I, red_length_s=None, red_power_mW=RED_POWER_MW, name="relaxation"):
    """init -> [red laser to park the defect in the dark state] -> wait -> readout.

    A reported flip means the nucleus left the initialized level during the
    dwell; for a spin-I nucleus that probability is (1 - 1/(2I+1)) * (1 - p(t)).
    """
    instructions = [InitNuclear(Fraction(m_I))]
    if red_length_s is not None:
        instructions.append(LaserPulse(LaserColor.RED, red_power_mW * 1e-3, red_length_s))
    instructions.append(Wait(dwell_s))
    instructions.append(Readout())
    return PulseProgram(name, instructions)
