"""Laser-driven bright/dark population kinetics.

Two compartments (bright NV-, dark state) coupled by saturable two-photon rate
laws R(P) = eta * k * P**2 / (P + P_sat). Rates are in MHz, powers in mW,
times in seconds.
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from core.errors import InvariantError, NoSteadyStateError

logger = logging.getLogger(__name__)

MHZ = 1e6


class Laser(Enum):
    RED = "red"
    GREEN = "green"
    OFF = "off"


class ChargeState(Enum):
    BRIGHT = "bright"
    DARK = "dark"


@dataclass(frozen=True)
class RateLaw:
    k: float  # MHz/mW
    P_sat: float  # mW

    def __post_init__(self):
        if self.k < 0:
            raise InvariantError("rate coefficient k must be >= 0")
        if self.P_sat <= 0:
            raise InvariantError("saturation power must be > 0")


@dataclass(frozen=True)
class ChargePopulations:
    p_bright: float
    p_dark: float

    def __post_init__(self):
        for p in (self.p_bright, self.p_dark):
            if not -1e-12 <= p <= 1 + 1e-12:
                raise InvariantError("populations must lie in [0, 1]")
        if abs(self.p_bright + self.p_dark - 1.0) > 1e-12:
            raise InvariantError("populations must sum to 1")

    @classmethod
    def bright(cls):
        return cls(1.0, 0.0)

    @classmethod
    def from_bright(cls, p_bright):
        p_bright = min(1.0, max(0.0, p_bright))
        return cls(p_bright, 1.0 - p_bright)


@dataclass(frozen=True)
class ChargeKinetics:
    red_bright_to_dark: RateLaw
    green_bright_to_dark: RateLaw
    green_dark_to_bright: RateLaw
    red_dark_to_bright: RateLaw = RateLaw(0.0, 1.0)
    misalignment_eta: float = 1.0
    spin_polarization: float = 0.92
    red_reference_power: float = 1.0  # mW
    green_reference_power: float = 1.0  # mW

    def __post_init__(self):
        if not 0 < self.misalignment_eta <= 1:
            raise InvariantError("misalignment factor must lie in (0, 1]")
        if not 0 <= self.spin_polarization <= 1:
            raise InvariantError("spin polarization must lie in [0, 1]")

    def laws(self, laser):
        """(bright->dark, dark->bright) laws for a laser color"""
        laser = Laser(laser)
        if laser is Laser.RED:
            return self.red_bright_to_dark, self.red_dark_to_bright
        if laser is Laser.GREEN:
            return self.green_bright_to_dark, self.green_dark_to_bright
        return None, None

    def reference_power(self, laser):
        return self.red_reference_power if Laser(laser) is Laser.RED else self.green_reference_power

    def with_eta(self, eta):
        return replace(self, misalignment_eta=eta)

    def calibrated(self, laser, tau, power=None):
        """Rescale the bright->dark law so the aligned lifetime at `power` is tau"""
        laser = Laser(laser)
        if laser is Laser.OFF:
            raise InvariantError("cannot calibrate the dark (laser off) configuration")
        power = self.reference_power(laser) if power is None else power
        to_dark, _ = self.laws(laser)
        shape = power ** 2 / (power + to_dark.P_sat)
        law = RateLaw(1.0 / (tau * MHZ * shape), to_dark.P_sat)
        field = "red_bright_to_dark" if laser is Laser.RED else "green_bright_to_dark"
        return replace(self, **{field: law})


class ChargeRateModel:
    @staticmethod
    def rate(law, power, eta=1.0):
        """Saturable two-photon rate in MHz"""
        if power < 0:
            raise InvariantError("laser power must be >= 0")
        return eta * law.k * power ** 2 / (power + law.P_sat)

    @staticmethod
    def rates(kin, laser, power):
        """(R_BD, R_DB) in 1/s; eta only slows bright->dark pumping"""
        to_dark, to_bright = kin.laws(laser)
        if to_dark is None:
            return 0.0, 0.0
        r_bd = ChargeRateModel.rate(to_dark, power, kin.misalignment_eta) * MHZ
        r_db = ChargeRateModel.rate(to_bright, power) * MHZ
        return r_bd, r_db

    @staticmethod
    def evolve_populations(pop, kin, laser, power, duration):
        """Closed-form solution of dp_B/dt = -R_BD p_B + R_DB p_D"""
        if duration < 0:
            raise InvariantError("duration must be >= 0")
        r_bd, r_db = ChargeRateModel.rates(kin, laser, power)
        total = r_bd + r_db
        if duration == 0 or total == 0:
            return pop
        p_inf = r_db / total
        p_b = p_inf + (pop.p_bright - p_inf) * math.exp(-total * duration)
        return ChargePopulations.from_bright(p_b)

    @staticmethod
    def steady_state(kin, laser, power=None):
        power = kin.reference_power(laser) if power is None else power
        r_bd, r_db = ChargeRateModel.rates(kin, laser, power)
        if r_bd + r_db == 0:
            raise NoSteadyStateError(f"no charge transfer under {Laser(laser).value} at {power} mW")
        return ChargePopulations.from_bright(r_db / (r_bd + r_db))

    @staticmethod
    def lifetime(kin, laser, power=None):
        """1/(R_BD + R_DB) in seconds"""
        power = kin.reference_power(laser) if power is None else power
        r_bd, r_db = ChargeRateModel.rates(kin, laser, power)
        if r_bd + r_db == 0:
            return math.inf
        return 1.0 / (r_bd + r_db)

    @staticmethod
    def fluorescence_trace(kin, laser, power, times, counts_bright, counts_dark, initial=None):
        """Fluorescence (kcounts/s) following the bright population"""
        times = np.asarray(times, dtype=float)
        if np.any(times < 0) or np.any(np.diff(times) < 0):
            raise InvariantError("times must be sorted and nonnegative")
        initial = ChargePopulations.bright() if initial is None else initial
        p_b = np.array([
            ChargeRateModel.evolve_populations(initial, kin, laser, power, float(t)).p_bright
            for t in times
        ])
        return counts_dark + (counts_bright - counts_dark) * p_b

    @staticmethod
    def log_slope(law, power, rel_step=1e-4):
        """d log R / d log P by central differences"""
        lo = ChargeRateModel.rate(law, power * (1 - rel_step))
        hi = ChargeRateModel.rate(law, power * (1 + rel_step))
        return (math.log(hi) - math.log(lo)) / (math.log1p(rel_step) - math.log1p(-rel_step))
