"""Driven two-level Bloch equations for one nuclear transition.

Rotating frame, cycle-frequency convention (a pi-pulse lasts 1/(2*Omega)):

    du/dt =  D*v           - u/T2
    dv/dt = -D*u + W1*w    - v/T2
    dw/dt =       -W1*v    - w/T1       (equilibrium w = 0)

with W1 = 2*pi*Omega and D = 2*pi*delta. The system is linear with constant
coefficients, so one classical RK4 step is a fixed 3x3 matrix; n steps are
applied as its n-th matrix power.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from core.errors import IntegrationError, InvariantError

logger = logging.getLogger(__name__)

KHZ = 1e3
_EPS = 1e-30


@dataclass(frozen=True)
class DriveParams:
    rabi_frequency_Omega: float  # kHz
    detuning_delta: float  # kHz
    duration: float  # s

    def __post_init__(self):
        if self.rabi_frequency_Omega < 0:
            raise InvariantError("Rabi frequency must be >= 0")
        if self.duration < 0:
            raise InvariantError("pulse duration must be >= 0")

    @classmethod
    def pi_pulse(cls, Omega, detuning=0.0):
        return cls(Omega, detuning, 1.0 / (2.0 * Omega * KHZ))


@dataclass(frozen=True)
class BlochState:
    u: float = 0.0
    v: float = 0.0
    w: float = 1.0

    def as_array(self):
        return np.array([self.u, self.v, self.w], dtype=float)

    @classmethod
    def from_array(cls, vec):
        return cls(float(vec[0]), float(vec[1]), float(vec[2]))

    @property
    def norm(self):
        return math.sqrt(self.u ** 2 + self.v ** 2 + self.w ** 2)


class BlochSolver:
    """Fixed-step RK4 integrator.

    The step never exceeds T2/steps_per_decay, T1/steps_per_decay or
    1/(steps_per_cycle * (Omega + |delta|)).
    """

    def __init__(self, steps_per_cycle=200, steps_per_decay=200, max_iterations=10 ** 10):
        if steps_per_cycle < 50 or steps_per_decay < 100:
            raise InvariantError("step resolution below the stability bound")
        self.steps_per_cycle = steps_per_cycle
        self.steps_per_decay = steps_per_decay
        self.max_iterations = max_iterations

    def n_steps(self, drive, T2, T1):
        bandwidth = (drive.rabi_frequency_Omega + abs(drive.detuning_delta)) * KHZ
        h_max = min(
            T2 / self.steps_per_decay,
            T1 / self.steps_per_decay,
            1.0 / (self.steps_per_cycle * bandwidth + _EPS),
        )
        if drive.duration == 0:
            return 0
        n = max(1, math.ceil(drive.duration / h_max))
        if n > self.max_iterations:
            raise IntegrationError(
                f"step-size underflow: {n} steps needed for {drive.duration:g} s "
                f"(cap {self.max_iterations})"
            )
        return n

    @staticmethod
    def generator(drive, T2, T1):
        w1 = 2 * math.pi * drive.rabi_frequency_Omega * KHZ
        d = 2 * math.pi * drive.detuning_delta * KHZ
        g2 = 1.0 / T2
        g1 = 1.0 / T1
        return np.array([
            [-g2, d, 0.0],
            [-d, -g2, w1],
            [0.0, -w1, -g1],
        ])

    @staticmethod
    def rk4_matrix(A, h):
        hA = h * A
        eye = np.eye(3)
        hA2 = hA @ hA
        hA3 = hA2 @ hA
        return eye + hA + hA2 / 2.0 + hA3 / 6.0 + (hA3 @ hA) / 24.0

    def _check(self, T2, T1):
        if not (T2 > 0 and T1 > 0):
            raise InvariantError("T1 and T2 must be positive")

    def evolve(self, state, drive, T2, T1):
        self._check(T2, T1)
        n = self.n_steps(drive, T2, T1)
        if n == 0:
            return state
        h = drive.duration / n
        step = self.rk4_matrix(self.generator(drive, T2, T1), h)
        logger.debug("bloch evolve: %d RK4 steps of %.3g s", n, h)
        return BlochState.from_array(np.linalg.matrix_power(step, n) @ state.as_array())

    def evolve_trace(self, state, drive, T2, T1, n_points):
        """Bloch states at n_points evenly spaced times in [0, duration]"""
        self._check(T2, T1)
        if n_points < 2:
            raise InvariantError("a trace needs at least two points")
        segments = n_points - 1
        per_segment = max(1, math.ceil(self.n_steps(drive, T2, T1) / segments))
        h = drive.duration / (segments * per_segment)
        step = self.rk4_matrix(self.generator(drive, T2, T1), h)
        hop = np.linalg.matrix_power(step, per_segment)
        vec = state.as_array()
        trace = [state]
        for _ in range(segments):
            vec = hop @ vec
            trace.append(BlochState.from_array(vec))
        return trace

    def flip_probability(self, drive, T2, T1):
        final = self.evolve(BlochState(0.0, 0.0, 1.0), drive, T2, T1)
        return min(1.0, max(0.0, (1.0 - final.w) / 2.0))

    def line_profile(self, Omega, pulse_duration, T2, detuning_grid, T1=math.inf):
        grid = np.asarray(detuning_grid, dtype=float)
        if grid.size == 0:
            raise InvariantError("detuning grid is empty")
        if np.any(np.diff(grid) < 0):
            raise InvariantError("detuning grid must be sorted")
        return [
            self.flip_probability(DriveParams(Omega, float(delta), pulse_duration), T2, T1)
            for delta in grid
        ]


DEFAULT_SOLVER = BlochSolver()


def evolve(state, drive, T2, T1):
    return DEFAULT_SOLVER.evolve(state, drive, T2, T1)


def evolve_trace(state, drive, T2, T1, n_points):
    return DEFAULT_SOLVER.evolve_trace(state, drive, T2, T1, n_points)


def flip_probability(drive, T2, T1):
    return DEFAULT_SOLVER.flip_probability(drive, T2, T1)


def line_profile(Omega, pulse_duration, T2, detuning_grid, T1=math.inf):
    return DEFAULT_SOLVER.line_profile(Omega, pulse_duration, T2, detuning_grid, T1)


def detuned_rabi_probability(Omega, delta, t):
    """Closed-form flip probability without relaxation (Omega, delta in kHz)"""
    generalized = math.hypot(Omega, delta)
    if generalized == 0:
        return 0.0
    return (Omega / generalized) ** 2 * math.sin(math.pi * generalized * KHZ * t) ** 2


def t1_relaxation(polarization, dwell, T1):
    """Nuclear polarization left after `dwell` seconds, relaxing towards 0"""
    if abs(polarization) > 1:
        raise InvariantError("polarization must lie in [-1, 1]")
    if dwell < 0:
        raise InvariantError("dwell time must be >= 0")
    return polarization * math.exp(-dwell / T1)
