"""Monte Carlo executor for QND nuclear-spin experiments.

Every shot follows one defect through a pulse program: the charge state jumps
under laser light, the nuclear level relaxes with the T1 of the occupied
manifold, rf pulses flip it with the Bloch flip probability of the transition
nearest to the rf frequency, and a finite-fidelity readout reports the result.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np
from scipy import stats

from core import bloch, sequences
from core.charge_kinetics import ChargeRateModel, ChargeState, Laser
from core.errors import DeductionError, ExecutionError, InvariantError, SeedStreamError
from core.pulse_dsl import InitNuclear, LaserPulse, Readout, RfPulse, Wait
from core.spin_levels import SpinLevelCalculator

logger = logging.getLogger(__name__)

MAX_SHOTS_PER_STREAM = 2 ** 32


class ReadoutMode(Enum):
    BERNOULLI = "bernoulli"
    PHOTON_COUNTING = "photon_counting"


@dataclass(frozen=True)
class ReadoutModel:
    fidelity_F: float
    mode: ReadoutMode = ReadoutMode.BERNOULLI
    n_repetitions: int = 0
    mean_counts_0: float = 0.0  # per repetition, nucleus still in the initialized level
    mean_counts_1: float = 0.0  # per repetition, nucleus flipped
    threshold: int = 0

    def __post_init__(self):
        if not 0.5 < self.fidelity_F <= 1:
            raise InvariantError("readout fidelity must lie in (0.5, 1]")
        if self.mode is ReadoutMode.PHOTON_COUNTING:
            if self.n_repetitions < 1 or self.mean_counts_0 == self.mean_counts_1:
                raise InvariantError("photon counting needs repetitions and distinct count rates")
            implied = self.implied_fidelity()
            if not 0.5 < implied <= 1:
                raise InvariantError(f"implied photon-counting fidelity {implied:.4f} outside (0.5, 1]")

    def implied_fidelity(self):
        """Mean probability of assigning the right state by thresholding Poisson counts"""
        if self.mode is ReadoutMode.BERNOULLI:
            return self.fidelity_F
        mu0 = self.n_repetitions * self.mean_counts_0
        mu1 = self.n_repetitions * self.mean_counts_1
        high, low = (mu0, mu1) if mu0 > mu1 else (mu1, mu0)
        p_high_right = stats.poisson.sf(self.threshold, high)
        p_low_right = stats.poisson.cdf(self.threshold, low)
        return float(0.5 * (p_high_right + p_low_right))

    @property
    def init_fidelity(self):
        return self.implied_fidelity()

    def discriminate(self, counts):
        """Bit assigned to a photon count: 1 means flipped"""
        above = counts > self.threshold
        return int(above) if self.mean_counts_1 > self.mean_counts_0 else int(not above)


@dataclass(frozen=True)
class ShotRecord:
    initial_charge: ChargeState
    charge_at_rf: object  # ChargeState, None without rf
    final_charge: ChargeState
    nuclear_flip_true: bool
    reported_flip: bool
    rng_stream_id: int


@dataclass(frozen=True)
class ExperimentResult:
    n_shots: int
    flip_fraction: float
    stderr: float
    by_charge: dict = field(default_factory=dict)  # charge at rf -> {"n": .., "flips": ..}
    records: tuple = ()

    @classmethod
    def from_records(cls, records, keep_records=False):
        n = len(records)
        flips = sum(r.reported_flip for r in records)
        by_charge = {}
        for r in records:
            charge = (r.charge_at_rf or r.final_charge).value
            entry = by_charge.setdefault(charge, {"n": 0, "flips": 0})
            entry["n"] += 1
            entry["flips"] += int(r.reported_flip)
        f = flips / n
        return cls(n, f, math.sqrt(f * (1 - f) / n), by_charge, tuple(records) if keep_records else ())


@dataclass(frozen=True)
class DeducedPopulations:
    p_bright: float
    p_dark: float
    remainder: float
    raw_bright: float
    raw_dark: float


def expected_flip_fraction(F, p_resonant, p_bloch=1.0):
    """(1 - F^2) + p_resonant * (2F^2 - 1) * p_bloch

    Exact for I = 1/2, where a failed initialization lands on the partner of
    the addressed line. For 14N half of the failed initializations land on the
    level outside the line and are never flipped, so the measured fraction sits
    about (1 - F) * p_resonant * p_bloch / 2 higher;
    QNDExecutor.expected_fraction carries that term.
    """
    return (1 - F ** 2) + p_resonant * (2 * F ** 2 - 1) * p_bloch


def expected_reported_flip(F_init, F_read, p_flip_ok, p_flip_failed):
    """Probability of a reported flip under the combined init/readout error model.

    p_flip_ok is the true flip probability after a successful initialization,
    p_flip_failed the one averaged over the wrongly prepared levels. With
    F_init = F_read = F and equal flip probabilities this reduces to
    expected_flip_fraction.
    """
    ok = F_init * (F_read * p_flip_ok + (1 - F_read) * (1 - p_flip_ok))
    return ok + (1 - F_init) * (1 - p_flip_failed)


def deduce_populations(bright_amp, dark_amp, F):
    """Charge populations from bright/dark line amplitudes.

    The dark line saturates at half its population, hence the factor 2.
    Clamping to [0, 1] is lossy; the unclamped values are kept as raw_*.
    """
    for amp in (bright_amp, dark_amp):
        if not 0 <= amp <= 1:
            raise InvariantError("line amplitudes must lie in [0, 1]")
    contrast = 2 * F ** 2 - 1
    if F <= 1 / math.sqrt(2):
        raise DeductionError(f"fidelity {F} leaves no measurement contrast")
    baseline = 1 - F ** 2
    raw_bright = (bright_amp - baseline) / contrast
    raw_dark = 2 * (dark_amp - baseline) / contrast
    p_bright = min(1.0, max(0.0, raw_bright))
    p_dark = min(1.0, max(0.0, raw_dark))
    return DeducedPopulations(p_bright, p_dark, 1 - p_bright - p_dark, raw_bright, raw_dark)


def shot_rng(seed, stream_group, shot_index):
    if shot_index >= MAX_SHOTS_PER_STREAM or shot_index < 0:
        raise SeedStreamError(f"shot index {shot_index} exhausts the seed streams")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream_group, shot_index)))


class _RunContext:
    """Lookups shared by every shot of one program run"""

    def __init__(self, executor, system):
        self.ex = executor
        self.system = system
        self.levels = system.isotope.m_values
        self.branches = SpinLevelCalculator.dark_line_visibility(
            system.B_field, system.polarization_threshold_B, executor.mu
        )
        self._manifolds = {}
        self._rf = {}
        self.init_fidelity = executor.readout.init_fidelity
        self._rates = {}

    def manifold(self, charge, m_M):
        key = (charge, m_M)
        if key not in self._manifolds:
            self._manifolds[key] = self.system.bright if charge is ChargeState.BRIGHT else self.system.dark(m_M)
        return self._manifolds[key]

    def rf(self, pulse, charge, m_M):
        """(addressed line, flip probability) for the occupied manifold"""
        key = (id(pulse), charge, m_M)
        if key not in self._rf:
            manifold = self.manifold(charge, m_M)
            line = self.ex.addressed_line(self.system, manifold, pulse)
            self._rf[key] = (line, self.ex.flip_probability(manifold, line, pulse))
        return self._rf[key]

    def rates(self, pulse):
        key = id(pulse)
        if key not in self._rates:
            self._rates[key] = ChargeRateModel.rates(self.ex.kin, Laser(pulse.color.value), pulse.power * 1e3)
        return self._rates[key]


class _Shot:
    """Mutable state of one defect during one shot"""

    def __init__(self, context, rng):
        self.ex = context.ex
        self.context = context
        self.rng = rng
        self.levels = context.levels
        self.m_I = self.levels[rng.integers(len(self.levels))]
        self.prepared = self.m_I
        self.init_ok = True
        self.charge = None
        self.m_M = None
        self.resonant = False
        self.charge_at_rf = None

    def enter(self, charge):
        self.charge = charge
        if charge is ChargeState.BRIGHT:
            self.resonant = self.rng.random() < self.ex.kin.spin_polarization
        else:
            branches = self.context.branches
            if len(branches) == 1:
                self.m_M = next(iter(branches))
            else:
                self.m_M = self.ex.mu if self.rng.random() < 0.5 else -self.ex.mu

    @property
    def manifold(self):
        return self.context.manifold(self.charge, self.m_M if self.charge is ChargeState.DARK else None)

    def dwell(self, dt):
        if dt <= 0:
            return
        if self.rng.random() < -math.expm1(-dt / self.manifold.T1_nuclear):
            self.m_I = self.levels[self.rng.integers(len(self.levels))]

    def init_nuclear(self, target):
        self.init_ok = self.rng.random() < self.context.init_fidelity
        if self.init_ok or len(self.levels) == 1:
            self.m_I = target
        else:
            others = [m for m in self.levels if m != target]
            self.m_I = others[self.rng.integers(len(others))]
        self.prepared = self.m_I

    def laser(self, pulse):
        r_bd, r_db = self.context.rates(pulse)
        t = 0.0
        while True:
            rate = r_bd if self.charge is ChargeState.BRIGHT else r_db
            if rate == 0:
                self.dwell(pulse.duration - t)
                return
            wait = self.rng.exponential(1.0 / rate)
            if t + wait >= pulse.duration:
                self.dwell(pulse.duration - t)
                return
            self.dwell(wait)
            t += wait
            self.enter(ChargeState.DARK if self.charge is ChargeState.BRIGHT else ChargeState.BRIGHT)

    def rf(self, pulse):
        self.charge_at_rf = self.charge
        # m_S = +-1 residue of the bright state is far off resonance
        if not (self.charge is ChargeState.BRIGHT and not self.resonant):
            m_M = self.m_M if self.charge is ChargeState.DARK else None
            line, p_flip = self.context.rf(pulse, self.charge, m_M)
            if line.involves(self.m_I) and self.rng.random() < p_flip:
                self.m_I = line.partner(self.m_I)
        self.dwell(pulse.duration)

    def readout(self):
        true_flip = self.m_I != self.prepared
        readout_model = self.ex.readout
        if readout_model.mode is ReadoutMode.BERNOULLI:
            readout_ok = self.rng.random() < readout_model.fidelity_F
        else:
            mean = readout_model.mean_counts_1 if true_flip else readout_model.mean_counts_0
            counts = self.rng.poisson(readout_model.n_repetitions * mean)
            readout_ok = readout_model.discriminate(counts) == int(true_flip)
        reported = true_flip if (self.init_ok and readout_ok) else not true_flip
        return true_flip, reported


class QNDExecutor:
    def __init__(self, system, kin, readout, initial_populations=None, solver=None, workers=1):
        if workers < 1:
            raise InvariantError("workers must be >= 1")
        self.system = system
        self.kin = kin
        self.readout = readout
        self.solver = solver or bloch.DEFAULT_SOLVER
        self.mu = system.polarized_dark.electronic_projection_m
        if initial_populations is None:
            initial_populations = ChargeRateModel.steady_state(kin, Laser.GREEN)
        self.initial_populations = initial_populations
        self._flip_cache = {}
        self._line_cache = {}
        self.workers = workers

    def addressed_line(self, system, manifold, pulse):
        """Transition of the occupied manifold nearest to the rf frequency"""
        key = (system, manifold, pulse.frequency)
        if key not in self._line_cache:
            self._line_cache[key] = SpinLevelCalculator.nearest_transition(
                system, manifold, pulse.frequency / 1e6
            )
        return self._line_cache[key]

    def flip_probability(self, manifold, line, pulse):
        """Bloch flip probability of `line` under an rf pulse (detuning from the line position)"""
        key = (manifold, line.frequency, pulse.frequency, pulse.rabi, pulse.duration)
        if key not in self._flip_cache:
            drive = bloch.DriveParams(
                pulse.rabi / 1e3,
                (pulse.frequency / 1e6 - line.frequency) * 1e3,
                pulse.duration,
            )
            self._flip_cache[key] = self.solver.flip_probability(
                drive, manifold.T2_nuclear, manifold.T1_nuclear
            )
        return self._flip_cache[key]

    def _true_flip(self, system, pulse, m_I):
        """Charge- and branch-averaged flip probability of level m_I (no lasers before the rf)"""
        pops = self.initial_populations
        total = 0.0
        line = self.addressed_line(system, system.bright, pulse)
        if line.involves(m_I):
            p_resonant = pops.p_bright * self.kin.spin_polarization
            total += p_resonant * self.flip_probability(system.bright, line, pulse)
        branches = SpinLevelCalculator.dark_line_visibility(
            system.B_field, system.polarization_threshold_B, self.mu
        )
        for m_M in branches:
            manifold = system.dark(m_M)
            line = self.addressed_line(system, manifold, pulse)
            if line.involves(m_I):
                total += pops.p_dark / len(branches) * self.flip_probability(manifold, line, pulse)
        return total

    def expected_fraction(self, pulse, m_I, system=None):
        """Analytic flip fraction of init -> rf -> readout from the steady-state charge mix"""
        system = system or self.system
        m_I = Fraction(m_I)
        others = [m for m in system.isotope.m_values if m != m_I]
        p_ok = self._true_flip(system, pulse, m_I)
        p_failed = float(np.mean([self._true_flip(system, pulse, m) for m in others]))
        return expected_reported_flip(
            self.readout.init_fidelity, self.readout.implied_fidelity(), p_ok, p_failed
        )

    def _system_for(self, program):
        if program.field_T is None:
            return self.system
        return self.system.with_field(program.field_T)

    def check(self, program):
        if program.sweeps:
            raise ExecutionError(f"program {program.name!r} still has sweeps; expand them first")
        program.check_isotope(self.system.isotope)
        for ins in program.instructions:
            if isinstance(ins, RfPulse) and ins.frequency <= 0:
                raise ExecutionError("rf frequency must be positive")

    def run_shot(self, program, seed, stream_group, shot_index, context=None):
        context = context or _RunContext(self, self._system_for(program))
        rng = shot_rng(seed, stream_group, shot_index)
        shot = _Shot(context, rng)
        initial = ChargeState.BRIGHT if rng.random() < self.initial_populations.p_bright else ChargeState.DARK
        shot.enter(initial)
        for ins in program.instructions:
            if isinstance(ins, InitNuclear):
                shot.init_nuclear(ins.m_I)
            elif isinstance(ins, LaserPulse):
                shot.laser(ins)
            elif isinstance(ins, RfPulse):
                shot.rf(ins)
            elif isinstance(ins, Wait):
                shot.dwell(ins.duration)
            elif isinstance(ins, Readout):
                true_flip, reported = shot.readout()
        return ShotRecord(initial, shot.charge_at_rf, shot.charge, true_flip, reported, shot_index)

    def run_shots(self, program, shot_indices, seed, stream_group=0):
        self.check(program)
        context = _RunContext(self, self._system_for(program))
        return [self.run_shot(program, seed, stream_group, i, context) for i in shot_indices]

    def run_sequence(self, program, n_shots, seed, stream_group=0, keep_records=False):
        if n_shots < 1:
            raise InvariantError("n_shots must be >= 1")
        if n_shots > MAX_SHOTS_PER_STREAM:
            raise SeedStreamError(f"{n_shots} shots exceed the {MAX_SHOTS_PER_STREAM} seed streams")
        records = self.run_shots(program, range(n_shots), seed, stream_group)
        result = ExperimentResult.from_records(records, keep_records)
        logger.debug("%s [group %d]: flip fraction %.4f over %d shots",
                     program.name, stream_group, result.flip_fraction, n_shots)
        return result


def run_sequence(program, system, kin, readout, n_shots, seed, initial_populations=None,
                 stream_group=0, keep_records=False):
    executor = QNDExecutor(system, kin, readout, initial_populations)
    return executor.run_sequence(program, n_shots, seed, stream_group, keep_records)


_POOL_EXECUTOR = None


def _install_executor(executor):
    global _POOL_EXECUTOR
    _POOL_EXECUTOR = executor


def _run_point(task):
    program, n_shots, seed, stream_group = task
    return _POOL_EXECUTOR.run_sequence(program, n_shots, seed, stream_group)


def run_grid(programs, executor, n_shots, seed):
    """One ExperimentResult per program; grid index i uses seed stream group i.

    With executor.workers > 1 the grid points are spread over worker
    processes. Each point keeps its own seed streams, so the results do not
    depend on the number of workers.
    """
    if not programs:
        raise InvariantError("grid is empty")
    logger.info("running %d grid points x %d shots", len(programs), n_shots)
    if executor.workers == 1 or len(programs) == 1:
        return [executor.run_sequence(p, n_shots, seed, stream_group=i) for i, p in enumerate(programs)]
    tasks = [(p, n_shots, seed, i) for i, p in enumerate(programs)]
    chunksize = max(1, len(tasks) // (4 * executor.workers))
    with ProcessPoolExecutor(executor.workers, initializer=_install_executor, initargs=(executor,)) as pool:
        return list(pool.map(_run_point, tasks, chunksize=chunksize))


def rabi_scan(durations, executor, n_shots, seed, rabi_kHz, freq_MHz=None, m_I=None):
    """Flip fraction versus rf duration on a bright line (the resonant one by default)"""
    m_I = sequences.default_target(executor.system.isotope) if m_I is None else Fraction(m_I)
    if freq_MHz is None:
        freq_MHz = sequences.bright_line(executor.system, m_I).frequency
    programs = [
        sequences.nmr_program(freq_MHz, rabi_kHz, float(t), m_I, name="rabi") for t in durations
    ]
    return run_grid(programs, executor, n_shots, seed)


def spectrum_scan(frequencies, executor, n_shots, seed, rabi_kHz, duration_s=None, m_I=None):
    """Flip fraction versus rf frequency; duration defaults to the pi time"""
    m_I = sequences.default_target(executor.system.isotope) if m_I is None else Fraction(m_I)
    if duration_s is None:
        duration_s = 1.0 / (2.0 * rabi_kHz * bloch.KHZ)
    programs = [
        sequences.nmr_program(float(f), rabi_kHz, duration_s, m_I, name="spectrum") for f in frequencies
    ]
    return run_grid(programs, executor, n_shots, seed)


def map2d(frequencies, red_lengths, executor, n_shots, seed, rabi_kHz=sequences.MAP_RABI_KHZ,
          duration_s=sequences.MAP_RF_DURATION_S, red_power_mW=sequences.RED_POWER_MW, m_I=None):
    """NMR amplitude over (red pulse length, rf frequency); one row per red length"""
    m_I = sequences.default_target(executor.system.isotope) if m_I is None else Fraction(m_I)
    frequencies = list(frequencies)
    red_lengths = list(red_lengths)
    if not frequencies or not red_lengths:
        raise InvariantError("map grids must be nonempty")
    programs = [
        sequences.nmr_program(float(f), rabi_kHz, duration_s, m_I, red_length_s=float(t),
                              red_power_mW=red_power_mW, name="map2d")
        for t in red_lengths
        for f in frequencies
    ]
    flat = run_grid(programs, executor, n_shots, seed)
    width = len(frequencies)
    return [flat[row * width:(row + 1) * width] for row in range(len(red_lengths))]
