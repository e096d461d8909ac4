import math

from scipy import stats

from core.errors import InvariantError
from core.qnd import expected_flip_fraction


class ShotBudgetCalculator:
    @staticmethod
    def shots_for_line(baseline, line_fraction, alpha=0.05, power=0.8):
        """Shots per grid point to tell a line from the baseline (two-proportion z-test)"""
        if not (0 < baseline < 1 and 0 < line_fraction < 1):
            raise InvariantError("flip fractions must lie in (0, 1)")
        if baseline == line_fraction:
            raise InvariantError("line and baseline coincide")
        z_alpha = stats.norm.ppf(1 - alpha / 2)
        z_beta = stats.norm.ppf(power)

        p_pooled = (baseline + line_fraction) / 2

        numerator = (z_alpha * math.sqrt(2 * p_pooled * (1 - p_pooled)) +
                     z_beta * math.sqrt(baseline * (1 - baseline) + line_fraction * (1 - line_fraction))) ** 2
        denominator = (baseline - line_fraction) ** 2

        return math.ceil(numerator / denominator)

    @staticmethod
    def shots_for_population(F, p_resonant, p_bloch=1.0, alpha=0.05, power=0.8):
        """Shots to resolve a line carried by a population p_resonant at fidelity F"""
        baseline = expected_flip_fraction(F, 0.0)
        line = expected_flip_fraction(F, p_resonant, p_bloch)
        return ShotBudgetCalculator.shots_for_line(baseline, line, alpha, power)

    @staticmethod
    def shots_for_stderr(flip_fraction, target_stderr):
        """Binomial shots so that sqrt(f(1-f)/n) <= target_stderr"""
        if target_stderr <= 0:
            raise InvariantError("target standard error must be > 0")
        return max(1, math.ceil(flip_fraction * (1 - flip_fraction) / target_stderr ** 2))

    @staticmethod
    def estimate_runtime(shots_per_point, n_points, shot_rate_hz):
        """Acquisition time in seconds for a scan"""
        if shot_rate_hz > 0:
            return shots_per_point * n_points / shot_rate_hz
        return 0.0
