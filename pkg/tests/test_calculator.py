import math

import pytest
from scipy import stats

from core.calculator import ShotBudgetCalculator
from core.errors import InvariantError
from core.qnd import expected_flip_fraction


def test_shots_for_line_matches_the_two_proportion_formula():
    p1, p2 = 0.04, 0.66
    pooled = (p1 + p2) / 2
    n = (stats.norm.ppf(0.975) * math.sqrt(2 * pooled * (1 - pooled))
         + stats.norm.ppf(0.8) * math.sqrt(p1 * (1 - p1) + p2 * (1 - p2))) ** 2 / (p1 - p2) ** 2
    assert ShotBudgetCalculator.shots_for_line(p1, p2) == math.ceil(n)


def test_weaker_lines_need_more_shots():
    F = 0.98
    bright = ShotBudgetCalculator.shots_for_population(F, 0.7)
    dark = ShotBudgetCalculator.shots_for_population(F, 0.3, p_bloch=0.5)
    assert dark > bright
    assert ShotBudgetCalculator.shots_for_population(0.9, 0.7) > bright


def test_shots_for_population_uses_the_error_floor():
    F = 0.95
    direct = ShotBudgetCalculator.shots_for_line(expected_flip_fraction(F, 0.0), expected_flip_fraction(F, 0.5))
    assert ShotBudgetCalculator.shots_for_population(F, 0.5) == direct


def test_shots_for_stderr():
    assert ShotBudgetCalculator.shots_for_stderr(0.5, 0.01) == 2500
    assert ShotBudgetCalculator.shots_for_stderr(0.0, 0.01) == 1
    with pytest.raises(InvariantError):
        ShotBudgetCalculator.shots_for_stderr(0.5, 0.0)


def test_runtime():
    assert ShotBudgetCalculator.estimate_runtime(1000, 601, 500.0) == pytest.approx(1202.0)
    assert ShotBudgetCalculator.estimate_runtime(1000, 601, 0.0) == 0.0


def test_invalid_fractions():
    with pytest.raises(InvariantError):
        ShotBudgetCalculator.shots_for_line(0.0, 0.5)
    with pytest.raises(InvariantError):
        ShotBudgetCalculator.shots_for_line(0.3, 0.3)
