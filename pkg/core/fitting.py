"""Least-squares fits of the line, decay and rate-law models.

Each model is a FitFunction subclass with parameter names, a value function,
bounds and an automatic starting guess. `fit` minimizes weighted squared
residuals with scipy's bounded trust-region solver, using a forward-difference
Jacobian so every model is treated the same way.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from core.charge_kinetics import ChargeRateModel, RateLaw
from core.errors import FitError

logger = logging.getLogger(__name__)

JACOBIAN_REL_STEP = 1e-6
XTOL = 1e-10
GTOL = 1e-12
FTOL = 1e-15
MAX_EVALUATIONS = 500


class FitFunction:
    """Parent class for all fit models"""
    NAME = ""
    # documented parameter ranges on a unit-span grid, used for round-trip checks
    PARAM_RANGES = {}

    @classmethod
    def names(cls):
        return list(cls.PARAM_RANGES)

    @staticmethod
    def value(x, *params):
        raise NotImplementedError

    @classmethod
    def bounds(cls, x, y):
        n = len(cls.names())
        return np.full(n, -np.inf), np.full(n, np.inf)

    @classmethod
    def autoguess(cls, x, y):
        raise NotImplementedError


def half_height_width(x, y, baseline, peak_index):
    """Full width at half height around y[peak_index], linearly interpolated"""
    height = y[peak_index] - baseline
    if height == 0:
        return 0.0
    level = baseline + height / 2.0
    above = (y - level) * np.sign(height) >= 0

    def crossing(step):
        i = peak_index
        while 0 <= i + step < len(y) and above[i + step]:
            i += step
        j = i + step
        if not 0 <= j < len(y):
            return x[i]
        # interpolate between the last point above and the first below
        return x[i] + (x[j] - x[i]) * (y[i] - level) / (y[i] - y[j])

    return float(crossing(1) - crossing(-1))


def _peak(x, y):
    """(baseline, peak index) with the sign of the peak taken from the distribution of y"""
    mid = np.median(y)
    up = np.percentile(y, 80) - mid >= mid - np.percentile(y, 20)
    index = int(np.argmax(y) if up else np.argmin(y))
    return mid, index


class ExpDecay(FitFunction):
    """A * exp(-t/tau) + c"""
    NAME = "exp"
    PARAM_RANGES = {"A": (0.5, 2.0), "tau": (0.1, 0.5), "c": (-0.2, 0.2)}

    @staticmethod
    def value(t, A, tau, c):
        return A * np.exp(-np.asarray(t) / tau) + c

    @classmethod
    def bounds(cls, x, y):
        return np.array([-np.inf, 0.0, -np.inf]), np.full(3, np.inf)

    @classmethod
    def autoguess(cls, x, y):
        span = float(np.ptp(x))
        c = float(y[-1])
        r = y - c
        if r[0] == 0:
            return {"A": 0.0, "tau": span / 3.0, "c": c}
        sign = 1.0 if r[0] > 0 else -1.0
        mask = sign * r > 0.2 * abs(r[0])
        tau = span / 3.0
        A = float(r[0] * math.exp(x[0] / tau))
        if mask.sum() >= 2:
            slope, intercept = np.polyfit(x[mask], np.log(sign * r[mask]), 1)
            if slope < 0:
                tau = -1.0 / slope
                A = sign * math.exp(intercept)
        return {"A": A, "tau": tau, "c": c}


class Lorentzian(FitFunction):
    """A * (gamma/2)**2 / ((x - x0)**2 + (gamma/2)**2) + c; gamma is the FWHM"""
    NAME = "lorentzian"
    PARAM_RANGES = {"A": (0.2, 1.0), "gamma": (0.05, 0.3), "x0": (-0.2, 0.2), "c": (0.0, 0.1)}

    @staticmethod
    def value(x, A, gamma, x0, c):
        hw2 = (gamma / 2.0) ** 2
        return A * hw2 / ((np.asarray(x) - x0) ** 2 + hw2) + c

    @classmethod
    def bounds(cls, x, y):
        return np.array([-np.inf, 0.0, -np.inf, -np.inf]), np.full(4, np.inf)

    @classmethod
    def autoguess(cls, x, y):
        baseline, index = _peak(x, y)
        width = half_height_width(x, y, baseline, index)
        if width <= 0:
            width = float(np.ptp(x)) / 6.0
        return {"A": float(y[index] - baseline), "gamma": width, "x0": float(x[index]), "c": float(baseline)}


class DetunedRabiLine(FitFunction):
    """Pi-pulse line of a two-level system without dephasing, t = 1/(2 Omega)"""
    NAME = "rabi_line"
    PARAM_RANGES = {"A": (0.5, 1.0), "Omega": (0.05, 0.2), "x0": (-0.2, 0.2), "c": (0.0, 0.1)}
    # FWHM of the pi-pulse line in units of Omega
    WIDTH_PER_OMEGA = 1.6

    @staticmethod
    def value(x, A, Omega, x0, c):
        ratio2 = ((np.asarray(x) - x0) / Omega) ** 2
        return A * np.sin(0.5 * np.pi * np.sqrt(1.0 + ratio2)) ** 2 / (1.0 + ratio2) + c

    @classmethod
    def bounds(cls, x, y):
        return np.array([-np.inf, 0.0, -np.inf, -np.inf]), np.full(4, np.inf)

    @classmethod
    def autoguess(cls, x, y):
        baseline, index = _peak(x, y)
        width = half_height_width(x, y, baseline, index)
        if width <= 0:
            width = float(np.ptp(x)) / 6.0
        return {
            "A": float(y[index] - baseline),
            "Omega": width / cls.WIDTH_PER_OMEGA,
            "x0": float(x[index]),
            "c": float(baseline),
        }


class DampedRabi(FitFunction):
    """A * (1 - exp(-t/T2p) * cos(2 pi Omega t)) / 2 + c"""
    NAME = "damped_rabi"
    PARAM_RANGES = {"A": (0.5, 1.0), "T2p": (0.3, 3.0), "Omega": (3.0, 8.0), "c": (0.0, 0.1)}
    ZERO_PADDING = 16

    @staticmethod
    def value(t, A, T2p, Omega, c):
        t = np.asarray(t)
        return A * (1.0 - np.exp(-t / T2p) * np.cos(2.0 * np.pi * Omega * t)) / 2.0 + c

    @classmethod
    def bounds(cls, x, y):
        return np.array([-np.inf, 0.0, 0.0, -np.inf]), np.full(4, np.inf)

    @classmethod
    def dominant_frequency(cls, x, y):
        """Strongest nonzero frequency of the zero-padded spectrum on a uniform resampling"""
        grid = np.linspace(x[0], x[-1], len(x))
        uniform = np.interp(grid, x, y)
        uniform = uniform - uniform.mean()
        n = cls.ZERO_PADDING * len(grid)
        power = np.abs(np.fft.rfft(uniform, n=n)) ** 2
        freqs = np.fft.rfftfreq(n, d=grid[1] - grid[0])
        return float(freqs[1 + int(np.argmax(power[1:]))])

    @classmethod
    def autoguess(cls, x, y):
        span = float(np.ptp(x))
        c = float(y[0])
        mid = float(np.mean(y))
        A = 2.0 * (mid - c)
        Omega = cls.dominant_frequency(x, y)
        T2p = 10.0 * span
        period = 1.0 / Omega
        centers, amplitudes = [], []
        start = x[0]
        while start + period <= x[-1]:
            window = (x >= start) & (x < start + period)
            if window.sum() >= 2:
                centers.append(start + period / 2.0)
                amplitudes.append(np.max(np.abs(y[window] - mid)))
            start += period
        amplitudes = np.asarray(amplitudes)
        if len(centers) >= 2 and np.all(amplitudes > 0):
            slope, _ = np.polyfit(centers, np.log(amplitudes), 1)
            if slope < 0:
                T2p = -1.0 / slope
        return {"A": A, "T2p": T2p, "Omega": Omega, "c": c}


class SaturablePower(FitFunction):
    """k * P**2 / (P + P_sat); a misalignment factor is absorbed in k"""
    NAME = "saturable"
    PARAM_RANGES = {"k": (0.1, 10.0), "P_sat": (0.1, 10.0)}
    # P_sat may not exceed this multiple of the largest sampled power
    PSAT_LIMIT = 1e3

    @staticmethod
    def value(P, k, P_sat):
        P = np.asarray(P)
        return k * P ** 2 / (P + P_sat)

    @classmethod
    def bounds(cls, x, y):
        return np.array([0.0, 0.0]), np.array([np.inf, cls.PSAT_LIMIT * float(np.max(x))])

    @classmethod
    def autoguess(cls, x, y):
        """P_sat from the log-log slope between the two highest powers, k from the top point"""
        upper = cls.PSAT_LIMIT * float(np.max(x))
        P_top = float(x[-1])
        if len(x) >= 2 and y[-1] > 0 and y[-2] > 0 and x[-2] > 0:
            slope = math.log(y[-1] / y[-2]) / math.log(x[-1] / x[-2])
        else:
            slope = 1.5
        if slope >= 2.0:
            P_sat = 0.5 * upper
        elif slope <= 1.0:
            P_sat = 1e-3 * float(x[0])
        else:
            P_sat = P_top * (slope - 1.0) / (2.0 - slope)
        P_sat = min(max(P_sat, 1e-3 * float(x[0])), 0.5 * upper)
        k = float(y[-1]) * (P_top + P_sat) / P_top ** 2 if P_top > 0 else 1.0
        return {"k": max(k, 1e-12), "P_sat": P_sat}


MODELS = {cls.NAME: cls for cls in (ExpDecay, Lorentzian, DetunedRabiLine, DampedRabi, SaturablePower)}


def get_model(model):
    if isinstance(model, type) and issubclass(model, FitFunction):
        return model
    try:
        return MODELS[model]
    except KeyError:
        raise FitError(f"unknown model {model!r} (choose from {', '.join(MODELS)})")


@dataclass(frozen=True)
class FitResult:
    model: str
    names: tuple
    estimates: np.ndarray
    covariance: np.ndarray
    residual_norm: float  # weighted sum of squares
    n_iterations: int
    converged: bool
    message: str = ""
    x_range: tuple = field(default=(), compare=False)

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def params(self):
        return dict(zip(self.names, (float(v) for v in self.estimates)))

    def value(self, x):
        return get_model(self.model).value(x, *self.estimates)

    def to_dict(self):
        return {
            "model": self.model,
            "estimates": self.params,
            "stderr": dict(zip(self.names, (float(v) for v in self.stderr))),
            "covariance": self.covariance.tolist(),
            "residual_norm": float(self.residual_norm),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
            "message": self.message,
        }


def numeric_jacobian(func, params, rel_step=JACOBIAN_REL_STEP):
    """Forward differences with step rel_step * |p| (rel_step where p == 0)"""
    params = np.asarray(params, dtype=float)
    f0 = np.asarray(func(params), dtype=float)
    jac = np.empty((f0.size, params.size))
    for j, p in enumerate(params):
        h = rel_step * (abs(p) if p != 0 else 1.0)
        shifted = params.copy()
        shifted[j] = p + h
        jac[:, j] = (np.asarray(func(shifted), dtype=float) - f0) / h
    return jac


def _prepare(xs, ys, sigmas, n_params):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise FitError(f"mismatched lengths: {xs.size} x values, {ys.size} y values")
    if sigmas is not None:
        sigmas = np.asarray(sigmas, dtype=float)
        if sigmas.shape != xs.shape:
            raise FitError("sigmas must match the data length")
        if np.any(sigmas <= 0) or not np.all(np.isfinite(sigmas)):
            raise FitError("sigmas must be positive and finite")
    if xs.size < n_params + 1:
        raise FitError(f"{xs.size} points are too few for {n_params} parameters")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise FitError("data must be finite")
    if np.ptp(xs) == 0:
        raise FitError("singular normal equations: all x values coincide")
    # canonical order so the result does not depend on the input order
    order = np.lexsort((ys, xs))
    xs, ys = xs[order], ys[order]
    sigmas = np.ones_like(xs) if sigmas is None else sigmas[order]
    return xs, ys, sigmas


def _initial(cls, xs, ys, init, lower, upper):
    names = cls.names()
    guess = cls.autoguess(xs, ys)
    if init is not None:
        if isinstance(init, dict):
            unknown = set(init) - set(names)
            if unknown:
                raise FitError(f"unknown parameters for {cls.NAME}: {sorted(unknown)}")
            guess.update({k: float(v) for k, v in init.items()})
        else:
            values = [float(v) for v in init]
            if len(values) != len(names):
                raise FitError(f"{cls.NAME} takes {len(names)} parameters, got {len(values)}")
            guess = dict(zip(names, values))
    p0 = np.array([guess[name] for name in names], dtype=float)
    # least_squares needs a strictly feasible start
    span = np.where(np.isfinite(upper - lower), upper - lower, np.abs(p0) + 1.0)
    margin = 1e-9 * span
    return np.clip(p0, lower + margin, upper - margin)


def fit(model, xs, ys, sigmas=None, init=None):
    """Weighted least-squares fit of `model` to (xs, ys)"""
    cls = get_model(model)
    names = cls.names()
    xs, ys, sigmas = _prepare(xs, ys, sigmas, len(names))
    lower, upper = (np.asarray(b, dtype=float) for b in cls.bounds(xs, ys))
    p0 = _initial(cls, xs, ys, init, lower, upper)

    def residuals(p):
        return (ys - cls.value(xs, *p)) / sigmas

    result = least_squares(
        residuals,
        p0,
        jac=lambda p: numeric_jacobian(residuals, p),
        bounds=(lower, upper),
        method="trf",
        x_scale=np.where(np.abs(p0) > 0, np.abs(p0), 1.0),
        xtol=XTOL,
        gtol=GTOL,
        ftol=FTOL,
        max_nfev=MAX_EVALUATIONS,
    )
    n, p = xs.size, len(names)
    jac = numeric_jacobian(residuals, result.x)
    if np.linalg.matrix_rank(jac) < p:
        logger.warning("%s fit: Jacobian is rank deficient, some parameters are not identifiable", cls.NAME)
    dof = max(n - p, 1)
    cov = np.linalg.pinv(jac.T @ jac) * (2.0 * result.cost / dof)
    cov = (cov + cov.T) / 2.0
    converged = result.status > 0
    if not converged:
        logger.warning("%s fit stopped after %d evaluations without converging", cls.NAME, result.nfev)
    else:
        logger.info("%s fit converged after %d evaluations: %s", cls.NAME, result.nfev,
                    ", ".join(f"{k}={v:.6g}" for k, v in zip(names, result.x)))
    return FitResult(
        cls.NAME,
        tuple(names),
        result.x.copy(),
        cov,
        float(2.0 * result.cost),
        int(result.nfev),
        converged,
        str(result.message),
        (float(xs[0]), float(xs[-1])),
    )


@dataclass(frozen=True)
class PowerDependence:
    result: FitResult
    low_power_slope: float
    high_power_slope: float
    warnings: tuple = ()

    def to_dict(self):
        data = self.result.to_dict()
        data["low_power_slope"] = self.low_power_slope
        data["high_power_slope"] = self.high_power_slope
        data["warnings"] = list(self.warnings)
        return data


def fit_power_dependence(powers, rates, sigmas=None, init=None):
    """SaturablePower fit plus the log-log slopes at the lowest and highest power.

    Without sigmas the residuals are relative (sigma = rate), so every decade
    of a log-spaced sweep carries the same weight.
    """
    powers = np.asarray(powers, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if powers.shape != rates.shape:
        raise FitError(f"mismatched lengths: {powers.size} powers, {rates.size} rates")
    if powers.size == 0 or np.any(powers <= 0):
        raise FitError("powers must be positive")
    if sigmas is None:
        if np.any(rates <= 0):
            raise FitError("relative weighting needs positive rates; pass sigmas")
        sigmas = rates
    warnings = []
    if powers.size < 5:
        warnings.append(f"only {powers.size} power points (5 or more recommended)")
    decades = math.log10(powers.max() / powers.min())
    if decades < 2:
        warnings.append(f"powers span {decades:.2f} decades (2 or more recommended)")
    result = fit(SaturablePower, powers, rates, sigmas, init)
    k, P_sat = result.estimates
    if P_sat >= 100.0 * powers.max():
        warnings.append(
            f"P_sat={P_sat:.4g} lies far above the sampled powers (bound "
            f"{SaturablePower.PSAT_LIMIT * powers.max():.4g}); only k/P_sat is identifiable"
        )
    for message in warnings:
        logger.warning("power dependence: %s", message)
    law = RateLaw(float(k), float(P_sat))
    return PowerDependence(
        result,
        ChargeRateModel.log_slope(law, float(powers.min())),
        ChargeRateModel.log_slope(law, float(powers.max())),
        tuple(warnings),
    )
