#!/usr/bin/env python3
"""
Log-Periodic Trend - Core Business Logic
Deterministic pre-crash trend g(t), its residuals and OLS cost, and the bounded
re-parameterization used by every optimizer in the package
"""
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from core.errors import DomainError, InputDataError
from core.timeseries import TRADING_DAYS_PER_YEAR, PriceSeries

LP_NAMES = ('A', 'B', 'C', 'tc', 'beta', 'omega', 'phi')
# given these, A, B, C and phi have a closed-form least-squares solution
NONLINEAR_NAMES = ('tc', 'beta', 'omega')


@dataclass(frozen=True)
class LPParams:
    """Trend parameters A + B(tc-t)^beta + C(tc-t)^beta cos(omega ln(tc-t) + phi)"""

    A: float      # price level at tc
    B: float      # power-law amplitude
    C: float      # oscillation amplitude
    tc: float     # critical time, years
    beta: float   # power-law exponent
    omega: float  # log-frequency
    phi: float    # phase, radians

    def as_array(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C, self.tc, self.beta, self.omega, self.phi], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'LPParams':
        values = np.asarray(values, dtype=float)
        if values.shape != (len(LP_NAMES),):
            raise DomainError(f"LPParams needs {len(LP_NAMES)} values, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> 'LPParams':
        missing = [name for name in LP_NAMES if name not in values]
        if missing:
            raise InputDataError(f"Trend parameters missing: {', '.join(missing)}")
        try:
            return cls(**{f.name: float(values[f.name]) for f in fields(cls)})
        except (TypeError, ValueError) as e:
            raise InputDataError(f"Invalid trend parameter value: {e}") from e


@dataclass(frozen=True)
class Bounds:
    """Closed interval [a, b] per named parameter, in a fixed order"""

    names: Tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        names = tuple(self.names)
        if not (len(names) == len(lower) == len(upper)):
            raise DomainError("Bounds need one lower and one upper value per name")
        bad = [n for n, a, b in zip(names, lower, upper) if not (np.isfinite(a) and np.isfinite(b) and a < b)]
        if bad:
            raise DomainError(f"Empty or non-finite bound interval for: {', '.join(bad)}")
        object.__setattr__(self, 'names', names)
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> Tuple[float, float]:
        i = self.names.index(name)
        return float(self.lower[i]), float(self.upper[i])

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[str, Tuple[float, float]]]) -> 'Bounds':
        pairs = list(pairs)
        return cls(tuple(n for n, _ in pairs),
                   np.array([ab[0] for _, ab in pairs], dtype=float),
                   np.array([ab[1] for _, ab in pairs], dtype=float))

    def replace(self, **intervals) -> 'Bounds':
        """Copy with some intervals swapped out"""
        pairs = [(n, intervals.get(n, self[n])) for n in self.names]
        return Bounds.from_pairs(pairs)

    def extend(self, other: 'Bounds') -> 'Bounds':
        return Bounds(self.names + other.names,
                      np.concatenate([self.lower, other.lower]),
                      np.concatenate([self.upper, other.upper]))

    def subset(self, names: Sequence[str]) -> 'Bounds':
        return Bounds.from_pairs((n, self[n]) for n in names)

    def constrain(self, x) -> np.ndarray:
        """Unbounded vector to the box interior"""
        return self.lower + self.width * expit(np.asarray(x, dtype=float))

    def unconstrain(self, y) -> np.ndarray:
        """Box-interior vector to the unbounded space"""
        y = np.asarray(y, dtype=float)
        inside = (y > self.lower) & (y < self.upper)
        if not np.all(inside):
            outside = [n for n, ok in zip(self.names, inside) if not ok]
            raise DomainError(f"Values outside their open bound intervals: {', '.join(outside)}")
        return logit((y - self.lower) / self.width)

    def interior(self, values, margin: float = 1e-9) -> np.ndarray:
        """Values pulled strictly inside their intervals by margin * width"""
        pad = margin * self.width
        return np.clip(np.asarray(values, dtype=float), self.lower + pad, self.upper - pad)

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all((y > self.lower) & (y < self.upper)))

    def to_dict(self) -> Dict[str, list]:
        return {n: [float(a), float(b)] for n, a, b in zip(self.names, self.lower, self.upper)}

    @classmethod
    def from_dict(cls, values: Dict[str, Sequence[float]]) -> 'Bounds':
        try:
            return cls.from_pairs((n, (float(ab[0]), float(ab[1]))) for n, ab in values.items())
        except (TypeError, ValueError, IndexError) as e:
            raise InputDataError(f"Invalid bounds: {e}") from e


def to_constrained(x, a: float, b: float):
    """a + (b - a) * exp(x) / (1 + exp(x)), strictly inside (a, b)"""
    if not a < b:
        raise DomainError(f"Bound interval needs a < b, got [{a}, {b}]")
    return a + (b - a) * expit(x)


def to_unconstrained(y, a: float, b: float):
    """Inverse of to_constrained on the open interval (a, b)"""
    if not a < b:
        raise DomainError(f"Bound interval needs a < b, got [{a}, {b}]")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr <= a) or np.any(y_arr >= b):
        raise DomainError(f"Value {y} outside the open interval ({a}, {b})")
    return logit((y - a) / (b - a))


def _time_to_critical(p: LPParams, t) -> np.ndarray:
    dt = p.tc - np.asarray(t, dtype=float)
    if np.any(~(dt > 0)):
        raise DomainError(f"Trend evaluated at t >= tc = {p.tc}")
    return dt


def evaluate_trend(p: LPParams, t):
    """g(t) for scalar or array t < tc (natural log in the cosine)"""
    dt = _time_to_critical(p, t)
    power = dt ** p.beta
    value = p.A + p.B * power + p.C * power * np.cos(p.omega * np.log(dt) + p.phi)
    return float(value) if np.ndim(value) == 0 else value


def trend_gradient(p: LPParams, t) -> np.ndarray:
    """Analytic dg/dparam, one row per time point in LP_NAMES column order"""
    dt = np.atleast_1d(_time_to_critical(p, t))
    log_dt = np.log(dt)
    power = dt ** p.beta
    phase = p.omega * log_dt + p.phi
    cos_phase, sin_phase = np.cos(phase), np.sin(phase)

    grad = np.empty((dt.size, len(LP_NAMES)))
    grad[:, 0] = 1.0
    grad[:, 1] = power
    grad[:, 2] = power * cos_phase
    grad[:, 3] = (power / dt) * (p.B * p.beta + p.C * (p.beta * cos_phase - p.omega * sin_phase))
    grad[:, 4] = power * log_dt * (p.B + p.C * cos_phase)
    grad[:, 5] = -p.C * power * sin_phase * log_dt
    grad[:, 6] = -p.C * power * sin_phase
    return grad


def fitted_trend(p: LPParams, series: PriceSeries) -> np.ndarray:
    return np.atleast_1d(evaluate_trend(p, series.t))


def residuals(p: LPParams, series: PriceSeries) -> np.ndarray:
    """Observed minus fitted trend"""
    return series.prices - fitted_trend(p, series)


def sse(p: LPParams, series: PriceSeries) -> float:
    u = residuals(p, series)
    return float(np.dot(u, u))


def linear_amplitudes(tc: float, beta: float, omega: float, series: PriceSeries, bounds: Bounds) -> LPParams:
    """Least-squares A, B, C and phi for fixed (tc, beta, omega), pulled inside bounds

    C dt^beta cos(omega ln dt + phi) is rewritten as c1 f cos + c2 f sin with f = dt^beta, which makes the trend
    linear in (A, B, c1, c2). The phase is reported in [0, pi) with C carrying the sign.
    """
    dt = tc - series.t
    if np.any(~(dt > 0)):
        raise DomainError(f"Trend evaluated at t >= tc = {tc}")
    power = dt ** beta
    phase = omega * np.log(dt)
    design = np.column_stack([np.ones_like(dt), power, power * np.cos(phase), power * np.sin(phase)])
    (A, B, c1, c2), *_ = np.linalg.lstsq(design, series.prices, rcond=None)

    C = float(np.hypot(c1, c2))
    phi = float(np.mod(np.arctan2(-c2, c1), 2.0 * np.pi))
    if phi >= np.pi:
        C, phi = -C, phi - np.pi
    values = bounds.interior([A, B, C, tc, beta, omega, phi])
    return LPParams.from_array(values)


def default_bounds(series: PriceSeries) -> Bounds:
    """Scale-relative amplitude intervals and a tc interval beyond the sample"""
    pmax = float(np.max(series.prices))
    t_last = series.t_last
    return Bounds.from_pairs([
        ('A', (0.0, 3.0 * pmax)),
        ('B', (-3.0 * pmax, 0.0)),
        ('C', (-pmax, pmax)),
        ('tc', (t_last + 1.0 / TRADING_DAYS_PER_YEAR, t_last + 1.0)),
        ('beta', (0.0, 1.0)),
        ('omega', (5.0, 15.0)),
        ('phi', (0.0, 2.0 * np.pi)),
    ])
