#!/usr/bin/env python3
"""
AR(1)-GARCH(1,1) - Core Business Logic
Residual filtering, the conditional Gaussian log-likelihood of the extended
model, and the two-stage maximum likelihood fit
"""
import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from numba import njit

from core.configs import BfgsConfig, GsaConfig
from core.errors import DegenerateInputError, DomainError, InputDataError, OptimizationError
from core.logperiodic import LP_NAMES, Bounds, LPParams, default_bounds, residuals
from core.optimizer import (MIN_FIT_LENGTH, FitResult, bfgs_minimize, boundary_flags,
                            fit_logperiodic)
from core.timeseries import PriceSeries
from utils.performance_utils import Stopwatch, profile_function

AG_NAMES = ('rho', 'alpha0', 'alpha1', 'alpha2')
FULL_NAMES = LP_NAMES + AG_NAMES

# moment-matching fallback for the stage-2 fit
FALLBACK_ALPHA1 = 0.05
FALLBACK_ALPHA2 = 0.90
ALPHA0_FLOOR = 1e-12


@dataclass(frozen=True)
class ARGARCHParams:
    rho: float
    alpha0: float
    alpha1: float
    alpha2: float

    @property
    def persistence(self) -> float:
        return self.alpha1 + self.alpha2

    def is_valid(self) -> bool:
        return (abs(self.rho) < 1 and self.alpha0 > 0 and self.alpha1 >= 0
                and self.alpha2 >= 0 and self.alpha1 + self.alpha2 < 1)

    def validate(self):
        if not self.is_valid():
            raise DomainError(f"AR(1)-GARCH(1,1) parameters violate stationarity/positivity: {self}")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.alpha0, self.alpha1, self.alpha2], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'ARGARCHParams':
        return cls(*(float(v) for v in values))

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class FullParams:
    """Trend plus error-process parameters, flat order FULL_NAMES"""

    lp: LPParams
    ag: ARGARCHParams

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.lp.as_array(), self.ag.as_array()])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'FullParams':
        values = np.asarray(values, dtype=float)
        if values.shape != (len(FULL_NAMES),):
            raise DomainError(f"FullParams needs {len(FULL_NAMES)} values, got shape {values.shape}")
        return cls(LPParams.from_array(values[:7]), ARGARCHParams.from_array(values[7:]))

    def to_dict(self) -> Dict[str, float]:
        return {**self.lp.to_dict(), **self.ag.to_dict()}

    @classmethod
    def from_dict(cls, values: Dict[str, float]) -> 'FullParams':
        missing = [n for n in FULL_NAMES if n not in values]
        if missing:
            raise InputDataError(f"Parameters missing: {', '.join(missing)}")
        try:
            return cls.from_array([float(values[n]) for n in FULL_NAMES])
        except (TypeError, ValueError) as e:
            raise InputDataError(f"Invalid parameter value: {e}") from e

    @classmethod
    def from_fit(cls, fit: FitResult) -> 'FullParams':
        return cls.from_dict(fit.params)


@dataclass
class FilterOutput:
    """Filtered sequences; index 0 of eta, sigma2 and eps is undefined (NaN)"""

    u: np.ndarray
    eta: np.ndarray
    sigma2: np.ndarray
    eps: np.ndarray


@dataclass
class TwoStageFit:
    stage1: FitResult
    stage2: ARGARCHParams
    full: FitResult

    @property
    def params(self) -> FullParams:
        return FullParams.from_fit(self.full)


@njit(cache=True)
def _filter_kernel(u, rho, alpha0, alpha1, alpha2, eta, sigma2):
    n = u.shape[0]
    eta[0] = np.nan
    sigma2[0] = np.nan
    for t in range(1, n):
        eta[t] = u[t] - rho * u[t - 1]
    sigma2[1] = alpha0 / (1.0 - alpha1 - alpha2)
    for t in range(2, n):
        sigma2[t] = alpha0 + alpha1 * eta[t - 1] * eta[t - 1] + alpha2 * sigma2[t - 1]


@njit(cache=True)
def _loglik_kernel(u, rho, alpha0, alpha1, alpha2):
    n = u.shape[0]
    sigma2 = alpha0 / (1.0 - alpha1 - alpha2)
    eta = u[1] - rho * u[0]
    log_sum = 0.0
    ratio_sum = 0.0
    for t in range(1, n):
        if t > 1:
            sigma2 = alpha0 + alpha1 * eta * eta + alpha2 * sigma2
            eta = u[t] - rho * u[t - 1]
        if sigma2 <= 0.0:
            return np.nan
        log_sum += np.log(sigma2)
        ratio_sum += eta * eta / sigma2
    return -0.5 * (n - 1) * np.log(2.0 * np.pi) - 0.5 * log_sum - 0.5 * ratio_sum


def unconditional_variance(ag: ARGARCHParams) -> float:
    """alpha0 / (1 - alpha1 - alpha2)"""
    if ag.alpha1 + ag.alpha2 >= 1:
        raise DomainError(f"No finite unconditional variance for alpha1 + alpha2 = {ag.persistence}")
    return ag.alpha0 / (1.0 - ag.alpha1 - ag.alpha2)


def filter_argarch(ag: ARGARCHParams, u) -> FilterOutput:
    """Recover eta, sigma2 and eps from trend residuals"""
    ag.validate()
    u = np.ascontiguousarray(u, dtype=float)
    if u.size < 2:
        raise DomainError(f"Filtering needs at least 2 residuals, got {u.size}")
    eta = np.empty_like(u)
    sigma2 = np.empty_like(u)
    _filter_kernel(u, ag.rho, ag.alpha0, ag.alpha1, ag.alpha2, eta, sigma2)
    eps = np.full_like(u, np.nan)
    eps[1:] = eta[1:] / np.sqrt(sigma2[1:])
    return FilterOutput(u=u, eta=eta, sigma2=sigma2, eps=eps)


def loglik_from_residuals(ag: ARGARCHParams, u) -> float:
    ag.validate()
    u = np.ascontiguousarray(u, dtype=float)
    if u.size < 2:
        raise DomainError(f"Likelihood needs at least 2 residuals, got {u.size}")
    value = _loglik_kernel(u, ag.rho, ag.alpha0, ag.alpha1, ag.alpha2)
    if np.isnan(value):
        raise DomainError("Non-positive conditional variance in the GARCH recursion")
    return float(value)


def loglik(theta: FullParams, series: PriceSeries) -> float:
    """Conditional Gaussian log-likelihood summed over t = 2..n"""
    return loglik_from_residuals(theta.ag, residuals(theta.lp, series))


def standardized_residuals(theta: FullParams, series: PriceSeries) -> np.ndarray:
    """eta_t / sigma_t for t = 2..n"""
    return filter_argarch(theta.ag, residuals(theta.lp, series)).eps[1:]


def full_bounds(series: PriceSeries, lp_bounds: Optional[Bounds] = None) -> Bounds:
    """Trend bounds extended with the four error-process intervals"""
    lp_bounds = lp_bounds or default_bounds(series)
    price_var = float(np.var(series.prices, ddof=1)) if len(series) > 1 else 0.0
    if not price_var > ALPHA0_FLOOR:
        raise DegenerateInputError("Price series has zero variance; alpha0 has no admissible interval")
    return lp_bounds.extend(Bounds.from_pairs([
        ('rho', (-1.0, 1.0)),
        ('alpha0', (ALPHA0_FLOOR, price_var)),
        ('alpha1', (0.0, 1.0)),
        ('alpha2', (0.0, 1.0)),
    ]))


def _lag1_autocorrelation(u: np.ndarray) -> float:
    centered = u - u.mean()
    return float(np.dot(centered[1:], centered[:-1]) / np.dot(centered, centered))


def moment_defaults(u) -> ARGARCHParams:
    """Unconditional-moment starting values"""
    u = np.asarray(u, dtype=float)
    variance = float(np.var(u, ddof=1))
    if not variance > 0:
        raise DegenerateInputError("Residual sequence has zero variance")
    rho = float(np.clip(_lag1_autocorrelation(u), -0.99, 0.99))
    return ARGARCHParams(rho=rho,
                         alpha0=variance * (1.0 - FALLBACK_ALPHA1 - FALLBACK_ALPHA2),
                         alpha1=FALLBACK_ALPHA1,
                         alpha2=FALLBACK_ALPHA2)


def fit_argarch_on_residuals(u, bfgs: Optional[BfgsConfig] = None) -> ARGARCHParams:
    """Stage-2 ML fit of the error process on detrended residuals"""
    u = np.ascontiguousarray(u, dtype=float)
    if u.size < MIN_FIT_LENGTH:
        raise InputDataError(f"Residual sequence too short: {u.size} < {MIN_FIT_LENGTH}")
    fallback = moment_defaults(u)
    variance = float(np.var(u, ddof=1))

    # persistence s = alpha1 + alpha2 and share w = alpha1 / s keep the simplex a box
    box = Bounds.from_pairs([
        ('rho', (-1.0, 1.0)),
        ('alpha0', (ALPHA0_FLOOR, variance)),
        ('persistence', (0.0, 1.0)),
        ('share', (0.0, 1.0)),
    ])

    def unpack(x):
        rho, alpha0, s, w = box.constrain(x)
        return ARGARCHParams(rho=rho, alpha0=alpha0, alpha1=s * w, alpha2=s * (1.0 - w))

    def cost(x):
        ag = unpack(x)
        return -_loglik_kernel(u, ag.rho, ag.alpha0, ag.alpha1, ag.alpha2) / (u.size - 1)

    start = box.unconstrain([fallback.rho, fallback.alpha0,
                             fallback.persistence, fallback.alpha1 / fallback.persistence])
    try:
        result = bfgs_minimize(cost, start, bfgs)
    except (OptimizationError, DomainError, FloatingPointError) as e:
        logging.warning(f"Stage-2 GARCH fit failed ({e}); using moment defaults")
        return fallback

    if not np.isfinite(result.fun):
        logging.warning("Stage-2 GARCH fit produced no finite likelihood; using moment defaults")
        return fallback
    fitted = unpack(result.x)
    if not fitted.is_valid():
        logging.warning(f"Stage-2 GARCH fit left the admissible region ({fitted}); using moment defaults")
        return fallback
    return fitted


def negative_loglik_cost(series: PriceSeries, bounds: Bounds):
    """-lnL / (n - 1) over the unbounded 11-vector; +inf where alpha1 + alpha2 >= 1"""
    t, prices = series.t, series.prices
    scale = max(len(series) - 1, 1)

    def cost(x):
        values = bounds.constrain(x)
        rho, alpha0, alpha1, alpha2 = values[7:]
        if alpha1 + alpha2 >= 1.0:
            return float('inf')
        lp = LPParams.from_array(values[:7])
        dt = lp.tc - t
        power = dt ** lp.beta
        u = prices - (lp.A + lp.B * power + lp.C * power * np.cos(lp.omega * np.log(dt) + lp.phi))
        return -_loglik_kernel(u, rho, alpha0, alpha1, alpha2) / scale

    return cost


@profile_function("argarch.fit_full")
def fit_full(series: PriceSeries, init: FullParams, bounds: Optional[Bounds] = None,
             bfgs: Optional[BfgsConfig] = None, seed: int = 0) -> FitResult:
    """Joint conditional ML over all eleven parameters, started from init"""
    bounds = bounds or full_bounds(series)
    if tuple(bounds.names) != FULL_NAMES:
        raise DomainError(f"Full bounds must cover {FULL_NAMES} in order, got {bounds.names}")
    bfgs = bfgs or BfgsConfig()

    start_values = bounds.interior(init.as_array())
    cost = negative_loglik_cost(series, bounds)
    x0 = bounds.unconstrain(start_values)
    with np.errstate(all='ignore'):
        start_cost = cost(x0)
    if not np.isfinite(start_cost):
        raise OptimizationError(f"Log-likelihood is not finite at the initial point {init.to_dict()}")

    with Stopwatch() as watch:
        refined = bfgs_minimize(cost, x0, bfgs)
    values = bounds.constrain(refined.x)
    lnl = loglik(FullParams.from_array(values), series)

    contact = boundary_flags(values, bounds)
    if contact:
        logging.warning(f"Joint fit touches bounds for: {', '.join(contact)}")

    return FitResult(
        model='extended',
        names=FULL_NAMES,
        values=values,
        objective='loglik',
        objective_value=lnl,
        converged=refined.converged,
        bounds=bounds,
        seed=seed,
        boundary_contact=contact,
        bfgs_iterations=refined.iterations,
        bfgs_evaluations=refined.evaluations,
        gradient_norm=refined.gradient_norm,
        message=refined.message,
        settings={'bfgs': bfgs.to_dict()},
        wall_time=watch.elapsed
    )


def fit_two_stage(series: PriceSeries, bounds: Optional[Bounds] = None,
                  gsa: Optional[GsaConfig] = None, bfgs: Optional[BfgsConfig] = None,
                  rng: Optional[np.random.Generator] = None,
                  threads: Optional[int] = None) -> TwoStageFit:
    """Trend fit, error-process fit on its residuals, then the joint fit"""
    bounds = bounds or full_bounds(series)
    lp_bounds = bounds.subset(LP_NAMES)

    stage1 = fit_logperiodic(series, lp_bounds, gsa, bfgs, rng=rng, threads=threads)
    u = residuals(stage1.lp_params, series)
    stage2 = fit_argarch_on_residuals(u, bfgs)
    logging.info(f"Stage-2 initial values: {stage2}")

    init = FullParams(stage1.lp_params, stage2)
    full = fit_full(series, init, bounds, bfgs, seed=stage1.seed)
    full.gsa_restart_costs = stage1.gsa_restart_costs
    full.gsa_iterations = stage1.gsa_iterations
    full.gsa_evaluations = stage1.gsa_evaluations
    full.settings = {**stage1.settings, **full.settings}
    full.wall_time += stage1.wall_time
    return TwoStageFit(stage1=stage1, stage2=stage2, full=full)
