#!/usr/bin/env python3
"""
Synthetic Data - Core Business Logic
Forward simulation of the log-periodic AR(1)-GARCH(1,1) process and Monte-Carlo
parameter-recovery / interval-coverage studies
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd
from numba import njit

from core.argarch import FULL_NAMES, FullParams, fit_two_stage, full_bounds, standardized_residuals
from core.configs import BfgsConfig, GsaConfig
from core.diagnostics import ljung_box
from core.errors import CrashModelError, DomainError, InputDataError
from core.inference import infer
from core.logperiodic import Bounds, evaluate_trend, residuals
from core.timeseries import TRADING_DAYS_PER_YEAR, PriceSeries, as_date, holiday_array
from utils.performance_utils import Stopwatch, resolve_thread_count

MIN_STUDY_REPLICATIONS = 10
DEFAULT_ORIGIN = '2000-01-03'

BoundsFactory = Callable[[PriceSeries], Bounds]


@njit(cache=True)
def _simulate_kernel(eps, rho, alpha0, alpha1, alpha2, u, eta, sigma2):
    n = eps.shape[0]
    variance = alpha0 / (1.0 - alpha1 - alpha2)
    sigma2[0] = variance
    eta[0] = np.sqrt(variance) * eps[0]
    u[0] = eta[0]
    for t in range(1, n):
        if t == 1:
            sigma2[t] = variance
        else:
            sigma2[t] = alpha0 + alpha1 * eta[t - 1] * eta[t - 1] + alpha2 * sigma2[t - 1]
        eta[t] = np.sqrt(sigma2[t]) * eps[t]
        u[t] = rho * u[t - 1] + eta[t]


@dataclass
class SimulatedPath:
    """A simulated series with the draws that generated it"""

    series: PriceSeries
    eps: np.ndarray
    eta: np.ndarray
    sigma2: np.ndarray
    u: np.ndarray


def business_dates(origin, n: int, holidays: Optional[Iterable] = None) -> pd.DatetimeIndex:
    """n consecutive business days starting at origin (rolled forward)"""
    start = np.datetime64(as_date(origin), 'D')
    days = np.busday_offset(start, np.arange(n), roll='forward', holidays=holiday_array(holidays))
    return pd.DatetimeIndex(days)


def simulate_with_innovations(theta: FullParams, n: int, rng: Optional[np.random.Generator] = None,
                              origin=DEFAULT_ORIGIN, holidays: Optional[Iterable] = None) -> SimulatedPath:
    """p_t = g(t) + u_t with AR(1) errors and GARCH(1,1) innovations"""
    if n < 2:
        raise DomainError(f"Simulation needs n >= 2, got {n}")
    t_last = (n - 1) / TRADING_DAYS_PER_YEAR
    if theta.lp.tc <= t_last:
        raise DomainError(f"tc = {theta.lp.tc} lies inside the simulated window (t_last {t_last:.4f})")
    ag = theta.ag.validate()
    rng = rng if rng is not None else np.random.default_rng()

    eps = rng.standard_normal(n)
    u, eta, sigma2 = np.empty(n), np.empty(n), np.empty(n)
    _simulate_kernel(eps, ag.rho, ag.alpha0, ag.alpha1, ag.alpha2, u, eta, sigma2)

    t = np.arange(n, dtype=float) / TRADING_DAYS_PER_YEAR
    prices = evaluate_trend(theta.lp, t) + u
    try:
        series = PriceSeries(business_dates(origin, n, holidays), prices)
    except InputDataError as e:
        raise DomainError(f"Simulated prices are not all positive: {e}") from e
    return SimulatedPath(series=series, eps=eps, eta=eta, sigma2=sigma2, u=u)


def simulate(theta: FullParams, n: int, rng: Optional[np.random.Generator] = None,
             origin=DEFAULT_ORIGIN, holidays: Optional[Iterable] = None) -> PriceSeries:
    return simulate_with_innovations(theta, n, rng, origin, holidays).series


@dataclass
class RecoveryStudy:
    truth: FullParams
    n: int
    replications: int
    level: float
    seed: int
    records: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def convergence_rate(self) -> float:
        converged = sum(1 for r in self.records if r['converged'])
        return converged / self.replications if self.replications else 0.0

    def to_frame(self) -> pd.DataFrame:
        """One row per successful replication"""
        if not self.records:
            return pd.DataFrame(columns=['replication', 'converged'])
        return pd.DataFrame(self.records).sort_values('replication').reset_index(drop=True)

    def summary(self) -> pd.DataFrame:
        """Bias, RMSE, median absolute error and CI coverage over converged replications"""
        columns = ['truth', 'mean', 'bias', 'rmse', 'median_abs_error', 'coverage', 'count']
        frame = self.to_frame()
        if frame.empty:
            return pd.DataFrame(columns=columns, index=pd.Index([], name='parameter'))
        frame = frame[frame['converged']]
        truth = self.truth.to_dict()
        rows = {}
        for name in FULL_NAMES:
            estimates = frame[name].to_numpy(dtype=float)
            errors = estimates - truth[name]
            covered = frame[f'covered_{name}'].dropna().astype(bool)
            rows[name] = {
                'truth': truth[name],
                'mean': float(np.mean(estimates)) if estimates.size else np.nan,
                'bias': float(np.mean(errors)) if errors.size else np.nan,
                'rmse': float(np.sqrt(np.mean(errors ** 2))) if errors.size else np.nan,
                'median_abs_error': float(np.median(np.abs(errors))) if errors.size else np.nan,
                'coverage': float(covered.mean()) if len(covered) else np.nan,
                'count': int(estimates.size)
            }
        out = pd.DataFrame.from_dict(rows, orient='index', columns=columns)
        out.index.name = 'parameter'
        return out

    def to_dict(self) -> Dict[str, Any]:
        summary = self.summary()
        return {
            'truth': self.truth.to_dict(),
            'n': self.n,
            'replications': self.replications,
            'level': self.level,
            'seed': self.seed,
            'convergence_rate': self.convergence_rate,
            'summary': {name: {k: (None if pd.isna(v) else v) for k, v in row.items()}
                        for name, row in summary.to_dict(orient='index').items()},
            'failures': list(self.failures)
        }


def _run_replication(r: int, truth: FullParams, n: int, seed: int, gsa: GsaConfig,
                     bfgs: BfgsConfig, level: float, origin, lags: int,
                     bounds_factory: BoundsFactory) -> Dict[str, Any]:
    rng = np.random.default_rng([seed, r])
    path = simulate_with_innovations(truth, n, rng, origin)
    series = path.series
    fit = fit_two_stage(series, bounds_factory(series), gsa, bfgs, rng=rng, threads=1)
    estimate = FullParams.from_fit(fit.full)
    report = infer(estimate, series, level, threads=1)

    record = {'replication': r, 'converged': bool(fit.full.converged), 'loglik': fit.full.objective_value}
    truth_values = truth.to_dict()
    for row in report.rows:
        record[row.name] = row.coefficient
        record[f'se_{row.name}'] = row.se
        if np.isfinite(row.ci_lower) and np.isfinite(row.ci_upper):
            record[f'covered_{row.name}'] = bool(row.ci_lower <= truth_values[row.name] <= row.ci_upper)
        else:
            record[f'covered_{row.name}'] = None
    record['lb_basic_pvalue'] = ljung_box(residuals(fit.stage1.lp_params, series), lags).p_value
    record['lb_extended_pvalue'] = ljung_box(standardized_residuals(estimate, series), lags).p_value
    record['lb_truth_pvalue'] = ljung_box(standardized_residuals(truth, series), lags).p_value
    return record


def recovery_study(truth: FullParams, n: int, replications: int,
                   gsa: Optional[GsaConfig] = None, bfgs: Optional[BfgsConfig] = None,
                   level: float = 0.95, rng: Optional[np.random.Generator] = None, seed: int = 7,
                   threads: Optional[int] = None, origin=DEFAULT_ORIGIN, lags: int = 20,
                   bounds_factory: Optional[BoundsFactory] = None) -> RecoveryStudy:
    """Simulate, fit both stages, infer; replication r uses stream (seed, r)"""
    if replications < MIN_STUDY_REPLICATIONS:
        raise DomainError(f"A recovery study needs at least {MIN_STUDY_REPLICATIONS} replications")
    truth.ag.validate()
    if rng is not None:
        seed = int(rng.integers(0, 2**31 - 1))
    gsa = gsa or GsaConfig()
    bfgs = bfgs or BfgsConfig()
    bounds_factory = bounds_factory or full_bounds

    def run(r):
        try:
            return _run_replication(r, truth, n, seed, gsa, bfgs, level, origin, lags,
                                    bounds_factory), None
        except CrashModelError as e:
            logging.warning(f"Recovery replication {r} failed: {e}")
            return None, {'replication': r, 'error': f"{type(e).__name__}: {e}"}

    with Stopwatch() as watch:
        workers = min(resolve_thread_count(threads), replications)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                outcomes = list(executor.map(run, range(replications)))
        else:
            outcomes = [run(r) for r in range(replications)]

    study = RecoveryStudy(truth=truth, n=n, replications=replications, level=level, seed=seed)
    for record, failure in outcomes:
        if record is not None:
            study.records.append(record)
        else:
            study.failures.append(failure)
    logging.info(f"Recovery study: {len(study.records)}/{replications} replications fitted, "
                 f"convergence rate {study.convergence_rate:.2f}, {watch.elapsed:.1f}s")
    return study
