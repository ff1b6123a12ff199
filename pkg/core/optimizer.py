#!/usr/bin/env python3
"""
Optimizer - Core Business Logic
Generalized Simulated Annealing global search followed by BFGS refinement,
both working in the unbounded space of the bound transform
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from core.configs import BfgsConfig, GsaConfig
from core.errors import DomainError, InputDataError, OptimizationError
from core.logperiodic import (LP_NAMES, NONLINEAR_NAMES, Bounds, LPParams, default_bounds, evaluate_trend,
                              linear_amplitudes)
from core.timeseries import PriceSeries
from utils.performance_utils import Stopwatch, profile_function, resolve_thread_count

MIN_FIT_LENGTH = 30
T0_STREAM = 10000
TIE_TOLERANCE = 1e-12

CostFunction = Callable[[np.ndarray], float]


def _as_float(value, default=float('nan')) -> float:
    """JSON null back to a float"""
    return default if value is None else float(value)


@dataclass
class GsaResult:
    x: np.ndarray
    fun: float
    restart_costs: List[float]
    best_restart: int
    iterations: int
    evaluations: int
    t0: float


@dataclass
class BfgsResult:
    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    evaluations: int
    gradient_norm: float
    message: str


@dataclass
class FitResult:
    """Optimum in natural parameter space plus convergence metadata"""

    model: str
    names: Sequence[str]
    values: np.ndarray
    objective: str                 # 'sse' (minimized) or 'loglik' (maximized)
    objective_value: float
    converged: bool
    bounds: Bounds
    seed: int
    boundary_contact: List[str] = field(default_factory=list)
    gsa_restart_costs: List[float] = field(default_factory=list)
    gsa_iterations: int = 0
    gsa_evaluations: int = 0
    bfgs_iterations: int = 0
    bfgs_evaluations: int = 0
    gradient_norm: float = float('nan')
    message: str = ''
    settings: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def params(self) -> Dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    @property
    def lp_params(self) -> LPParams:
        return LPParams.from_array([self.params[n] for n in LP_NAMES])

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        out = {
            'model': self.model,
            'names': list(self.names),
            'params': self.params,
            'objective': self.objective,
            'objective_value': float(self.objective_value),
            'converged': bool(self.converged),
            'bounds': self.bounds.to_dict(),
            'seed': int(self.seed),
            'boundary_contact': list(self.boundary_contact),
            'gsa_restart_costs': [float(c) for c in self.gsa_restart_costs],
            'gsa_iterations': int(self.gsa_iterations),
            'gsa_evaluations': int(self.gsa_evaluations),
            'bfgs_iterations': int(self.bfgs_iterations),
            'bfgs_evaluations': int(self.bfgs_evaluations),
            'gradient_norm': float(self.gradient_norm),
            'message': self.message,
            'settings': self.settings
        }
        if include_timing:
            out['wall_time'] = float(self.wall_time)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'FitResult':
        try:
            params = data['params']
            # JSON reports sort their keys; the stored name list keeps model order
            names = tuple(data.get('names') or params.keys())
            bounds = Bounds.from_dict(data['bounds'])
            if set(bounds.names) == set(names):
                bounds = bounds.subset(names)
            return cls(
                model=data['model'],
                names=names,
                values=np.array([float(params[n]) for n in names]),
                objective=data['objective'],
                objective_value=float(data['objective_value']),
                converged=bool(data['converged']),
                bounds=bounds,
                seed=int(data['seed']),
                boundary_contact=list(data.get('boundary_contact', [])),
                gsa_restart_costs=list(data.get('gsa_restart_costs', [])),
                gsa_iterations=int(data.get('gsa_iterations', 0)),
                gsa_evaluations=int(data.get('gsa_evaluations', 0)),
                bfgs_iterations=int(data.get('bfgs_iterations', 0)),
                bfgs_evaluations=int(data.get('bfgs_evaluations', 0)),
                gradient_norm=_as_float(data.get('gradient_norm')),
                message=data.get('message', ''),
                settings=dict(data.get('settings', {})),
                wall_time=_as_float(data.get('wall_time'), 0.0)
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise InputDataError(f"Malformed fit result: {e!r}") from e


class VisitingDistribution:
    """Tsallis-Stariolo visiting step generator for a fixed qv"""

    def __init__(self, qv: float):
        self.qv = qv
        factor2 = np.exp((4.0 - qv) * np.log(qv - 1.0))
        factor3 = np.exp((2.0 - qv) * np.log(2.0) / (qv - 1.0))
        self._factor4_p = np.sqrt(np.pi) * factor2 / (factor3 * (3.0 - qv))
        factor5 = 1.0 / (qv - 1.0) - 0.5
        d1 = 2.0 - factor5
        self._factor6 = np.pi * (1.0 - factor5) / np.sin(np.pi * (1.0 - factor5)) / np.exp(gammaln(d1))

    def step(self, temperature: float, dim: int, rng: np.random.Generator) -> np.ndarray:
        qv = self.qv
        factor1 = np.exp(np.log(temperature) / (qv - 1.0))
        factor4 = self._factor4_p * factor1
        sigmax = np.exp(-(qv - 1.0) * np.log(self._factor6 / factor4) / (3.0 - qv))
        x = sigmax * rng.standard_normal(dim)
        y = rng.standard_normal(dim)
        den = np.exp((qv - 1.0) * np.log(np.abs(y)) / (3.0 - qv))
        return x / den


def visiting_temperature(t0: float, qv: float, k: int) -> float:
    """T(k) = t0 (2^(qv-1) - 1) / ((1 + k)^(qv-1) - 1), k >= 1"""
    return t0 * (2.0 ** (qv - 1.0) - 1.0) / ((1.0 + k) ** (qv - 1.0) - 1.0)


def acceptance_probability(delta: float, temperature: float, qa: float) -> float:
    """Generalized Metropolis rule; qa -> 1 recovers exp(-delta/T)"""
    if delta <= 0:
        return 1.0
    if not np.isfinite(delta):
        return 0.0
    if abs(qa - 1.0) < 1e-12:
        return float(np.exp(-delta / temperature))
    base = 1.0 - (1.0 - qa) * delta / temperature
    if base <= 0:
        return 0.0
    return float(base ** (1.0 / (1.0 - qa)))


def fold(x, limit: float) -> np.ndarray:
    """Reflect x back into [-limit, limit] at the walls, repeatedly for long jumps"""
    span = 2.0 * limit
    y = np.mod(np.asarray(x, dtype=float) + limit, 2.0 * span)
    return np.where(y > span, 2.0 * span - y, y) - limit


def _safe_cost(cost: CostFunction, x: np.ndarray) -> float:
    try:
        with np.errstate(all='ignore'):
            value = float(cost(x))
    except (DomainError, FloatingPointError, OverflowError, np.linalg.LinAlgError):
        return float('inf')
    return value if np.isfinite(value) else float('inf')


def _initial_temperature(cost: CostFunction, dim: int, config: GsaConfig, seed: int) -> float:
    """Spread of the cost over random points in the start box"""
    rng = np.random.default_rng([seed, T0_STREAM])
    points = rng.uniform(-config.start_span, config.start_span, size=(config.t0_samples, dim))
    costs = np.array([_safe_cost(cost, p) for p in points])
    finite = costs[np.isfinite(costs)]
    if finite.size == 0:
        raise OptimizationError(
            f"Cost is non-finite at all {config.t0_samples} sampled points; cannot set a temperature"
        )
    spread = float(np.std(finite))
    return spread if spread > 0 else max(abs(float(np.mean(finite))), 1.0)


def _anneal(cost: CostFunction, dim: int, config: GsaConfig, t0: float,
            rng: np.random.Generator, x0: Optional[np.ndarray]) -> Dict[str, Any]:
    """One annealing chain; iteration 0 is the initial sample"""
    visiting = VisitingDistribution(config.qv)
    if x0 is None:
        current = rng.uniform(-config.start_span, config.start_span, size=dim)
    else:
        current = fold(np.asarray(x0, dtype=float), config.x_limit)
    current_cost = _safe_cost(cost, current)
    best, best_cost = current.copy(), current_cost
    evaluations = 1

    for k in range(1, config.max_iterations):
        temperature = visiting_temperature(t0, config.qv, k)
        candidate = fold(current + visiting.step(temperature, dim, rng), config.x_limit)
        candidate_cost = _safe_cost(cost, candidate)
        evaluations += 1

        if not np.isfinite(current_cost):
            accept = np.isfinite(candidate_cost)
        else:
            p = acceptance_probability(candidate_cost - current_cost, temperature / (k + 1), config.qa)
            accept = p >= 1.0 or rng.random() <= p
        if accept:
            current, current_cost = candidate, candidate_cost
            if current_cost < best_cost:
                best, best_cost = current.copy(), current_cost

    return {'x': best, 'fun': best_cost, 'iterations': config.max_iterations, 'evaluations': evaluations}


def gsa_minimize(cost: CostFunction, dim: int, config: Optional[GsaConfig] = None,
                 rng: Optional[np.random.Generator] = None, threads: Optional[int] = None,
                 x0: Optional[np.ndarray] = None) -> GsaResult:
    """Best point over independent annealing restarts; restart i uses stream (seed, i)"""
    if dim < 1:
        raise DomainError(f"Dimension must be at least 1, got {dim}")
    config = config or GsaConfig()
    seed = config.seed if rng is None else int(rng.integers(0, 2**31 - 1))
    t0 = config.t0 if config.t0 is not None else _initial_temperature(cost, dim, config, seed)

    def run(i):
        start = x0 if (x0 is not None and i == 0) else None
        return _anneal(cost, dim, config, t0, np.random.default_rng([seed, i]), start)

    workers = min(resolve_thread_count(threads), config.restarts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            chains = list(executor.map(run, range(config.restarts)))
    else:
        chains = [run(i) for i in range(config.restarts)]

    best_index = None
    for i, chain in enumerate(chains):
        logging.info(f"GSA restart {i}: best cost {chain['fun']:.6g}")
        if not np.isfinite(chain['fun']):
            continue
        if best_index is None:
            best_index = i
            continue
        incumbent = chains[best_index]['fun']
        if chain['fun'] < incumbent - TIE_TOLERANCE * abs(incumbent):
            best_index = i

    if best_index is None:
        raise OptimizationError(f"GSA found no finite cost in {config.restarts} restarts")

    best = chains[best_index]
    return GsaResult(
        x=best['x'],
        fun=best['fun'],
        restart_costs=[c['fun'] for c in chains],
        best_restart=best_index,
        iterations=sum(c['iterations'] for c in chains),
        evaluations=sum(c['evaluations'] for c in chains) + (config.t0_samples if config.t0 is None else 0),
        t0=t0
    )


def numeric_gradient(cost: CostFunction, x: np.ndarray, relative_step: float = 1e-6) -> np.ndarray:
    """Central differences with step relative_step * (1 + |x_i|)"""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = relative_step * (1.0 + abs(x[i]))
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (cost(up) - cost(down)) / (2.0 * h)
    return grad


def bfgs_minimize(cost: CostFunction, start: np.ndarray, config: Optional[BfgsConfig] = None,
                  warn: bool = True) -> BfgsResult:
    """Quasi-Newton refinement; never returns a point worse than start"""
    config = config or BfgsConfig()
    start = np.asarray(start, dtype=float)
    start_cost = _safe_cost(cost, start)

    def safe(x):
        return _safe_cost(cost, x)

    def jac(x):
        return numeric_gradient(safe, x, config.relative_step)

    with np.errstate(all='ignore'):
        res = minimize(safe, start, jac=jac, method='BFGS', options={
            'gtol': config.gradient_tolerance,
            'maxiter': config.max_iterations,
            'xrtol': config.step_tolerance
        })

    x, fun = np.asarray(res.x, dtype=float), float(res.fun)
    if not np.isfinite(fun) or fun > start_cost:
        x, fun = start.copy(), start_cost
    with np.errstate(all='ignore'):
        grad_norm = float(np.max(np.abs(jac(x)))) if np.isfinite(fun) else float('inf')
    converged = bool(np.isfinite(grad_norm) and grad_norm < config.gradient_tolerance)
    if not converged and warn:
        logging.warning(f"BFGS did not converge: {res.message} (gradient norm {grad_norm:.3g})")
    return BfgsResult(x=x, fun=fun, converged=converged, iterations=int(res.nit),
                      evaluations=int(res.nfev), gradient_norm=grad_norm, message=str(res.message))


def boundary_flags(values, bounds: Bounds, tol: float = 1e-6) -> List[str]:
    """Parameters within tol (relative to interval width) of an endpoint"""
    values = np.asarray(values, dtype=float)
    distance = np.minimum(values - bounds.lower, bounds.upper - values) / bounds.width
    return [name for name, d in zip(bounds.names, distance) if d < tol]


def sse_scale(series: PriceSeries) -> float:
    """Total sum of squares of the prices, floored at 1"""
    centered = series.prices - np.mean(series.prices)
    return max(float(np.dot(centered, centered)), 1.0)


def sse_cost(series: PriceSeries, bounds: Bounds, scale: float = 1.0) -> CostFunction:
    """Trend SSE / scale as a function of the unbounded 7-vector"""
    t, prices = series.t, series.prices

    def cost(x):
        u = prices - evaluate_trend(LPParams.from_array(bounds.constrain(x)), t)
        return float(np.dot(u, u)) / scale

    return cost


def profiled_sse_cost(series: PriceSeries, bounds: Bounds, scale: float = 1.0) -> CostFunction:
    """Trend SSE / scale over the unbounded (tc, beta, omega), amplitudes solved by least squares"""
    nonlinear = bounds.subset(NONLINEAR_NAMES)
    t, prices = series.t, series.prices

    def cost(x):
        p = linear_amplitudes(*nonlinear.constrain(x), series, bounds)
        u = prices - evaluate_trend(p, t)
        return float(np.dot(u, u)) / scale

    return cost


@profile_function("optimizer.fit_logperiodic")
def fit_logperiodic(series: PriceSeries, bounds: Optional[Bounds] = None,
                    gsa: Optional[GsaConfig] = None, bfgs: Optional[BfgsConfig] = None,
                    rng: Optional[np.random.Generator] = None,
                    threads: Optional[int] = None) -> FitResult:
    """Least-squares trend fit

    GSA searches (tc, beta, omega) with the amplitudes profiled out, BFGS polishes that triple, and a
    final BFGS over all seven transformed parameters starts from the profiled optimum.
    """
    if len(series) < MIN_FIT_LENGTH:
        raise InputDataError(f"Series too short for a trend fit: {len(series)} < {MIN_FIT_LENGTH}")
    bounds = bounds or default_bounds(series)
    if tuple(bounds.names) != LP_NAMES:
        raise DomainError(f"Trend bounds must cover {LP_NAMES} in order, got {bounds.names}")
    if bounds['tc'][0] < series.t_last:
        raise DomainError(f"tc lower bound {bounds['tc'][0]} lies inside the sample (t_last {series.t_last})")
    gsa = gsa or GsaConfig()
    bfgs = bfgs or BfgsConfig()
    seed = gsa.seed if rng is None else int(rng.integers(0, 2**31 - 1))
    gsa = gsa.updated(seed=seed)

    # scaled so gradient tolerances mean the same at any price level
    scale = sse_scale(series)
    profiled = profiled_sse_cost(series, bounds, scale)
    cost = sse_cost(series, bounds, scale)
    nonlinear = bounds.subset(NONLINEAR_NAMES)
    with Stopwatch() as watch:
        global_search = gsa_minimize(profiled, len(NONLINEAR_NAMES), gsa, threads=threads)
        polished = bfgs_minimize(profiled, global_search.x, bfgs, warn=False)
        start = linear_amplitudes(*nonlinear.constrain(polished.x), series, bounds)
        refined = bfgs_minimize(cost, bounds.unconstrain(start.as_array()), bfgs)

    values = bounds.constrain(refined.x)
    sse_best = float(np.sum((series.prices - evaluate_trend(LPParams.from_array(values), series.t)) ** 2))

    contact = boundary_flags(values, bounds)
    if contact:
        logging.warning(f"Trend fit touches bounds for: {', '.join(contact)}")

    return FitResult(
        model='basic',
        names=LP_NAMES,
        values=values,
        objective='sse',
        objective_value=sse_best,
        converged=refined.converged,
        bounds=bounds,
        seed=seed,
        boundary_contact=contact,
        gsa_restart_costs=[c * scale for c in global_search.restart_costs],
        gsa_iterations=global_search.iterations,
        gsa_evaluations=global_search.evaluations,
        bfgs_iterations=polished.iterations + refined.iterations,
        bfgs_evaluations=polished.evaluations + refined.evaluations,
        gradient_norm=refined.gradient_norm,
        message=refined.message,
        settings={'gsa': gsa.to_dict(), 'bfgs': bfgs.to_dict()},
        wall_time=watch.elapsed
    )
