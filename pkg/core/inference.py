#!/usr/bin/env python3
"""
Inference - Core Business Logic
Observed information matrix, standard errors, t-statistics, normal confidence
intervals, and crash-date windows derived from the tc interval
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import date
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from core.argarch import FULL_NAMES, FullParams, loglik
from core.errors import CrashModelError, InferenceError, InputDataError
from core.timeseries import PriceSeries, drawdown_window, series_time_to_date, year_to_date
from utils.performance_utils import profile_function, resolve_thread_count

HESSIAN_RELATIVE_STEP = 1e-4
EIGEN_TOLERANCE = 1e-10


def normal_quantile(level: float) -> float:
    if not 0 < level < 1:
        raise InferenceError(f"Confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def confidence_interval(coefficient: float, se: float, level: float = 0.95) -> Tuple[float, float]:
    """coefficient -/+ z * se"""
    if not np.isfinite(se) or se <= 0:
        raise InferenceError(f"Standard error must be finite and positive, got {se}")
    z = normal_quantile(level)
    return coefficient - z * se, coefficient + z * se


def numerical_hessian(func: Callable[[np.ndarray], float], x: Sequence[float],
                      relative_step: float = HESSIAN_RELATIVE_STEP,
                      threads: Optional[int] = None) -> np.ndarray:
    """Central-difference Hessian, step h_i = relative_step * (1 + |x_i|)"""
    x = np.asarray(x, dtype=float)
    k = x.size
    h = relative_step * (1.0 + np.abs(x))
    f0 = func(x)

    def f(*moves):
        point = x.copy()
        for i, sign in moves:
            point[i] += sign * h[i]
        return func(point)

    def column(j):
        col = np.empty(k)
        for i in range(k):
            if i == j:
                col[i] = (f((j, 1)) - 2.0 * f0 + f((j, -1))) / h[j] ** 2
            else:
                col[i] = (f((i, 1), (j, 1)) - f((i, 1), (j, -1))
                          - f((i, -1), (j, 1)) + f((i, -1), (j, -1))) / (4.0 * h[i] * h[j])
        return col

    workers = min(resolve_thread_count(threads), k)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            columns = list(executor.map(column, range(k)))
    else:
        columns = [column(j) for j in range(k)]
    return np.column_stack(columns)


@dataclass
class InformationMatrix:
    matrix: np.ndarray
    asymmetry: float
    eigenvalues: np.ndarray

    @property
    def positive_definite(self) -> bool:
        return bool(np.all(np.isfinite(self.eigenvalues)) and np.min(self.eigenvalues) > 0)


def information_matrix(theta_hat: FullParams, series: PriceSeries,
                       relative_step: float = HESSIAN_RELATIVE_STEP,
                       threads: Optional[int] = None) -> InformationMatrix:
    """Negative Hessian of the log-likelihood in natural parameter space"""

    def lnl(values):
        try:
            with np.errstate(all='ignore'):
                return loglik(FullParams.from_array(values), series)
        except CrashModelError:
            return float('nan')

    hessian = numerical_hessian(lnl, theta_hat.as_array(), relative_step, threads)
    if not np.all(np.isfinite(hessian)):
        raise InferenceError("Log-likelihood is undefined near the estimate; move it off the bounds")
    scale = max(float(np.max(np.abs(hessian))), 1e-300)
    asymmetry = float(np.max(np.abs(hessian - hessian.T)) / scale)
    info = -(hessian + hessian.T) / 2.0
    return InformationMatrix(matrix=info, asymmetry=asymmetry, eigenvalues=np.linalg.eigvalsh(info))


@dataclass
class InferenceRow:
    name: str
    coefficient: float
    se: float
    t: float
    ci_lower: float
    ci_upper: float
    insignificant: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'InferenceRow':
        """Withheld cells come back from JSON as null"""
        numbers = {k: float('nan') if data[k] is None else float(data[k])
                   for k in ('coefficient', 'se', 't', 'ci_lower', 'ci_upper')}
        return cls(name=str(data['name']), insignificant=bool(data['insignificant']), **numbers)


def _cell(value: float, spec: str) -> str:
    return format(value, spec) if np.isfinite(value) else format('n/a', f">{spec.split('.')[0]}")


@dataclass
class InferenceReport:
    rows: List[InferenceRow]
    covariance: np.ndarray
    level: float
    positive_definite: bool = True
    eigenvalues: Optional[np.ndarray] = None
    withheld: List[str] = field(default_factory=list)

    def row(self, name: str) -> InferenceRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise InferenceError(f"No inference row for {name!r}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows]).set_index('name')

    def to_dict(self) -> Dict[str, Any]:
        return {
            'level': self.level,
            'rows': [r.to_dict() for r in self.rows],
            'covariance': [[float(v) for v in row] for row in np.asarray(self.covariance)],
            'positive_definite': self.positive_definite,
            'eigenvalues': None if self.eigenvalues is None else [float(v) for v in self.eigenvalues],
            'withheld': list(self.withheld)
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'InferenceReport':
        try:
            return cls(
                rows=[InferenceRow.from_dict(r) for r in data['rows']],
                covariance=np.array(data['covariance'], dtype=float),
                level=float(data['level']),
                positive_definite=bool(data.get('positive_definite', True)),
                eigenvalues=None if data.get('eigenvalues') is None else np.array(data['eigenvalues'], dtype=float),
                withheld=list(data.get('withheld', []))
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputDataError(f"Malformed inference report: {e!r}") from e

    def render(self) -> str:
        header = f"{'':<8}{'Coefficient':>14}{'Std. error':>14}{'t-statistic':>14}{'CI lower':>14}{'CI upper':>14}"
        lines = [f"Estimates with {self.level:.0%} confidence intervals", header]
        for r in self.rows:
            flag = ' *' if r.insignificant else ''
            cells = [_cell(r.coefficient, '>14.4f'), _cell(r.se, '>14.4f'), _cell(r.t, '>14.3f'),
                     _cell(r.ci_lower, '>14.4f'), _cell(r.ci_upper, '>14.4f')]
            lines.append(f"{r.name:<8}{''.join(cells)}{flag}")
        lines.append(f"* |t| below the {self.level:.0%} normal quantile")
        if self.withheld:
            lines.append(f"Standard errors withheld (information not positive-definite): {', '.join(self.withheld)}")
        return "\n".join(lines)


def build_report(names: Sequence[str], coefficients: Sequence[float], covariance: np.ndarray,
                 level: float = 0.95, withheld: Iterable[str] = ()) -> InferenceReport:
    """Rows from a coefficient vector and its covariance"""
    z = normal_quantile(level)
    withheld = set(withheld)
    rows = []
    for i, (name, coef) in enumerate(zip(names, coefficients)):
        variance = covariance[i, i]
        if name in withheld or not np.isfinite(variance) or variance < 0:
            withheld.add(name)
            rows.append(InferenceRow(name, float(coef), float('nan'), float('nan'),
                                     float('nan'), float('nan'), True))
            continue
        se = float(np.sqrt(variance))
        if se == 0:
            raise InferenceError(f"Zero standard error for {name}")
        lower, upper = confidence_interval(float(coef), se, level)
        t = float(coef) / se
        rows.append(InferenceRow(name, float(coef), se, t, lower, upper, bool(abs(t) < z)))
    return InferenceReport(rows=rows, covariance=covariance, level=level,
                           withheld=[n for n in names if n in withheld])


@profile_function("inference.infer")
def infer(theta_hat: FullParams, series: PriceSeries, level: float = 0.95,
          threads: Optional[int] = None) -> InferenceReport:
    """Standard errors and CIs from the inverted observed information"""
    info = information_matrix(theta_hat, series, threads=threads)
    eigvals, eigvecs = np.linalg.eigh(info.matrix)
    tolerance = EIGEN_TOLERANCE * max(float(np.max(np.abs(eigvals))), 1e-300)
    bad = eigvals <= tolerance
    if np.all(bad):
        raise InferenceError("Information matrix is singular: no positive eigenvalue")

    withheld = []
    if np.any(bad):
        logging.warning(f"Information matrix is not positive-definite; eigenvalues {np.round(eigvals[bad], 6)}")
        good_vecs = eigvecs[:, ~bad]
        covariance = good_vecs @ np.diag(1.0 / eigvals[~bad]) @ good_vecs.T
        loadings = np.max(np.abs(eigvecs[:, bad]), axis=1)
        withheld = [n for n, load in zip(FULL_NAMES, loadings) if load > 1e-6]
    else:
        covariance = np.linalg.inv(info.matrix)

    report = build_report(FULL_NAMES, theta_hat.as_array(), covariance, level, withheld)
    report.positive_definite = not np.any(bad)
    report.eigenvalues = eigvals
    return report


@dataclass(frozen=True)
class CrashWindow:
    t_lower: float
    t_upper: float
    start: date
    end: date

    def to_dict(self) -> Dict[str, Any]:
        return {'t_lower': self.t_lower, 't_upper': self.t_upper,
                'start': self.start.isoformat(), 'end': self.end.isoformat()}


def crash_window(report: InferenceReport, origin, series: Optional[PriceSeries] = None,
                 holidays: Optional[Iterable] = None) -> CrashWindow:
    """Map the tc confidence interval to calendar dates"""
    try:
        row = report.row('tc')
    except InferenceError as e:
        raise InferenceError("Report has no tc row; cannot build a crash window") from e
    if not (np.isfinite(row.ci_lower) and np.isfinite(row.ci_upper)):
        raise InferenceError("tc confidence interval is missing or non-finite")

    lower, upper = max(row.ci_lower, 0.0), max(row.ci_upper, 0.0)
    if series is not None:
        start = series_time_to_date(lower, series, holidays)
        end = series_time_to_date(upper, series, holidays)
    else:
        start = year_to_date(lower, origin, holidays)
        end = year_to_date(upper, origin, holidays)
    return CrashWindow(t_lower=row.ci_lower, t_upper=row.ci_upper, start=start, end=end)


def crash_date_table(report: InferenceReport, series: PriceSeries,
                     holidays: Optional[Iterable] = None) -> pd.DataFrame:
    """Drawdown peak and trough next to the tc window"""
    dd = drawdown_window(series)
    window = crash_window(report, series.origin, series, holidays)
    return pd.DataFrame([
        {'event': 't_max (drawdown start)', 't': dd.t_max, 'date': dd.peak_date.isoformat()},
        {'event': 't_min (drawdown trough)', 't': dd.t_min, 'date': dd.trough_date.isoformat()},
        {'event': 'tc lower', 't': window.t_lower, 'date': window.start.isoformat()},
        {'event': 'tc upper', 't': window.t_upper, 'date': window.end.isoformat()},
    ]).set_index('event')
