#!/usr/bin/env python3
"""
Residual Diagnostics - Core Business Logic
Autocorrelation, portmanteau, normality, unit-root and BDS independence tests
for model residuals, with bootstrap p-values for the BDS grid
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
import statsmodels.api as sm
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import chi2, kurtosis, skew
from statsmodels.tsa.adfvalues import mackinnonp
from statsmodels.tsa.stattools import acf as sm_acf
from statsmodels.tsa.stattools import adfuller, bds

from core.configs import DiagnosticsConfig
from core.errors import DegenerateInputError, DomainError, InputDataError
from utils.performance_utils import profile_function, resolve_thread_count

DEFAULT_BDS_DIMS = (2, 3, 4, 5, 6)
DEFAULT_EPS_MULTIPLIERS = (0.5, 1.0, 1.5, 2.0)
UNIT_ROOT_MIN_LENGTH = 25
BDS_MIN_LENGTH = 50


@dataclass
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    p_value: float
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.statistic = float(self.statistic)
        self.p_value = float(np.clip(self.p_value, 0.0, 1.0))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TestResult':
        return cls(data['statistic'], data['p_value'], dict(data.get('config', {})))


@dataclass(frozen=True)
class Descriptives:
    n: int
    mean: float
    sd: float
    skewness: float
    kurtosis: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _as_series(x, min_length: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"{what} needs a one-dimensional sequence")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{what} got non-finite values")
    if x.size < min_length:
        raise DomainError(f"{what} needs at least {min_length} observations, got {x.size}")
    return x


def _require_variance(x: np.ndarray, what: str):
    if np.ptp(x) == 0:
        raise DegenerateInputError(f"{what}: input has zero variance")


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelations r_1..r_max_lag"""
    if max_lag < 1:
        raise DomainError(f"max_lag must be at least 1, got {max_lag}")
    x = _as_series(x, max_lag + 1, "acf")
    _require_variance(x, "acf")
    return np.asarray(sm_acf(x, nlags=max_lag, fft=False))[1:]


def q_statistic(r, n: int) -> float:
    """Ljung-Box Q = n(n+2) sum r_k^2 / (n-k)"""
    r = np.asarray(r, dtype=float)
    k = np.arange(1, r.size + 1)
    return float(n * (n + 2) * np.sum(r ** 2 / (n - k)))


def ljung_box(x, lags: int = 20) -> TestResult:
    x = np.asarray(x, dtype=float)
    r = acf(x, lags)
    q = q_statistic(r, x.size)
    return TestResult(q, chi2.sf(q, lags), {'lags': lags})


def descriptive_stats(x) -> Descriptives:
    """Mean, sd (n-1), skewness and raw kurtosis (Gaussian = 3)"""
    x = _as_series(x, 4, "descriptive_stats")
    with np.errstate(all='ignore'):
        s = float(skew(x))
        k = float(kurtosis(x, fisher=False))
    return Descriptives(n=int(x.size), mean=float(np.mean(x)), sd=float(np.std(x, ddof=1)),
                        skewness=s, kurtosis=k)


def jarque_bera_from_moments(skewness: float, kurt: float, n: int) -> float:
    """JB = n/6 (S^2 + (K-3)^2 / 4)"""
    return n / 6.0 * (skewness ** 2 + (kurt - 3.0) ** 2 / 4.0)


def jarque_bera(x) -> TestResult:
    x = _as_series(x, 8, "jarque_bera")
    _require_variance(x, "jarque_bera")
    d = descriptive_stats(x)
    jb = jarque_bera_from_moments(d.skewness, d.kurtosis, d.n)
    return TestResult(jb, chi2.sf(jb, 2), {'skewness': d.skewness, 'kurtosis': d.kurtosis, 'n': d.n})


def default_adf_max_lag(n: int) -> int:
    return int(np.floor(12.0 * (n / 100.0) ** 0.25))


def default_pp_lags(n: int) -> int:
    return int(np.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def adf_test(x, with_intercept: bool, lags: Optional[int] = None) -> TestResult:
    """Augmented Dickey-Fuller; lags=None picks the order by AIC"""
    x = _as_series(x, UNIT_ROOT_MIN_LENGTH, "adf_test")
    _require_variance(x, "adf_test")
    regression = 'c' if with_intercept else 'n'
    try:
        if lags is None:
            result = adfuller(x, maxlag=default_adf_max_lag(x.size), regression=regression, autolag='AIC')
        else:
            result = adfuller(x, maxlag=lags, regression=regression, autolag=None)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise DegenerateInputError(f"ADF regression failed: {e}") from e
    stat, p_value, used_lag = result[0], result[1], result[2]
    if not np.isfinite(stat):
        raise DegenerateInputError("ADF regression is singular")
    return TestResult(stat, p_value, {'regression': regression, 'lags': int(used_lag),
                                      'autolag': 'AIC' if lags is None else None})


def pp_test(x, with_intercept: bool, lags: Optional[int] = None) -> TestResult:
    """Phillips-Perron Z_t with a Bartlett-window long-run variance"""
    x = _as_series(x, UNIT_ROOT_MIN_LENGTH, "pp_test")
    _require_variance(x, "pp_test")
    y, y_lag = x[1:], x[:-1]
    n = y.size
    design = sm.add_constant(y_lag, has_constant='add') if with_intercept else y_lag[:, None]
    try:
        ols = sm.OLS(y, design).fit()
    except np.linalg.LinAlgError as e:
        raise DegenerateInputError(f"PP regression failed: {e}") from e

    coef_index = 1 if with_intercept else 0
    rho_hat = float(ols.params[coef_index])
    se = float(ols.bse[coef_index])
    s = float(np.sqrt(ols.scale))
    if not (np.isfinite(se) and se > 0 and s > 0):
        raise DegenerateInputError("PP regression is singular")
    t_rho = (rho_hat - 1.0) / se

    e = np.asarray(ols.resid)
    lags = default_pp_lags(n) if lags is None else lags
    gamma0 = float(np.dot(e, e)) / n
    lam2 = gamma0
    for j in range(1, lags + 1):
        gamma_j = float(np.dot(e[j:], e[:-j])) / n
        lam2 += 2.0 * (1.0 - j / (lags + 1.0)) * gamma_j
    if not lam2 > 0:
        raise DegenerateInputError("Non-positive long-run variance in PP test")
    lam = np.sqrt(lam2)

    z_t = np.sqrt(gamma0 / lam2) * t_rho - (lam2 - gamma0) / (2.0 * lam) * (n * se / s)
    regression = 'c' if with_intercept else 'n'
    p_value = mackinnonp(z_t, regression=regression, N=1)
    return TestResult(z_t, p_value, {'regression': regression, 'lags': int(lags), 'kernel': 'bartlett'})


def unit_root_table(x, adf_lags: Optional[int] = None) -> pd.DataFrame:
    """PP/ADF p-values without and with intercept"""
    columns = ['without intercept', 'with intercept']
    return pd.DataFrame(
        [[pp_test(x, False).p_value, pp_test(x, True).p_value],
         [adf_test(x, False, adf_lags).p_value, adf_test(x, True, adf_lags).p_value]],
        index=['PP', 'ADF'], columns=columns
    )


def correlation_integral(x, m: int, eps: float) -> float:
    """Fraction of pairs of m-histories within eps in the max-norm"""
    x = np.asarray(x, dtype=float)
    if m < 1 or eps <= 0:
        raise DomainError(f"Need m >= 1 and eps > 0, got m={m}, eps={eps}")
    if x.size - m + 1 < 2:
        raise DomainError(f"Series of length {x.size} has fewer than two {m}-histories")
    histories = sliding_window_view(x, m)
    distance = np.max(np.abs(histories[:, None, :] - histories[None, :, :]), axis=2)
    upper = np.triu_indices(histories.shape[0], 1)
    return float(np.mean(distance[upper] < eps))


def _bds_row(x: np.ndarray, dims: Sequence[int], eps: float) -> np.ndarray:
    """BDS statistics for every requested dimension at one eps"""
    stats, _ = bds(x, max_dim=max(dims), epsilon=eps)
    stats = np.atleast_1d(stats)
    return np.array([stats[m - 2] for m in dims], dtype=float)


def bds_statistic(x, m: int, eps: float) -> float:
    """Standardized BDS statistic at embedding dimension m"""
    x = _as_series(x, BDS_MIN_LENGTH, "bds_statistic")
    if m < 2 or eps <= 0:
        raise DomainError(f"Need m >= 2 and eps > 0, got m={m}, eps={eps}")
    if correlation_integral(x, 1, eps) == 0:
        raise DegenerateInputError(f"eps={eps} too small: no pair of observations is within it")
    with np.errstate(all='ignore'):
        value = float(_bds_row(x, [m], eps)[0])
    if not np.isfinite(value):
        raise DegenerateInputError(f"BDS statistic undefined at m={m}, eps={eps}")
    return value


@dataclass
class BdsBootstrap:
    statistics: pd.DataFrame
    p_values: pd.DataFrame
    replications: int
    seed: int


def bds_bootstrap(x, dims: Sequence[int] = DEFAULT_BDS_DIMS,
                  eps_multipliers: Sequence[float] = DEFAULT_EPS_MULTIPLIERS,
                  replications: int = 5000, rng: Optional[np.random.Generator] = None,
                  seed: int = 7, threads: Optional[int] = None) -> BdsBootstrap:
    """Observed BDS grid and its i.i.d.-resampling p-values"""
    x = _as_series(x, BDS_MIN_LENGTH, "bds_bootstrap")
    dims = sorted(int(m) for m in dims)
    multipliers = [float(e) for e in eps_multipliers]
    if not dims or dims[0] < 2:
        raise DomainError(f"Embedding dimensions must be >= 2, got {dims}")
    if replications < 1:
        raise DomainError(f"Need at least one replication, got {replications}")
    if rng is not None:
        seed = int(rng.integers(0, 2**31 - 1))

    sd = float(np.std(x, ddof=1))
    eps_values = [mult * sd for mult in multipliers]
    observed = np.column_stack([
        [bds_statistic(x, m, eps) for m in dims] for eps in eps_values
    ])

    def replicate(r):
        idx = np.random.default_rng([seed, r]).integers(0, x.size, x.size)
        sample = x[idx]
        with np.errstate(all='ignore'):
            return np.column_stack([_bds_row(sample, dims, eps) for eps in eps_values])

    workers = resolve_thread_count(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            replicates = np.stack(list(executor.map(replicate, range(replications))))
    else:
        replicates = np.stack([replicate(r) for r in range(replications)])

    # non-finite replicate statistics never count as at least as extreme
    magnitude = np.where(np.isfinite(replicates), np.abs(replicates), -np.inf)
    exceed = np.sum(magnitude >= np.abs(observed), axis=0)
    p_values = (1.0 + exceed) / (replications + 1.0)

    index = pd.Index(dims, name='m')
    columns = pd.Index(multipliers, name='eps_sd')
    return BdsBootstrap(
        statistics=pd.DataFrame(observed, index=index, columns=columns),
        p_values=pd.DataFrame(p_values, index=index, columns=columns),
        replications=replications,
        seed=seed
    )


def bds_bootstrap_pvalues(x, dims: Sequence[int] = DEFAULT_BDS_DIMS,
                          eps_multipliers: Sequence[float] = DEFAULT_EPS_MULTIPLIERS,
                          replications: int = 5000, rng: Optional[np.random.Generator] = None,
                          seed: int = 7, threads: Optional[int] = None) -> pd.DataFrame:
    """p-value matrix, rows = embedding dimension, columns = eps / sd"""
    return bds_bootstrap(x, dims, eps_multipliers, replications, rng, seed, threads).p_values


def _frame_to_dict(frame: pd.DataFrame) -> Dict[str, Any]:
    return {
        'index': [int(i) for i in frame.index],
        'columns': [float(c) for c in frame.columns],
        'values': [[float(v) for v in row] for row in frame.to_numpy()]
    }


def _frame_from_dict(data: Dict[str, Any], index_name='m', columns_name='eps_sd') -> pd.DataFrame:
    return pd.DataFrame(data['values'], index=pd.Index(data['index'], name=index_name),
                        columns=pd.Index(data['columns'], name=columns_name))


@dataclass
class DiagnosticsReport:
    descriptive: Descriptives
    jb: TestResult
    lb_residuals: TestResult
    lb_squared: TestResult
    adf: Dict[str, TestResult]
    pp: Dict[str, TestResult]
    bds: Optional[pd.DataFrame] = None
    bds_statistics: Optional[pd.DataFrame] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def unit_root_frame(self) -> pd.DataFrame:
        keys = ['without_intercept', 'with_intercept']
        return pd.DataFrame([[self.pp[k].p_value for k in keys], [self.adf[k].p_value for k in keys]],
                            index=['PP', 'ADF'], columns=['without intercept', 'with intercept'])

    def to_dict(self) -> Dict[str, Any]:
        out = {
            'descriptive': self.descriptive.to_dict(),
            'jarque_bera': self.jb.to_dict(),
            'ljung_box_residuals': self.lb_residuals.to_dict(),
            'ljung_box_squared': self.lb_squared.to_dict(),
            'adf': {k: v.to_dict() for k, v in self.adf.items()},
            'pp': {k: v.to_dict() for k, v in self.pp.items()},
            'config': self.config
        }
        if self.bds is not None:
            out['bds_p_values'] = _frame_to_dict(self.bds)
        if self.bds_statistics is not None:
            out['bds_statistics'] = _frame_to_dict(self.bds_statistics)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DiagnosticsReport':
        try:
            return cls(
                descriptive=Descriptives(**data['descriptive']),
                jb=TestResult.from_dict(data['jarque_bera']),
                lb_residuals=TestResult.from_dict(data['ljung_box_residuals']),
                lb_squared=TestResult.from_dict(data['ljung_box_squared']),
                adf={k: TestResult.from_dict(v) for k, v in data['adf'].items()},
                pp={k: TestResult.from_dict(v) for k, v in data['pp'].items()},
                bds=_frame_from_dict(data['bds_p_values']) if 'bds_p_values' in data else None,
                bds_statistics=_frame_from_dict(data['bds_statistics']) if 'bds_statistics' in data else None,
                config=dict(data.get('config', {}))
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InputDataError(f"Malformed diagnostics report: {e!r}") from e

    def render(self) -> str:
        d = self.descriptive
        lags = self.lb_residuals.config.get('lags', '')
        lines = [
            "Descriptive statistics, JB test and Q-statistic",
            f"{'Mean':<28}{d.mean:>12.3f}",
            f"{'Standard deviation':<28}{d.sd:>12.3f}",
            f"{'Skewness':<28}{d.skewness:>12.3f}",
            f"{'Kurtosis':<28}{d.kurtosis:>12.3f}",
            f"{'Jarque-Bera test':<28}{self.jb.statistic:>12.3f} ({self.jb.p_value:.3f})",
            f"{f'Q-Stat({lags}) - residuals':<28}{self.lb_residuals.statistic:>12.3f} "
            f"({self.lb_residuals.p_value:.3f})",
            f"{f'Q-Stat({lags}) - squared':<28}{self.lb_squared.statistic:>12.3f} "
            f"({self.lb_squared.p_value:.3f})",
            "",
            "Unit-root tests (p-values)",
            self.unit_root_frame().to_string(float_format=lambda v: f"{v:.4f}"),
        ]
        if self.bds is not None:
            grid = self.bds.copy()
            grid.columns = [f"{c:g} sd" for c in grid.columns]
            grid.index.name = 'M \\ eps'
            lines += ["", "BDS bootstrap p-values", grid.to_string(float_format=lambda v: f"{v:.5f}")]
        return "\n".join(lines)


@profile_function("diagnostics.diagnose")
def diagnose(x, config: Optional[DiagnosticsConfig] = None, rng: Optional[np.random.Generator] = None,
             threads: Optional[int] = None, include_bds: bool = True) -> DiagnosticsReport:
    """Full residual battery on one sequence"""
    config = config or DiagnosticsConfig()
    x = _as_series(x, max(UNIT_ROOT_MIN_LENGTH, config.lags + 1), "diagnose")

    pp = {'without_intercept': pp_test(x, False), 'with_intercept': pp_test(x, True)}
    adf = {'without_intercept': adf_test(x, False, config.adf_lags),
           'with_intercept': adf_test(x, True, config.adf_lags)}

    bds_p = bds_stats = None
    if include_bds:
        grid = bds_bootstrap(x, config.bds_dims, config.bds_eps_multipliers,
                             config.bds_replications, rng=rng, seed=config.seed, threads=threads)
        bds_p, bds_stats = grid.p_values, grid.statistics
        logging.info(f"BDS bootstrap: {grid.replications} replications, min p-value {bds_p.values.min():.4f}")

    return DiagnosticsReport(
        descriptive=descriptive_stats(x),
        jb=jarque_bera(x),
        lb_residuals=ljung_box(x, config.lags),
        lb_squared=ljung_box(x ** 2, config.lags),
        adf=adf,
        pp=pp,
        bds=bds_p,
        bds_statistics=bds_stats,
        config=config.to_dict()
    )
