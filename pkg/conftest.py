#!/usr/bin/env python3
"""
Shared test fixtures
Seeded synthetic series and the published parameter sets used as generative truth
"""
from datetime import date

import numpy as np
import pandas as pd
import pytest

from core.argarch import ARGARCHParams, FullParams
from core.configs import BfgsConfig, GsaConfig
from core.logperiodic import LPParams
from core.synth import simulate
from core.timeseries import PriceSeries

# S&P500 1985-87 extended-model estimates
SP500_LP = LPParams(A=385.11, B=-141.15, C=-12.04, tc=2.210, beta=0.37, omega=6.97, phi=1.41)
SP500_AG = ARGARCHParams(rho=0.935, alpha0=0.023, alpha1=0.036, alpha2=0.962)

# NYSE full-day closures inside the two pre-crash windows
NYSE_HOLIDAYS_1985_1987 = [
    '1985-07-04', '1985-09-02', '1985-09-27', '1985-11-28', '1985-12-25',
    '1986-01-01', '1986-02-17', '1986-03-28', '1986-05-26', '1986-07-04',
    '1986-09-01', '1986-11-27', '1986-12-25',
    '1987-01-01', '1987-02-16', '1987-04-17', '1987-05-25', '1987-07-03',
]
NYSE_HOLIDAYS_1997_2000 = [
    '1997-01-01', '1997-02-17', '1997-03-28', '1997-05-26', '1997-07-04',
    '1997-09-01', '1997-11-27', '1997-12-25',
    '1998-01-01', '1998-01-19', '1998-02-16', '1998-04-10', '1998-05-25',
    '1998-07-03', '1998-09-07', '1998-11-26', '1998-12-25',
    '1999-01-01', '1999-01-18', '1999-02-15', '1999-04-02', '1999-05-31',
    '1999-07-05', '1999-09-06', '1999-11-25', '1999-12-24',
    '2000-01-17', '2000-02-21',
]


def trading_days(start, end, holidays):
    days = pd.bdate_range(start, end)
    return days[~days.isin(pd.to_datetime(holidays))]


def within_business_days(actual: date, expected: date, tolerance: int = 1) -> bool:
    lo, hi = sorted([np.datetime64(actual, 'D'), np.datetime64(expected, 'D')])
    return int(np.busday_count(lo, hi)) <= tolerance


@pytest.fixture
def sp500_truth() -> FullParams:
    return FullParams(SP500_LP, SP500_AG)


@pytest.fixture
def sp500_calendar() -> pd.DatetimeIndex:
    return trading_days('1985-07-01', '1987-08-25', NYSE_HOLIDAYS_1985_1987)


@pytest.fixture
def simulated_series(sp500_truth) -> PriceSeries:
    return simulate(sp500_truth, 544, np.random.default_rng([2024, 0]), origin='1985-07-01')


@pytest.fixture
def quick_gsa() -> GsaConfig:
    return GsaConfig(max_iterations=1500, restarts=2, seed=11)


@pytest.fixture
def quick_bfgs() -> BfgsConfig:
    return BfgsConfig(max_iterations=500)


def make_series(prices, origin='2000-01-03') -> PriceSeries:
    prices = np.asarray(prices, dtype=float)
    return PriceSeries(pd.bdate_range(origin, periods=prices.size), prices)
