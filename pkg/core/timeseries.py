#!/usr/bin/env python3
"""
Time Series - Core Business Logic
Daily price series loading, windowing and the 252-trading-day year convention
"""
import hashlib
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from dateutil.parser import isoparse

from core.errors import DomainError, InputDataError

TRADING_DAYS_PER_YEAR = 252


def as_date(value) -> date:
    """Accept date, datetime, Timestamp or ISO string"""
    if isinstance(value, str):
        try:
            return isoparse(value).date()
        except ValueError as e:
            raise InputDataError(f"Unparseable date {value!r}: {e}") from e
    return pd.Timestamp(value).date()


def holiday_array(holidays: Optional[Iterable]) -> np.ndarray:
    """np.busday_offset-compatible holiday list"""
    if not holidays:
        return np.array([], dtype='datetime64[D]')
    return np.array([np.datetime64(as_date(h), 'D') for h in holidays], dtype='datetime64[D]')


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Dated daily prices with an observation-count year axis"""

    dates: pd.DatetimeIndex
    prices: np.ndarray

    def __post_init__(self):
        dates = pd.DatetimeIndex(self.dates).normalize()
        prices = np.asarray(self.prices, dtype=float)
        if len(dates) != len(prices):
            raise InputDataError(f"{len(dates)} dates but {len(prices)} prices")
        if len(dates) == 0:
            raise InputDataError("no observations")
        if not dates.is_monotonic_increasing or dates.has_duplicates:
            raise InputDataError("dates must be strictly increasing")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise InputDataError("prices must be finite and strictly positive")
        prices.setflags(write=False)
        object.__setattr__(self, 'dates', dates)
        object.__setattr__(self, 'prices', prices)

    def __len__(self):
        return len(self.prices)

    @property
    def origin(self) -> date:
        return self.dates[0].date()

    @property
    def t(self) -> np.ndarray:
        """Year-unit times k / 252"""
        return np.arange(len(self.prices), dtype=float) / TRADING_DAYS_PER_YEAR

    @property
    def t_last(self) -> float:
        return (len(self.prices) - 1) / TRADING_DAYS_PER_YEAR

    def equals(self, other: 'PriceSeries') -> bool:
        return (isinstance(other, PriceSeries)
                and self.dates.equals(other.dates)
                and np.array_equal(self.prices, other.prices))

    def to_frame(self, date_column='date', price_column='close') -> pd.DataFrame:
        return pd.DataFrame({
            date_column: self.dates.strftime('%Y-%m-%d'),
            't': self.t,
            price_column: self.prices
        })


def load_csv(path, date_column: str = 'date', price_column: str = 'close') -> PriceSeries:
    """Load a comma-separated, headed, UTF-8 price file"""
    file_path = Path(path)
    if not file_path.is_file():
        raise InputDataError(f"Input file not found: {file_path}")

    try:
        df = pd.read_csv(file_path, dtype=str, encoding='utf-8', keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise InputDataError(f"{file_path}: no observations")
    except (UnicodeDecodeError, pd.errors.ParserError) as e:
        raise InputDataError(f"{file_path}: cannot parse CSV: {e}") from e

    for column in (date_column, price_column):
        if column not in df.columns:
            raise InputDataError(f"{file_path}: missing column {column!r} (found {list(df.columns)})")
    if df.empty:
        raise InputDataError(f"{file_path}: no observations")

    dates, prices = [], []
    for idx, (raw_date, raw_price) in enumerate(zip(df[date_column], df[price_column])):
        line = idx + 2  # header is line 1
        try:
            parsed = isoparse(raw_date.strip())
        except ValueError:
            raise InputDataError(f"{file_path} line {line}: unparseable date {raw_date!r}")
        try:
            price = float(raw_price)
        except ValueError:
            raise InputDataError(f"{file_path} line {line}: unparseable price {raw_price!r}")
        if not np.isfinite(price) or price <= 0:
            raise InputDataError(f"{file_path} line {line}: non-positive price {raw_price!r}")
        dates.append(parsed.date())
        prices.append(price)

    frame = pd.DataFrame({'date': pd.to_datetime(dates), 'price': prices})
    duplicated = frame['date'].duplicated(keep=False)
    if duplicated.any():
        first = frame.loc[duplicated, 'date'].iloc[0].strftime('%Y-%m-%d')
        raise InputDataError(f"{file_path}: duplicate date {first}")

    frame = frame.sort_values('date', kind='mergesort')
    logging.info(f"Loaded {len(frame)} observations from {file_path}")
    return PriceSeries(pd.DatetimeIndex(frame['date']), frame['price'].to_numpy())


def to_csv(series: PriceSeries, path, date_column: str = 'date', price_column: str = 'close'):
    """Write the series back out with round-trip float precision"""
    frame = pd.DataFrame({
        date_column: series.dates.strftime('%Y-%m-%d'),
        price_column: [repr(float(p)) for p in series.prices]
    })
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding='utf-8')
    return str(path)


def to_year_units(index) -> float:
    """Observation index to years (1 day = 1/252 year)"""
    if np.any(np.asarray(index) < 0):
        raise DomainError(f"Observation index must be non-negative, got {index}")
    return np.asarray(index, dtype=float) / TRADING_DAYS_PER_YEAR if np.ndim(index) else float(index) / TRADING_DAYS_PER_YEAR


def year_to_index(t: float) -> int:
    """Nearest observation index for a year-time (half rounds up)"""
    return int(np.floor(t * TRADING_DAYS_PER_YEAR + 0.5))


def year_to_date(t: float, origin, holidays: Optional[Iterable] = None) -> date:
    """Business day reached by advancing round(t * 252) business days from origin"""
    if not np.isfinite(t) or t < 0:
        raise DomainError(f"Year-time must be finite and non-negative, got {t}")
    start = np.datetime64(as_date(origin), 'D')
    steps = year_to_index(t)
    reached = np.busday_offset(start, steps, roll='forward', holidays=holiday_array(holidays))
    return pd.Timestamp(reached).date()


def index_to_date(index: int, series: PriceSeries, holidays: Optional[Iterable] = None) -> date:
    """Observed trading date in-sample, weekday extrapolation beyond the last observation"""
    if index < 0:
        raise DomainError(f"Observation index must be non-negative, got {index}")
    if index < len(series):
        return series.dates[index].date()
    last = np.datetime64(series.dates[-1].date(), 'D')
    reached = np.busday_offset(last, index - (len(series) - 1), roll='forward',
                               holidays=holiday_array(holidays))
    return pd.Timestamp(reached).date()


def series_time_to_date(t: float, series: PriceSeries, holidays: Optional[Iterable] = None) -> date:
    """year_to_date anchored on the series' own trading calendar"""
    if not np.isfinite(t) or t < 0:
        raise DomainError(f"Year-time must be finite and non-negative, got {t}")
    return index_to_date(year_to_index(t), series, holidays)


def slice_window(series: PriceSeries, start=None, end=None) -> PriceSeries:
    """Sub-series between start and end inclusive, re-based at its first observation"""
    start_ts = pd.Timestamp(as_date(start)) if start is not None else series.dates[0]
    end_ts = pd.Timestamp(as_date(end)) if end is not None else series.dates[-1]
    if start_ts > end_ts:
        raise DomainError(f"Window start {start_ts.date()} is after end {end_ts.date()}")

    mask = (series.dates >= start_ts) & (series.dates <= end_ts)
    if not mask.any():
        raise InputDataError(
            f"Window {start_ts.date()}..{end_ts.date()} has an empty intersection with "
            f"{series.dates[0].date()}..{series.dates[-1].date()}"
        )
    return PriceSeries(series.dates[mask], series.prices[mask])


def series_checksum(series: PriceSeries) -> str:
    """MD5 over ISO dates and repr prices"""
    payload = "\n".join(
        f"{d},{float(p)!r}" for d, p in zip(series.dates.strftime('%Y-%m-%d'), series.prices)
    )
    return hashlib.md5(payload.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class Drawdown:
    """Largest peak-to-trough decline of a series"""

    peak_index: int
    trough_index: int
    peak_date: date
    trough_date: date
    drawdown: float

    @property
    def t_max(self) -> float:
        return self.peak_index / TRADING_DAYS_PER_YEAR

    @property
    def t_min(self) -> float:
        return self.trough_index / TRADING_DAYS_PER_YEAR

    def to_dict(self):
        return {
            'peak_index': self.peak_index,
            'trough_index': self.trough_index,
            'peak_date': self.peak_date.isoformat(),
            'trough_date': self.trough_date.isoformat(),
            't_max': self.t_max,
            't_min': self.t_min,
            'drawdown': self.drawdown
        }


def drawdown_window(series: PriceSeries) -> Drawdown:
    """Locate t_max (peak) and t_min (trough) of the maximum drawdown"""
    prices = pd.Series(series.prices)
    cumulative = prices.cummax()
    drawdown = (prices - cumulative) / cumulative
    trough = int(drawdown.idxmin())
    peak = int(prices.iloc[:trough + 1].idxmax())
    return Drawdown(
        peak_index=peak,
        trough_index=trough,
        peak_date=series.dates[peak].date(),
        trough_date=series.dates[trough].date(),
        drawdown=float(drawdown.iloc[trough])
    )
