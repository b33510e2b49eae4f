"""
Closing auction volume: geometric-mean prior with an option-expiry multiplier, the
expiry calendar and the fixed-percentage auction allocation rule.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from volume_quintet.errors import CalibrationError, DataError
from volume_quintet.marketdata import OPTION_EXPIRY, DayRecord
from volume_quintet.stats import LossSpec, ale_regression, ols

logger = logging.getLogger(__name__)

AUCTION_ALLOCATION_RATE = 0.12
AUCTION_WINDOW = 20
MIN_AUCTION_HISTORY = 60
QUARTERLY_MONTHS = (3, 6, 9, 12)

# the expiry multiplier is a dummy-variable mean, i.e. a symmetric squared-loss fit
_SYMMETRIC_SQUARED = LossSpec(1.0, 1.0, 2)


def is_triple_witching(date: dt.date) -> bool:
    """Third Friday of March, June, September or December"""
    return date.month in QUARTERLY_MONTHS and date.weekday() == 4 and 15 <= date.day <= 21


class ExpiryCalendar:
    """
    Option expiration days. Quarterly triple witching by default, or an explicit list of
    dates for other markets; days flagged `optexp` in the data are always expiry days.
    """
    __slots__ = ('_dates',)

    def __init__(self, dates: Iterable[dt.date] | None = None):
        self._dates = frozenset(dates) if dates is not None else None

    @staticmethod
    def load(path: Path) -> ExpiryCalendar:
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except FileNotFoundError as exc:
            raise DataError(f'{path}: file not found') from exc
        if list(frame.columns) != ['date', 'label']:
            raise DataError(f'{path}: expected header date,label')
        try:
            dates = [dt.date.fromisoformat(text.strip()) for text in frame['date']]
        except ValueError as exc:
            raise DataError(f'{path}: {exc}') from exc
        logger.info('loaded %d expiry dates from %s', len(dates), path)
        return ExpiryCalendar(dates)

    def is_expiry(self, day: DayRecord) -> bool:
        if OPTION_EXPIRY in day.flags:
            return True
        if self._dates is not None:
            return day.date in self._dates
        return is_triple_witching(day.date)

    def to_json(self):
        return None if self._dates is None else [d.isoformat() for d in sorted(self._dates)]

    @staticmethod
    def from_json(data) -> ExpiryCalendar:
        return ExpiryCalendar(None if data is None else [dt.date.fromisoformat(d) for d in data])


@dataclass(frozen=True)
class AuctionModel:
    beta_expiry: float
    mu_a: float
    window: int = AUCTION_WINDOW
    beta_stderr: float = 0.0
    expiry_days: int = 0
    exclude_expiry: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.beta_expiry) and np.isfinite(self.mu_a)):
            raise ValueError('auction model parameters must be finite')

    @property
    def expiry_multiplier(self) -> float:
        return float(np.exp(self.beta_expiry))

    def rolled(self, history: Sequence[DayRecord], at: dt.date, calendar: ExpiryCalendar | None = None) -> AuctionModel:
        """The same model with its rolling mean recomputed from the days before `at`"""
        mean = rolling_auction_mean(history, at, self.window, calendar, exclude_expiry=self.exclude_expiry)
        return replace(self, mu_a=mean)

    def to_json(self):
        return {
            'beta_expiry': self.beta_expiry,
            'mu_a': self.mu_a,
            'window': self.window,
            'beta_stderr': self.beta_stderr,
            'expiry_days': self.expiry_days,
            'exclude_expiry': self.exclude_expiry,
        }

    @staticmethod
    def from_json(data) -> AuctionModel:
        return AuctionModel(**data)


def _auction_days(history: Iterable[DayRecord]) -> list[DayRecord]:
    # halts and data gaps have no auction print
    return [day for day in history if day.auction_volume > 0]


def rolling_auction_mean(history: Sequence[DayRecord], at: dt.date, window: int = AUCTION_WINDOW,
                         calendar: ExpiryCalendar | None = None, *, exclude_expiry=False) -> float:
    """Mean log auction volume of the last `window` auction days before `at`"""
    calendar = calendar or ExpiryCalendar()
    logs = [np.log(day.auction_volume) for day in _auction_days(history)
            if day.date < at and not (exclude_expiry and calendar.is_expiry(day))]
    if not logs:
        raise DataError(f'no auction volumes before {at}')
    return float(np.mean(logs[-window:]))


def _excess_auction_series(days: list[DayRecord], window: int, calendar: ExpiryCalendar, exclude_expiry: bool):
    trailing: deque[float] = deque(maxlen=window)
    excess, dummy = [], []
    for day in days:
        log_volume = float(np.log(day.auction_volume))
        is_expiry = calendar.is_expiry(day)
        if len(trailing) == window:
            excess.append(log_volume - float(np.mean(trailing)))
            dummy.append(1.0 if is_expiry else 0.0)
        if not (exclude_expiry and is_expiry):
            trailing.append(log_volume)
    return np.array(excess), np.array(dummy), trailing


def fit_auction_seasonality(history: Sequence[DayRecord], window: int = AUCTION_WINDOW,
                            calendar: ExpiryCalendar | None = None, *, exclude_expiry=False) -> AuctionModel:
    """
    Regresses the excess log auction volume on the expiry dummy. Zero-auction days are
    left out of both the regression and the rolling mean.
    """
    calendar = calendar or ExpiryCalendar()
    days = _auction_days(history)
    excess, dummy, trailing = _excess_auction_series(days, window, calendar, exclude_expiry)
    if excess.size < 3:
        raise CalibrationError(f'{len(days)} auction days are not enough for a {window}-day mean')
    if len(days) < MIN_AUCTION_HISTORY:
        logger.warning('auction seasonality fitted on %d days', len(days))

    mu_a = float(np.mean(trailing))
    expiry_days = int(dummy.sum())
    if expiry_days == 0:
        logger.warning('no expiry days in auction history, multiplier set to 1')
        return AuctionModel(0.0, mu_a, window, 0.0, 0, exclude_expiry)

    beta = float(ale_regression(excess, dummy[:, None], _SYMMETRIC_SQUARED)[0])
    residuals = excess - beta * dummy
    stderr = float(np.std(residuals, ddof=1) / np.sqrt(expiry_days))
    logger.debug('auction expiry beta %.4f (se %.4f) from %d expiry days', beta, stderr, expiry_days)
    return AuctionModel(beta, mu_a, window, stderr, expiry_days, exclude_expiry)


def predict_auction(model: AuctionModel, date: dt.date, *, expiry: bool | None = None) -> float:
    """Geometric mean of recent auctions, times the expiry multiplier on expiry days"""
    if expiry is None:
        expiry = is_triple_witching(date)
    return float(np.exp(model.mu_a + (model.beta_expiry if expiry else 0.0)))


def auction_allocation(order_size: float, predicted_auction: float) -> float:
    """Shares to send to the close: the lesser of 12% of the predicted auction and 12% of the order"""
    if order_size < 0 or predicted_auction < 0:
        raise ValueError('order size and predicted auction must be non-negative')
    return AUCTION_ALLOCATION_RATE * min(order_size, predicted_auction)


def special_day_auction_slope(history: Sequence[DayRecord], window: int = AUCTION_WINDOW,
                              calendar: ExpiryCalendar | None = None) -> float:
    """
    Slope of the log auction-volume ratio on the log daily-volume ratio over expiry days,
    each ratio taken against its trailing geometric mean.
    """
    calendar = calendar or ExpiryCalendar()
    days = [day for day in _auction_days(history) if day.continuous_volume > 0]
    auction_logs = np.log([day.auction_volume for day in days])
    daily_logs = np.log([day.continuous_volume for day in days])
    auction_ratio, daily_ratio = [], []
    for i in range(window, len(days)):
        if calendar.is_expiry(days[i]):
            auction_ratio.append(auction_logs[i] - auction_logs[i - window:i].mean())
            daily_ratio.append(daily_logs[i] - daily_logs[i - window:i].mean())
    if len(auction_ratio) < 3:
        raise CalibrationError(f'{len(auction_ratio)} expiry days are not enough for a slope')
    design = np.column_stack([np.ones(len(daily_ratio)), daily_ratio])
    return float(ols(auction_ratio, design)[1])
