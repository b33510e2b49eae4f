"""
Combines the daily prior, the intraday posterior, the volume curve and the auction
model into the figures an execution desk consumes: remaining volume, interval volume,
participation rate and end time.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from volume_quintet.auction import AuctionModel, predict_auction
from volume_quintet.bayes_intraday import IntradayState
from volume_quintet.errors import DataError, ForecastError
from volume_quintet.marketdata import volume_percentile
from volume_quintet.prior_daily import VolumePrior
from volume_quintet.ucurve import Curve, CurveModel

logger = logging.getLogger(__name__)

END_TIME_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Forecast:
    symbol: str
    date: dt.date
    as_of_bin: int
    total_log: float
    total: float
    remaining: float
    c_hat: Curve
    auction: float
    route: str
    posterior_var: float
    traded: float = 0.0
    deficit: bool = False

    @property
    def day_estimate(self) -> float:
        """Remaining plus traded volume, the full-day figure interval volumes scale"""
        return self.remaining + self.traded

    def to_json(self):
        return {
            'symbol': self.symbol,
            'date': self.date.isoformat(),
            'as_of_bin': self.as_of_bin,
            'total_log': self.total_log,
            'total': self.total,
            'remaining': self.remaining,
            'traded': self.traded,
            'auction': self.auction,
            'route': self.route,
            'posterior_var': self.posterior_var,
            'deficit': self.deficit,
            'c_hat': self.c_hat.values.tolist(),
        }


def remaining_volume(mu_t: float, c_hat_t: float) -> float:
    if not 0 <= c_hat_t <= 1:
        raise ValueError(f'cumulative fraction {c_hat_t} outside [0,1]')
    return float(np.exp(mu_t) * (1 - c_hat_t))


def _check_window(forecast: Forecast, t1: int, t2: int):
    bins = forecast.c_hat.bin_count
    if not (0 <= t1 <= bins and 0 <= t2 <= bins):
        raise ValueError(f'window {t1}..{t2} outside session of {bins} bins')
    if t1 > t2:
        raise ValueError(f'window start {t1} after end {t2}')


def interval_volume(forecast: Forecast, t1: int, t2: int) -> float:
    """Model volume between bin boundaries t1 and t2, whether the window is past or future"""
    _check_window(forecast, t1, t2)
    return forecast.day_estimate * (forecast.c_hat.at(t2) - forecast.c_hat.at(t1))


def realized_interval_volume(volumes: Sequence[float], t1: int, t2: int) -> float:
    if t1 > t2:
        raise ValueError(f'window start {t1} after end {t2}')
    return float(np.sum(np.asarray(volumes, dtype=float)[t1:t2]))


def expected_participation(order: float, forecast: Forecast, t1: int, t2: int) -> float:
    volume = interval_volume(forecast, t1, t2)
    if volume <= 0:
        raise ForecastError('forecast', f'no liquidity in window {t1}..{t2}')
    return order / volume


def end_time(order: float, rho: float, forecast: Forecast, t1: int) -> int | None:
    """First bin boundary by which an order at participation rho completes; None if not by the close"""
    if not 0 < rho <= 1:
        raise ValueError(f'participation rate {rho} outside (0,1]')
    bins = forecast.c_hat.bin_count
    for t2 in range(t1, bins + 1):
        if rho * interval_volume(forecast, t1, t2) >= order * (1 - END_TIME_TOLERANCE):
            return t2
    return None


def assemble(prior: VolumePrior, state: IntradayState, curve_model: CurveModel, auction_model: AuctionModel,
             as_of_bin: int, *, date: dt.date, symbol: str = '', gap_ratio: float | None = None,
             volume_history: Sequence[float] | None = None, expiry: bool | None = None) -> Forecast:
    """
    Forecast after `as_of_bin` bins have been observed. The curve is refreshed with the
    percentile of the current posterior total against `volume_history`.
    """
    if prior is not state.prior:
        raise ForecastError('prior_daily', 'intraday state was built from another prior')
    if as_of_bin != state.bins_elapsed:
        raise ForecastError('bayes_intraday', f'state has seen {state.bins_elapsed} bins, not {as_of_bin}')
    try:
        posterior = state.posterior()
    except ValueError as exc:
        raise ForecastError('bayes_intraday', str(exc)) from exc

    try:
        percentile = None
        if volume_history is not None and len(volume_history) > 0:
            percentile = volume_percentile(float(np.exp(posterior.mu_p)), volume_history)
        c_hat = curve_model.predict(gap_ratio=gap_ratio, percentile=percentile)
    except (ValueError, DataError) as exc:
        raise ForecastError('ucurve', str(exc)) from exc

    try:
        auction = predict_auction(auction_model, date, expiry=expiry)
    except (ValueError, OverflowError) as exc:
        raise ForecastError('auction', str(exc)) from exc

    total = float(np.exp(posterior.mu_p))
    traded = state.cum_volume
    remaining = remaining_volume(posterior.mu_p, c_hat.at(as_of_bin))
    deficit = total < traded
    if deficit:
        logger.warning('%s %s bin %d: forecast %.0f below traded %.0f', symbol, date, as_of_bin, total, traded)
    return Forecast(symbol, date, as_of_bin, posterior.mu_p, total, remaining, c_hat, auction, state.route,
                    posterior.sigma_p_sq, traded, deficit)
