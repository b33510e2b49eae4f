"""
Synthetic market generator with known parameters: log-normal daily volumes with
ARMA(1,1) dynamics and gap effects, intraday bins drawn around a chosen curve shape,
and closing auctions with an option-expiry multiplier. Output uses the same CSV
schemas as real data.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import signal

from volume_quintet.auction import AuctionModel, is_triple_witching
from volume_quintet.bayes_intraday import BIN_MODEL, CUMULATIVE_MODEL, ZERO_BIN_THRESHOLD
from volume_quintet.config import load_flat_config
from volume_quintet.errors import ConfigError
from volume_quintet.marketdata import (EARNINGS, OPTION_EXPIRY, PERCENTILE_WINDOW, REBALANCE, VOLATILITY_WINDOW,
                                       BinGrid, BinSeries, DayRecord, write_bins, write_days)
from volume_quintet.params import CalibratedParams, json_encoder
from volume_quintet.prior_daily import GAP_RATIO, ArmaParams
from volume_quintet.ucurve import (CURVE_PREDICTORS, U_CURVE, VOLUME_PERCENTILE, Curve, CurveModel, FunctionalBetas,
                                   repair_curve)

logger = logging.getLogger(__name__)

UNIFORM = 'uniform'
U_SHAPE = 'u_shape'
INVERTED_J = 'inverted_j'
CURVE_SHAPES = (UNIFORM, U_SHAPE, INVERTED_J)

START_DATE = '2015-07-01'
START_PRICE = 50.0
EARNINGS_PERIOD = 63
GAP_SHARE = 0.5

DAYS_FILE = 'days.csv'
BINS_FILE = 'bins.csv'
TRUTH_FILE = 'truth.json'


@dataclass(frozen=True)
class ScenarioSpec:
    n_days: int = 500
    symbol: str = 'SYN'
    mu_log: float = math.log(1e6)
    sigma_log: float = 0.3
    phi: float = 0.7
    theta: float = -0.3
    beta_gap: float = 0.3
    curve_shape: str = U_SHAPE
    bin_noise: float = 0.2
    expiry_multiplier: float = 3.0
    zero_bin_prob: float = 0.0
    seed: int = 7
    curve_gap_tilt: float = 0.0
    curve_volume_tilt: float = 0.0
    earnings_multiplier: float = 1.0
    auction_share: float = 0.08
    auction_noise: float = 0.1
    price_vol: float = 0.015

    def __post_init__(self):
        if self.n_days < 2:
            raise ConfigError('a scenario needs at least 2 days')
        if self.sigma_log < 0 or self.bin_noise < 0 or self.auction_noise < 0:
            raise ConfigError('noise levels must be non-negative')
        if abs(self.phi) >= 1 or abs(self.theta) >= 1:
            raise ConfigError('ARMA parameters must lie in (-1, 1)')
        if not 0 <= self.zero_bin_prob <= 1:
            raise ConfigError('zero_bin_prob must be a probability')
        if self.curve_shape not in CURVE_SHAPES:
            raise ConfigError(f'unknown curve shape {self.curve_shape}')
        if self.expiry_multiplier <= 0 or self.earnings_multiplier <= 0:
            raise ConfigError('multipliers must be positive')
        if not 0 < self.auction_share < 1:
            raise ConfigError('auction_share must be in (0,1)')
        if self.price_vol <= 0:
            raise ConfigError('price_vol must be positive')

    @staticmethod
    def load(path: Path) -> ScenarioSpec:
        return load_flat_config(path, ScenarioSpec)


@dataclass(frozen=True, eq=False)
class SyntheticMarket:
    days: list[DayRecord]
    bins: list[BinSeries]
    truth: CalibratedParams


def shape_curve(shape: str, bin_count: int) -> Curve:
    x = np.linspace(0.0, 1.0, bin_count)
    if shape == UNIFORM:
        weights = np.ones(bin_count)
    elif shape == U_SHAPE:
        weights = 1.0 + 3.0 * (2 * x - 1) ** 2
    elif shape == INVERTED_J:
        weights = 0.5 + 2.0 * np.exp(-5 * x) + 0.5 * x ** 2
    else:
        raise ConfigError(f'unknown curve shape {shape}')
    return Curve(weights / weights.sum(), U_CURVE)


def tilt_profile(bin_count: int) -> np.ndarray:
    """Shift applied to the c-curve per unit predictor: largest at the open, zero at the close"""
    return np.linspace(1.0, 0.0, bin_count)


def _trailing_gap_ratios(closes: np.ndarray, raw_gaps: np.ndarray) -> np.ndarray:
    """Gap ratios as the loaders compute them, from the generated closes"""
    ratios = np.zeros(closes.size)
    for t in range(1, closes.size):
        window = closes[max(0, t - 1 - VOLATILITY_WINDOW):t]
        if window.size < 3:
            continue
        vol = np.std(np.diff(np.log(window)), ddof=1)
        if vol > 1e-12:
            ratios[t] = raw_gaps[t] / vol
    return ratios


def _trailing_percentiles(volumes: np.ndarray) -> np.ndarray:
    percentiles = np.full(volumes.size, 0.5)
    for t in range(1, volumes.size):
        history = volumes[max(0, t - PERCENTILE_WINDOW):t]
        percentiles[t] = np.count_nonzero(history < volumes[t]) / history.size
    return percentiles


def generate(spec: ScenarioSpec, grid: BinGrid = BinGrid()) -> SyntheticMarket:
    """Deterministic in the seed: the same scenario always yields the same market"""
    rng = np.random.Generator(np.random.Philox(spec.seed))
    n, bins = spec.n_days, grid.bin_count
    innovations = rng.standard_normal(n) * spec.sigma_log
    gap_draws = rng.standard_normal(n)
    return_draws = rng.standard_normal(n)
    bin_draws = rng.standard_normal((n, bins))
    zero_draws = rng.random((n, bins))
    auction_draws = rng.standard_normal(n)

    dates = [ts.date() for ts in pd.bdate_range(START_DATE, periods=n)]

    # close-to-close log returns are price_vol-normal; part of each is the overnight gap
    returns = return_draws * spec.price_vol
    returns[0] = 0.0
    closes = START_PRICE * np.exp(np.cumsum(returns))
    gap_logs = np.zeros(n)
    gap_logs[1:] = GAP_SHARE * gap_draws[1:] * spec.price_vol
    opens = np.concatenate([[START_PRICE], closes[:-1]]) * np.exp(gap_logs)
    gap_ratios = _trailing_gap_ratios(closes, np.expm1(gap_logs))

    earnings = (np.arange(n) % EARNINGS_PERIOD) == EARNINGS_PERIOD - 1
    arma = signal.lfilter([1.0, spec.theta], [1.0, -spec.phi], innovations)
    log_volumes = (spec.mu_log + arma + spec.beta_gap * gap_ratios
                   + np.log(spec.earnings_multiplier) * earnings)
    volumes = np.exp(log_volumes)
    percentiles = _trailing_percentiles(volumes)

    base = shape_curve(spec.curve_shape, bins).to_c().values
    tilt = tilt_profile(bins)
    days, series = [], []
    for t in range(n):
        shift = spec.curve_gap_tilt * gap_ratios[t] + spec.curve_volume_tilt * (percentiles[t] - 0.5)
        u = repair_curve(base + shift * tilt).to_u().values
        raw = u * np.exp(spec.bin_noise * bin_draws[t]) * (zero_draws[t] >= spec.zero_bin_prob)
        bin_volumes = raw * (volumes[t] / raw.sum()) if raw.sum() > 0 else raw
        continuous = float(bin_volumes.sum())

        expiry = is_triple_witching(dates[t])
        auction = spec.auction_share * volumes[t] * np.exp(spec.auction_noise * auction_draws[t])
        if expiry:
            auction *= spec.expiry_multiplier
        flags = set()
        if expiry:
            flags.add(OPTION_EXPIRY)
        if earnings[t]:
            flags.add(EARNINGS)
        days.append(DayRecord(spec.symbol, dates[t], float(opens[t]), float(closes[t]),
                              continuous + float(auction), float(auction), frozenset(flags)))
        series.append(BinSeries(spec.symbol, dates[t], bin_volumes))

    logger.info('generated %d days of %s (seed %d)', n, spec.symbol, spec.seed)
    return SyntheticMarket(days, series, ground_truth(spec, grid))


def ground_truth(spec: ScenarioSpec, grid: BinGrid = BinGrid()) -> CalibratedParams:
    """The generating parameters in the schema the calibration writes"""
    bins = grid.bin_count
    base = shape_curve(spec.curve_shape, bins).to_c()
    tilt = tilt_profile(bins)
    k = len(CURVE_PREDICTORS)
    planted = {GAP_RATIO: spec.curve_gap_tilt * tilt, VOLUME_PERCENTILE: spec.curve_volume_tilt * tilt}
    betas = FunctionalBetas(
        beta0=base.values.copy(),
        betas=np.vstack([planted[name] for name in CURVE_PREDICTORS]),
        predictor_names=CURVE_PREDICTORS,
        means=np.array([0.0 if name == GAP_RATIO else 0.5 for name in CURVE_PREDICTORS]),
        scales=np.ones(k),
        stderr=np.zeros((k, bins)),
    )
    return CalibratedParams(
        symbol=spec.symbol,
        arma=ArmaParams(spec.phi, spec.theta),
        special_betas={GAP_RATIO: spec.beta_gap, EARNINGS: math.log(spec.earnings_multiplier),
                       OPTION_EXPIRY: 0.0, REBALANCE: 0.0},
        curve=CurveModel(base, betas),
        auction=AuctionModel(math.log(spec.expiry_multiplier), spec.mu_log + math.log(spec.auction_share)),
        route=CUMULATIVE_MODEL if spec.zero_bin_prob > ZERO_BIN_THRESHOLD else BIN_MODEL,
        diagnostics={'source': 'synthetic', 'seed': spec.seed},
    )


def write_market(market: SyntheticMarket, directory: Path, grid: BinGrid = BinGrid()) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {'days': directory / DAYS_FILE, 'bins': directory / BINS_FILE, 'truth': directory / TRUTH_FILE}
    write_days(paths['days'], market.days)
    write_bins(paths['bins'], market.bins, grid)
    with open(paths['truth'], 'w') as f:
        json.dump(market.truth, f, indent=2, sort_keys=True, default=json_encoder)
    return paths
