"""
Intraday volume profile. A u-curve holds the fraction of the continuous-session
volume traded in each bin, a c-curve its running total. The base c-curve is a
long-history average; bin-wise functional regression on the overnight gap and the
volume percentile bends it for the day at hand.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import ndimage

from volume_quintet.errors import CalibrationError, DataError
from volume_quintet.marketdata import (VOLATILITY_WINDOW, BinSeries, DayRecord, overnight_gap, trailing_volumes,
                                       volume_percentile)
from volume_quintet.prior_daily import GAP_RATIO

logger = logging.getLogger(__name__)

U_CURVE = 'u'
C_CURVE = 'c'
CURVE_WINDOW = 180
MIN_CURVE_DAYS = 20
MIN_REGRESSION_DAYS = 40
MAX_ZERO_FRACTION = 0.5
CURVE_TOLERANCE = 1e-9

VOLUME_PERCENTILE = 'volume_percentile'
CURVE_PREDICTORS = (GAP_RATIO, VOLUME_PERCENTILE)


@dataclass(frozen=True, eq=False)
class Curve:
    values: np.ndarray
    kind: str = C_CURVE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, 'values', values)
        if self.kind not in (U_CURVE, C_CURVE):
            raise ValueError(f'unknown curve kind {self.kind}')
        if values.ndim != 1 or values.size == 0:
            raise ValueError('curve values must be a non-empty vector')
        if not np.all(np.isfinite(values)) or np.any(values < -CURVE_TOLERANCE):
            raise ValueError('curve values must be finite and non-negative')
        if self.kind == U_CURVE and abs(values.sum() - 1) > CURVE_TOLERANCE:
            raise ValueError(f'u-curve sums to {values.sum()}')
        if self.kind == C_CURVE:
            if np.any(np.diff(values) < -CURVE_TOLERANCE):
                raise ValueError('c-curve is not monotone')
            if abs(values[-1] - 1) > CURVE_TOLERANCE:
                raise ValueError(f'c-curve ends at {values[-1]}')

    @property
    def bin_count(self) -> int:
        return self.values.size

    def to_u(self) -> Curve:
        if self.kind == U_CURVE:
            return self
        return Curve(np.diff(self.values, prepend=0.0), U_CURVE)

    def to_c(self) -> Curve:
        if self.kind == C_CURVE:
            return self
        return repair_curve(np.cumsum(self.values))

    def at(self, boundary: int) -> float:
        """Cumulative fraction at a bin boundary: 0 at the open, 1 after the last bin"""
        c = self.to_c().values
        if not 0 <= boundary <= c.size:
            raise ValueError(f'boundary {boundary} outside 0..{c.size}')
        return 0.0 if boundary == 0 else float(c[boundary - 1])

    def to_json(self):
        return {'kind': self.kind, 'values': self.values.tolist()}

    @staticmethod
    def from_json(data) -> Curve:
        return Curve(np.array(data['values']), data['kind'])

    def __repr__(self):
        return f'Curve({self.kind}, {self.bin_count} bins)'


def repair_curve(raw: Sequence[float]) -> Curve:
    """
    Makes any vector a valid c-curve: clip to [0,1], running maximum, rescale so the
    last bin is exactly 1. A curve with no mass at all becomes uniform.
    """
    values = np.maximum.accumulate(np.clip(np.asarray(raw, dtype=float), 0.0, 1.0))
    if values[-1] <= 0:
        return Curve(np.arange(1, values.size + 1) / values.size)
    values = values / values[-1]
    values[-1] = 1.0
    return Curve(values)


def daily_c_curve(series: BinSeries) -> Curve:
    total = series.total
    if total <= 0:
        raise ValueError(f'{series.symbol} {series.date}: no volume')
    return repair_curve(np.cumsum(series.volumes) / total)


def usable_days(bins: Sequence[BinSeries], max_zero_fraction: float = MAX_ZERO_FRACTION) -> list[BinSeries]:
    return [series for series in bins if series.total > 0 and series.zero_fraction <= max_zero_fraction]


def _average_curve(curves: Sequence[Curve]) -> Curve:
    return repair_curve(np.mean([curve.values for curve in curves], axis=0))


def historical_curve(bins: Sequence[BinSeries], window: int = CURVE_WINDOW, min_days: int = MIN_CURVE_DAYS) -> Curve:
    """Pointwise average of the daily c-curves of the last `window` days"""
    days = usable_days(bins[-window:])
    if len(days) < min_days:
        raise CalibrationError(f'{len(days)} usable days are not enough for a base curve')
    return _average_curve([daily_c_curve(series) for series in days])


@dataclass(frozen=True, eq=False)
class FunctionalBetas:
    beta0: np.ndarray
    betas: np.ndarray
    predictor_names: tuple[str, ...]
    means: np.ndarray
    scales: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        bins = self.beta0.size
        k = len(self.predictor_names)
        if self.betas.shape != (k, bins) or self.stderr.shape != (k, bins):
            raise ValueError(f'beta curves must be {k} x {bins}')
        if self.means.shape != (k,) or self.scales.shape != (k,):
            raise ValueError('one mean and scale per predictor')

    @staticmethod
    def zeros(bin_count: int, predictor_names: Sequence[str] = CURVE_PREDICTORS) -> FunctionalBetas:
        k = len(predictor_names)
        return FunctionalBetas(np.zeros(bin_count), np.zeros((k, bin_count)), tuple(predictor_names),
                               np.zeros(k), np.ones(k), np.zeros((k, bin_count)))

    @property
    def bin_count(self) -> int:
        return self.beta0.size

    def standardize(self, predictors: Mapping[str, float]) -> np.ndarray:
        """Predictors in calibration units; missing or degenerate ones are centered at 0"""
        z = np.zeros(len(self.predictor_names))
        for i, name in enumerate(self.predictor_names):
            if name in predictors and self.scales[i] > 0:
                z[i] = (predictors[name] - self.means[i]) / self.scales[i]
        return z

    def shift(self, predictors: Mapping[str, float]) -> np.ndarray:
        return self.standardize(predictors) @ self.betas

    def raw_betas(self) -> np.ndarray:
        """Beta curves per unit of the original predictor"""
        scales = np.where(self.scales > 0, self.scales, np.inf)
        return self.betas / scales[:, None]

    def to_json(self):
        return {
            'predictors': list(self.predictor_names),
            'beta0': self.beta0.tolist(),
            'betas': self.betas.tolist(),
            'means': self.means.tolist(),
            'scales': self.scales.tolist(),
            'stderr': self.stderr.tolist(),
        }

    @staticmethod
    def from_json(data) -> FunctionalBetas:
        k = len(data['predictors'])
        bins = len(data['beta0'])
        return FunctionalBetas(
            np.array(data['beta0'], dtype=float),
            np.array(data['betas'], dtype=float).reshape(k, bins),
            tuple(data['predictors']),
            np.array(data['means'], dtype=float),
            np.array(data['scales'], dtype=float),
            np.array(data['stderr'], dtype=float).reshape(k, bins),
        )


def fit_functional_regression(curves: Sequence[Curve], predictors: Mapping[str, Sequence[float]], *,
                              min_days: int = MIN_REGRESSION_DAYS, smooth: bool = False) -> FunctionalBetas:
    """
    Bin-wise least squares of the daily c-curves on standardized predictors. All bins
    share the design matrix, so the fit is a single solve with one column per bin.
    """
    response = np.vstack([curve.to_c().values for curve in curves])
    n, bins = response.shape
    if n < min_days:
        raise CalibrationError(f'{n} days are not enough for the functional regression')
    names = tuple(predictors)
    raw = np.column_stack([np.asarray(predictors[name], dtype=float) for name in names]) if names \
        else np.empty((n, 0))
    if raw.shape[0] != n:
        raise ValueError(f'{raw.shape[0]} predictor rows for {n} curves')

    means = raw.mean(axis=0)
    scales = raw.std(axis=0, ddof=1)
    active = scales > 1e-12
    for name in np.array(names)[~active]:
        logger.warning('predictor %s has no variance, its betas are zero', name)
    scales = np.where(active, scales, 0.0)

    betas = np.zeros((len(names), bins))
    stderr = np.zeros((len(names), bins))
    z = (raw[:, active] - means[active]) / scales[active]
    design = np.column_stack([np.ones(n), z])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        logger.warning('functional regression design is rank deficient, betas are zero')
        return FunctionalBetas(response.mean(axis=0), betas, names, means, scales, stderr)

    coefficients, *_ = np.linalg.lstsq(design, response, rcond=None)
    residuals = response - design @ coefficients
    sigma_sq = np.sum(residuals ** 2, axis=0) / max(n - design.shape[1], 1)
    unscaled = np.diag(np.linalg.inv(design.T @ design))[1:]
    betas[active] = coefficients[1:]
    stderr[active] = np.sqrt(np.outer(unscaled, sigma_sq))
    if smooth:
        betas = ndimage.uniform_filter1d(betas, size=3, axis=1, mode='nearest')
    logger.debug('functional regression on %d days, %d predictors', n, int(active.sum()))
    return FunctionalBetas(coefficients[0], betas, names, means, scales, stderr)


def predict_curve(base: Curve, betas: FunctionalBetas, predictors: Mapping[str, float]) -> Curve:
    if base.bin_count != betas.bin_count:
        raise ValueError(f'base curve has {base.bin_count} bins, betas {betas.bin_count}')
    return repair_curve(base.to_c().values + betas.shift(predictors))


def update_curve_for_volume(base: Curve, betas: FunctionalBetas, percentile: float,
                            gap_ratio: float | None = None) -> Curve:
    """Curve for the day given where the current total-volume estimate ranks historically"""
    if not 0 <= percentile <= 1:
        raise ValueError(f'percentile {percentile} outside [0,1]')
    predictors = {VOLUME_PERCENTILE: percentile}
    if gap_ratio is not None:
        predictors[GAP_RATIO] = gap_ratio
    return predict_curve(base, betas, predictors)


@dataclass(frozen=True, eq=False)
class CurveModel:
    base: Curve
    betas: FunctionalBetas

    def predict(self, *, gap_ratio: float | None = None, percentile: float | None = None) -> Curve:
        predictors = {}
        if gap_ratio is not None:
            predictors[GAP_RATIO] = gap_ratio
        if percentile is not None:
            predictors[VOLUME_PERCENTILE] = percentile
        return predict_curve(self.base, self.betas, predictors)

    def to_json(self):
        return {'base': self.base.to_json(), 'betas': self.betas.to_json()}

    @staticmethod
    def from_json(data) -> CurveModel:
        return CurveModel(Curve.from_json(data['base']), FunctionalBetas.from_json(data['betas']))


def curve_regression_sample(days: Sequence[DayRecord], bins: Sequence[BinSeries],
                            window: int = CURVE_WINDOW) -> tuple[list[BinSeries], dict[str, np.ndarray]]:
    """
    Usable days with both predictors: the day's gap ratio and the percentile of its
    volume against the trailing `window` days.
    """
    by_date = {day.date: i for i, day in enumerate(days)}
    sample, gaps, percentiles = [], [], []
    for series in usable_days(bins):
        i = by_date.get(series.date)
        if i is None or i == 0:
            continue
        today = days[i]
        try:
            gap = overnight_gap(days[i - 1], today, days[max(0, i - 1 - VOLATILITY_WINDOW):i]).gap_ratio
        except DataError:
            continue
        history = trailing_volumes(days, today.date, window)
        if history.size == 0:
            continue
        sample.append(series)
        gaps.append(gap)
        percentiles.append(volume_percentile(today.continuous_volume, history))
    return sample, {GAP_RATIO: np.array(gaps), VOLUME_PERCENTILE: np.array(percentiles)}


def bucket_curves(curves: Sequence[Curve], values: Sequence[float], buckets: int) -> list[tuple[int, int, Curve]]:
    """Average c-curve of each quantile bucket of `values`, as (bucket, day count, curve)"""
    labels = pd.qcut(np.asarray(values, dtype=float), q=buckets, labels=False, duplicates='drop')
    result = []
    for bucket in sorted(set(int(label) for label in labels)):
        members = [curve for curve, label in zip(curves, labels) if label == bucket]
        result.append((bucket, len(members), _average_curve(members)))
    return result


def export_curve_csv(path: Path, curve: Curve):
    c = curve.to_c().values
    frame = pd.DataFrame({'bin_index': np.arange(c.size), 'c_value': c, 'u_value': curve.to_c().to_u().values})
    frame.to_csv(path, index=False)
