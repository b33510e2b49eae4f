"""
Daily volume prior: Grubbs-filtered 20-day geometric mean, ARMA(1,1) dynamics of
the excess log volume and multiplicative special-day adjustments.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy import stats as ss

from volume_quintet.auction import ExpiryCalendar
from volume_quintet.errors import CalibrationError, DataError
from volume_quintet.marketdata import EARNINGS, OPTION_EXPIRY, REBALANCE, VOLATILITY_WINDOW, DayRecord, overnight_gap
from volume_quintet.stats import GRUBBS_ALPHA, LossSpec, ale_from_errors, ale_regression, grubbs_filter

logger = logging.getLogger(__name__)

PRIOR_WINDOW = 20
MIN_CALIBRATION_DAYS = 60
ARMA_BURN_IN = 10
ARMA_BOUND = 0.95
SIGMA_FLOOR = 0.05
PARSIMONY_SIGNIFICANCE = 0.01

GAP_RATIO = 'gap_ratio'
SPECIAL_DAY_PREDICTORS = (GAP_RATIO, EARNINGS, OPTION_EXPIRY, REBALANCE)

_COARSE_GRID = np.round(np.arange(-0.90, 0.901, 0.05), 2)


@dataclass(frozen=True)
class ArmaParams:
    phi: float = 0.0
    theta: float = 0.0
    last_eps: float = 0.0
    prior_only: bool = False

    def __post_init__(self):
        if abs(self.phi) >= 1:
            raise ValueError(f'phi={self.phi} is not stationary')
        if abs(self.theta) >= 1:
            raise ValueError(f'theta={self.theta} is not invertible')

    @property
    def is_null(self) -> bool:
        return self.phi == 0 and self.theta == 0

    def to_json(self):
        return {'phi': self.phi, 'theta': self.theta, 'last_eps': self.last_eps, 'prior_only': self.prior_only}

    @staticmethod
    def from_json(data) -> ArmaParams:
        return ArmaParams(data['phi'], data['theta'], data.get('last_eps', 0.0), data.get('prior_only', False))


@dataclass(frozen=True)
class VolumePrior:
    mu0: float
    sigma0_sq: float
    multiplier: float = 1.0
    source_window: int = PRIOR_WINDOW

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ValueError('prior variance must be positive')
        if not self.multiplier > 0:
            raise ValueError('prior multiplier must be positive')
        if not np.isfinite(np.exp(self.mu0)):
            raise ValueError(f'prior mean {self.mu0} overflows')

    @property
    def log_mean(self) -> float:
        """Prior mean of today's log volume, special-day multiplier included"""
        return self.mu0 + float(np.log(self.multiplier))

    @property
    def estimate(self) -> float:
        return float(np.exp(self.log_mean))

    def to_json(self):
        return {
            'mu0': self.mu0,
            'sigma0_sq': self.sigma0_sq,
            'multiplier': self.multiplier,
            'source_window': self.source_window,
        }


@dataclass(frozen=True, eq=False)
class DailyDesign:
    """Excess log volumes y_t aligned with the special-day predictors of the same days"""
    dates: list[dt.date]
    y: np.ndarray
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.dates)

    def residual(self, betas: Mapping[str, float]) -> np.ndarray:
        """Excess volume left once the special-day effects are taken out"""
        result = self.y.copy()
        for name, beta in betas.items():
            if name in self.features:
                result -= beta * self.features[name]
        return result

    def before(self, at: dt.date) -> DailyDesign:
        count = sum(1 for d in self.dates if d < at)
        return DailyDesign(self.dates[:count], self.y[:count], {k: v[:count] for k, v in self.features.items()})


def window_log_volumes(history: Sequence[DayRecord], at: dt.date | None = None, window: int = PRIOR_WINDOW,
                       alpha: float = GRUBBS_ALPHA) -> np.ndarray:
    """Grubbs-filtered log volumes of the last `window` trading days before `at`"""
    volumes = [day.continuous_volume for day in history
               if (at is None or day.date < at) and day.continuous_volume > 0]
    if len(volumes) < window:
        raise DataError(f'{len(volumes)} days before {at} are not enough for a {window}-day mean')
    kept, _ = grubbs_filter(np.log(volumes[-window:]), alpha)
    return np.array(kept)


def rolling_log_mean(history: Sequence[DayRecord], window: int = PRIOR_WINDOW, at: dt.date | None = None,
                     alpha: float = GRUBBS_ALPHA) -> float:
    return float(np.mean(window_log_volumes(history, at, window, alpha)))


def innovations(y: Sequence[float], phi: float, theta: float) -> np.ndarray:
    """Recursive ARMA(1,1) residuals with zero initial state"""
    return signal.lfilter([1.0, -phi], [1.0, theta], np.asarray(y, dtype=float))


def arma_forecast(y_history: Sequence[float], params: ArmaParams) -> float:
    """One-step-ahead forecast of the excess log volume"""
    y = np.asarray(y_history, dtype=float)
    if y.size == 0:
        raise ValueError('empty excess volume history')
    if params.is_null:
        return 0.0
    eps = innovations(y, params.phi, params.theta)
    return float(params.phi * y[-1] + params.theta * eps[-1])


def arma_forecast_path(y_history: Sequence[float], params: ArmaParams, steps: int) -> np.ndarray:
    path = np.empty(steps)
    path[0] = arma_forecast(y_history, params)
    for h in range(1, steps):
        path[h] = params.phi * path[h - 1]
    return path


def _arma_loss(y: np.ndarray, phi: float, theta: float, spec: LossSpec, burn_in: int) -> float:
    # forecast minus actual is the negated innovation
    eps = innovations(y, phi, theta)
    return ale_from_errors(-eps[burn_in:], spec)


def _grid_search(y, grid_phi, grid_theta, spec, burn_in):
    best = None
    for phi in grid_phi:
        for theta in grid_theta:
            loss = _arma_loss(y, phi, theta, spec, burn_in)
            key = (loss, abs(phi) + abs(theta))
            if best is None or key < best[0]:
                best = (key, float(phi), float(theta))
    return best


def _refined_axis(center: float) -> np.ndarray:
    axis = np.round(np.arange(center - 0.05, center + 0.0501, 0.01), 2)
    return axis[np.abs(axis) < ARMA_BOUND]


def calibrate_arma(y_history: Sequence[float], spec: LossSpec = LossSpec(), *, burn_in: int = ARMA_BURN_IN,
                   min_obs: int = MIN_CALIBRATION_DAYS, significance: float = PARSIMONY_SIGNIFICANCE) -> ArmaParams:
    """
    Fits (phi, theta) by minimizing the one-step-ahead ALE on a 0.05 grid, refined
    locally at 0.01. The fit is kept only when it beats the null model by a
    likelihood-ratio margin; otherwise the null model is returned.
    """
    y = np.asarray(y_history, dtype=float)
    if y.size < min_obs:
        logger.warning('%d excess volumes are not enough for ARMA calibration, prior only', y.size)
        return ArmaParams(prior_only=True)
    if not np.any(y):
        return ArmaParams()

    (loss, _), phi, theta = _grid_search(y, _COARSE_GRID, _COARSE_GRID, spec, burn_in)
    (loss, _), phi, theta = _grid_search(y, _refined_axis(phi), _refined_axis(theta), spec, burn_in)

    null_loss = _arma_loss(y, 0.0, 0.0, spec, burn_in)
    n_eff = y.size - burn_in
    if null_loss == 0 or loss >= null_loss:
        return ArmaParams(last_eps=float(y[-1]))
    statistic = 2.0 * n_eff / spec.exponent * np.log(null_loss / loss) if loss > 0 else np.inf
    if statistic < ss.chi2.ppf(1 - significance, 2):
        logger.info('ARMA(%.2f, %.2f) not significant (LR %.2f), using the null model', phi, theta, statistic)
        return ArmaParams(last_eps=float(y[-1]))

    last_eps = float(innovations(y, phi, theta)[-1])
    logger.info('ARMA calibrated: phi=%.2f theta=%.2f loss=%.4f (null %.4f)', phi, theta, loss, null_loss)
    return ArmaParams(phi, theta, last_eps)


def special_day_features(prev: DayRecord | None, today: DayRecord, history: Sequence[DayRecord],
                         calendar: ExpiryCalendar | None = None) -> dict[str, float]:
    """Predictor row for one day: gap ratio plus the special-day dummies"""
    calendar = calendar or ExpiryCalendar()
    gap_ratio = 0.0
    if prev is not None:
        try:
            gap_ratio = overnight_gap(prev, today, history).gap_ratio
        except DataError as exc:
            logger.debug('%s %s: gap ratio unavailable (%s)', today.symbol, today.date, exc)
    return {
        GAP_RATIO: gap_ratio,
        EARNINGS: 1.0 if EARNINGS in today.flags else 0.0,
        OPTION_EXPIRY: 1.0 if calendar.is_expiry(today) else 0.0,
        REBALANCE: 1.0 if REBALANCE in today.flags else 0.0,
    }


def daily_design(history: Sequence[DayRecord], window: int = PRIOR_WINDOW, alpha: float = GRUBBS_ALPHA,
                 calendar: ExpiryCalendar | None = None) -> DailyDesign:
    """
    Excess log volume of every day with a full trailing window, y_t = ln V_t - mu_t, and
    its predictor row. Zero-volume days are skipped.
    """
    calendar = calendar or ExpiryCalendar()
    dates: list[dt.date] = []
    y: list[float] = []
    rows: list[dict[str, float]] = []
    past_logs: list[float] = []
    for i, day in enumerate(history):
        if day.continuous_volume <= 0:
            continue
        log_volume = float(np.log(day.continuous_volume))
        if len(past_logs) >= window:
            kept, _ = grubbs_filter(past_logs[-window:], alpha)
            prev = history[i - 1] if i > 0 else None
            context = history[max(0, i - 1 - VOLATILITY_WINDOW):i]
            dates.append(day.date)
            y.append(log_volume - float(np.mean(kept)))
            rows.append(special_day_features(prev, day, context, calendar))
        past_logs.append(log_volume)

    features = {name: np.array([row[name] for row in rows]) for name in SPECIAL_DAY_PREDICTORS}
    return DailyDesign(dates, np.array(y), features)


def excess_log_volumes(history: Sequence[DayRecord], window: int = PRIOR_WINDOW,
                       alpha: float = GRUBBS_ALPHA) -> np.ndarray:
    return daily_design(history, window, alpha).y


def special_day_regression(y: Sequence[float], predictors: Mapping[str, Sequence[float]],
                           spec: LossSpec = LossSpec(), *, min_rows: int = MIN_CALIBRATION_DAYS) -> dict[str, float]:
    """
    Regresses the excess log volume on the special-day predictors, without intercept.
    Predictors that never fire get a zero beta.
    """
    target = np.asarray(y, dtype=float)
    if target.size < min_rows:
        raise CalibrationError(f'{target.size} days are not enough for the special-day regression')
    betas = {name: 0.0 for name in predictors}
    active = [name for name, values in predictors.items() if np.any(np.asarray(values) != 0)]
    if not active:
        return betas
    design = np.column_stack([np.asarray(predictors[name], dtype=float) for name in active])
    for name, beta in zip(active, ale_regression(target, design, spec)):
        betas[name] = float(beta)
    logger.debug('special-day betas %s', betas)
    return betas


def pooled_special_day_regression(designs: Sequence[DailyDesign], spec: LossSpec = LossSpec()) -> dict[str, float]:
    """Cross-sectional fit over the stacked designs of several symbols"""
    if not designs:
        raise CalibrationError('no designs to pool')
    y = np.concatenate([d.y for d in designs])
    predictors = {name: np.concatenate([d.features[name] for d in designs]) for name in SPECIAL_DAY_PREDICTORS}
    return special_day_regression(y, predictors, spec)


def day_multiplier(betas: Mapping[str, float], features: Mapping[str, float]) -> float:
    """exp of the summed special-day effects, so simultaneous effects compound"""
    return float(np.exp(sum(beta * features.get(name, 0.0) for name, beta in betas.items())))


def build_prior(history: Sequence[DayRecord], arma: ArmaParams, betas: Mapping[str, float],
                today_features: Mapping[str, float], *, at: dt.date | None = None, window: int = PRIOR_WINDOW,
                alpha: float = GRUBBS_ALPHA, sigma_floor: float = SIGMA_FLOOR,
                design: DailyDesign | None = None, calendar: ExpiryCalendar | None = None) -> VolumePrior:
    """
    Prior for the log volume of the day `at`, using only days before it. `design` may
    carry a precomputed excess-volume series; only its dates before `at` are used.
    """
    logs = window_log_volumes(history, at, window, alpha)
    variance = float(np.var(logs, ddof=1)) if logs.size > 1 else 0.0
    if variance < sigma_floor ** 2:
        logger.debug('prior variance %.3g floored at %.3g', variance, sigma_floor ** 2)
        variance = sigma_floor ** 2

    adjustment = 0.0
    if not arma.is_null:
        past = [day for day in history if at is None or day.date < at]
        design = design.before(at) if design is not None and at is not None else design
        if design is None:
            design = daily_design(past, window, alpha, calendar)
        residual = design.residual(betas)
        if residual.size:
            adjustment = arma_forecast(residual, arma)

    mu0 = float(np.mean(logs)) + adjustment
    return VolumePrior(mu0, variance, day_multiplier(betas, today_features), window)
