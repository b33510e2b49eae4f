"""
Conjugate Bayesian updating of today's log volume from intraday evidence.

Liquid symbols use the bin model: every bin gives an estimate x(j) = ln(v(j)/u(j)) of
the day's log volume. Illiquid symbols use the cumulative model: the volume traded
so far, scaled by the c-curve, gives a single estimate z(n) whose dispersion is
calibrated per bin from history.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats as ss

from volume_quintet.errors import CalibrationError
from volume_quintet.marketdata import BinSeries
from volume_quintet.prior_daily import VolumePrior
from volume_quintet.stats import grubbs_filter
from volume_quintet.ucurve import Curve

logger = logging.getLogger(__name__)

BIN_MODEL = 'bin_model'
CUMULATIVE_MODEL = 'cumulative_model'
ROUTES = (BIN_MODEL, CUMULATIVE_MODEL)

KAPPA_FRACTION = 0.5
MIN_BINS_FOR_VARIANCE = 6
VARIANCE_FLOOR = 0.05 ** 2
OMEGA_FLOOR = 0.01 ** 2
ZERO_BIN_THRESHOLD = 0.05
DISPERSION_DAYS = 60
MIN_HISTORY_DAYS = 20
INTRADAY_MAX_REMOVALS = 2


@dataclass(frozen=True)
class GaussianPosterior:
    mu_p: float
    sigma_p_sq: float
    floored: bool = False

    def __post_init__(self):
        if not self.sigma_p_sq > 0:
            raise ValueError('posterior variance must be positive')

    def to_json(self):
        return {'mu_p': self.mu_p, 'sigma_p_sq': self.sigma_p_sq, 'floored': self.floored}


@dataclass(frozen=True)
class NormalGammaParams:
    """mu | lambda ~ N(mu, 1/(kappa lambda)), lambda ~ Gamma(alpha, rate=beta)"""
    mu: float
    kappa: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.alpha > 0 and self.beta > 0):
            raise ValueError('normal-gamma kappa, alpha and beta must be positive')

    @staticmethod
    def from_prior(prior: VolumePrior, kappa0: float) -> NormalGammaParams:
        """Normal-gamma whose marginal for the mean is centered on the prior with scale sigma0"""
        alpha = kappa0 / 2
        beta = kappa0 ** 2 * prior.sigma0_sq / 2
        return NormalGammaParams(prior.log_mean, kappa0, alpha, beta)

    def marginal(self):
        """Student-t marginal of the mean"""
        return ss.t(df=2 * self.alpha, loc=self.mu, scale=np.sqrt(self.beta / (self.alpha * self.kappa)))

    def logpdf(self, mu: float, lam: float) -> float:
        return float(ss.gamma.logpdf(lam, a=self.alpha, scale=1 / self.beta)
                     + ss.norm.logpdf(mu, loc=self.mu, scale=1 / np.sqrt(self.kappa * lam)))


def bin_observation(v_j: float, u_hat_j: float) -> float | None:
    """Estimate of the day's log volume from one bin; None for an empty bin"""
    if u_hat_j <= 0:
        raise ValueError(f'bin fraction must be positive, got {u_hat_j}')
    if v_j < 0:
        raise ValueError('negative bin volume')
    if v_j == 0:
        return None
    return float(np.log(v_j / u_hat_j))


def cumulative_observation(cum_volume: float, c_hat_t: float) -> float | None:
    """Estimate of the day's log volume from the volume traded so far; None before the first trade"""
    if c_hat_t <= 0:
        raise ValueError(f'cumulative fraction must be positive, got {c_hat_t}')
    if cum_volume < 0:
        raise ValueError('negative cumulative volume')
    if cum_volume == 0:
        return None
    return float(np.log(cum_volume / c_hat_t))


def kappa_from_fraction(fraction: float, n_prior: int) -> float:
    return fraction * n_prior


def update_unknown_variance(prior_mu: float, kappa0: float, obs: Sequence[float]) -> float:
    if kappa0 <= 0:
        raise ValueError('kappa0 must be positive')
    x = np.asarray(obs, dtype=float)
    if x.size == 0:
        return prior_mu
    return float((prior_mu * kappa0 + x.sum()) / (kappa0 + x.size))


def update_known_variance(prior: VolumePrior, obs: Sequence[float], sample_var: float,
                          var_floor: float = VARIANCE_FLOOR) -> GaussianPosterior:
    """Precision-weighted average of the prior mean and the sample mean"""
    x = np.asarray(obs, dtype=float)
    if x.size == 0:
        return GaussianPosterior(prior.log_mean, prior.sigma0_sq)
    floored = sample_var < var_floor
    variance = max(sample_var, var_floor)
    precision = 1 / prior.sigma0_sq + x.size / variance
    mu_p = (prior.log_mean / prior.sigma0_sq + x.sum() / variance) / precision
    return GaussianPosterior(float(mu_p), float(1 / precision), floored)


def normal_gamma_update(prior: NormalGammaParams, obs: Sequence[float]) -> NormalGammaParams:
    x = np.asarray(obs, dtype=float)
    n = x.size
    if n == 0:
        return prior
    mean = x.mean()
    kappa_n = prior.kappa + n
    return NormalGammaParams(
        mu=float((prior.kappa * prior.mu + n * mean) / kappa_n),
        kappa=float(kappa_n),
        alpha=prior.alpha + n / 2,
        beta=float(prior.beta + 0.5 * np.sum((x - mean) ** 2)
                   + prior.kappa * n * (mean - prior.mu) ** 2 / (2 * kappa_n)),
    )


def update_cumulative(prior: VolumePrior, z_n: float, omega_sq_n: float,
                      omega_floor: float = OMEGA_FLOOR) -> GaussianPosterior:
    floored = omega_sq_n < omega_floor
    omega_sq = max(omega_sq_n, omega_floor)
    precision = 1 / prior.sigma0_sq + 1 / omega_sq
    mu_p = (prior.log_mean / prior.sigma0_sq + z_n / omega_sq) / precision
    return GaussianPosterior(float(mu_p), float(1 / precision), floored)


def cumulative_log_estimates(series: BinSeries, curve: Curve) -> np.ndarray:
    """z(n) after every bin of a history day; NaN while nothing has traded"""
    cumulative = np.cumsum(series.volumes)
    c = curve.to_c().values
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.log(cumulative / c)
    z[(cumulative <= 0) | (c <= 0)] = np.nan
    return z


def dispersion_profile(z: np.ndarray, totals: Sequence[float], min_days: int = MIN_HISTORY_DAYS) -> np.ndarray:
    """
    Per-bin variance across days of z(n) - X, X being the realized log volume. Bins
    with no defined z on any day take the largest dispersion seen.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = np.asarray(totals, dtype=float)
    if z.shape[0] < min_days:
        raise CalibrationError(f'{z.shape[0]} days are not enough for the dispersion profile')
    errors = z - x[:, None]
    defined = np.sum(np.isfinite(errors), axis=0)
    omega = np.zeros(z.shape[1])
    omega[defined > 0] = np.nanvar(errors[:, defined > 0], axis=0)
    if np.any(defined == 0):
        omega[defined == 0] = omega[defined > 0].max() if np.any(defined > 0) else 0.0
    return omega


def dispersion_from_history(bins: Sequence[BinSeries], curve: Curve, window: int = DISPERSION_DAYS,
                            min_days: int = MIN_HISTORY_DAYS) -> np.ndarray:
    days = [series for series in bins[-window:] if series.total > 0]
    if len(days) < min_days:
        raise CalibrationError(f'{len(days)} days are not enough for the dispersion profile')
    z = np.vstack([cumulative_log_estimates(series, curve) for series in days])
    return dispersion_profile(z, np.log([series.total for series in days]), min_days)


def zero_bin_fraction(bins: Sequence[BinSeries]) -> float:
    total_bins = sum(len(series.volumes) for series in bins)
    return sum(series.zero_bins for series in bins) / total_bins if total_bins else 1.0


def route_symbol(bins: Sequence[BinSeries], threshold: float = ZERO_BIN_THRESHOLD,
                 window: int = DISPERSION_DAYS, min_days: int = MIN_HISTORY_DAYS) -> str:
    """Bin model unless the share of empty bins over the window is above the threshold"""
    recent = bins[-window:]
    if len(recent) < min_days:
        logger.warning('%d days of bins, routing to the cumulative model', len(recent))
        return CUMULATIVE_MODEL
    fraction = zero_bin_fraction(recent)
    route = CUMULATIVE_MODEL if fraction > threshold else BIN_MODEL
    logger.info('zero-bin fraction %.3f, routed to %s', fraction, route)
    return route


class IntradayState:
    """
    Bayesian state of one symbol over one day. Bins must be observed in order, and the
    curve passed with each bin must be built from data before that bin.
    """
    __slots__ = ('route', 'prior', 'curve', 'kappa0', 'omega_sq', 'threshold', 'var_floor', 'omega_floor',
                 'bin_estimates', 'cum_volume', 'bins_elapsed', 'zero_bins', 'rerouted')

    def __init__(self, prior: VolumePrior, curve: Curve, route: str = BIN_MODEL, *,
                 kappa0: float | None = None, omega_sq: np.ndarray | None = None,
                 threshold: float = ZERO_BIN_THRESHOLD, var_floor: float = VARIANCE_FLOOR,
                 omega_floor: float = OMEGA_FLOOR):
        if route not in ROUTES:
            raise ValueError(f'unknown route {route}')
        self.route = route
        self.prior = prior
        self.curve = curve
        self.kappa0 = kappa0 if kappa0 is not None else kappa_from_fraction(KAPPA_FRACTION, prior.source_window)
        self.omega_sq = omega_sq if omega_sq is not None else np.full(curve.bin_count, prior.sigma0_sq)
        self.threshold = threshold
        self.var_floor = var_floor
        self.omega_floor = omega_floor
        self.bin_estimates: list[float] = []
        self.cum_volume = 0.0
        self.bins_elapsed = 0
        self.zero_bins = 0
        self.rerouted = False

    @property
    def bins_seen(self) -> int:
        return len(self.bin_estimates)

    def observe(self, volume: float, curve: Curve | None = None):
        if volume < 0:
            raise ValueError('negative bin volume')
        if curve is not None:
            self.curve = curve
        j = self.bins_elapsed
        if j >= self.curve.bin_count:
            raise ValueError('all bins of the session already observed')
        self.bins_elapsed += 1
        self.cum_volume += volume

        u_hat = float(self.curve.to_u().values[j])
        if volume == 0:
            self.zero_bins += 1
        elif u_hat > 0:
            self.bin_estimates.append(bin_observation(volume, u_hat))
        logger.debug('bin %d: volume %.0f, u %.4f, cumulative %.0f', j, volume, u_hat, self.cum_volume)

        if (self.route == BIN_MODEL and self.bins_elapsed >= MIN_BINS_FOR_VARIANCE
                and self.zero_bins / self.bins_elapsed > self.threshold):
            logger.warning('%d of %d bins empty, switching to the cumulative model', self.zero_bins, self.bins_elapsed)
            self.route = CUMULATIVE_MODEL
            self.rerouted = True

    def posterior(self) -> GaussianPosterior:
        if self.route == BIN_MODEL:
            return self._bin_posterior()
        return self._cumulative_posterior()

    def _bin_posterior(self) -> GaussianPosterior:
        kept, _ = grubbs_filter(self.bin_estimates, max_removals=INTRADAY_MAX_REMOVALS)
        n = len(kept)
        if n == 0:
            return GaussianPosterior(self.prior.log_mean, self.prior.sigma0_sq)
        if n < MIN_BINS_FOR_VARIANCE:
            mu = update_unknown_variance(self.prior.log_mean, self.kappa0, kept)
            return GaussianPosterior(mu, self.prior.sigma0_sq * self.kappa0 / (self.kappa0 + n))
        sample_var = float(np.var(kept, ddof=1))
        # mean of ln(v/u) sits half a variance below ln of the mean ratio
        shifted = np.asarray(kept) + sample_var / 2
        return update_known_variance(self.prior, shifted, sample_var, self.var_floor)

    def evidence_variance(self, n: int) -> float:
        """
        Observation variance carried by n consistent bins in the bin model: sigma0^2 kappa0 / n
        before the sample variance is usable, the variance floor over n after.
        """
        if n <= 0:
            raise ValueError('evidence needs at least one bin')
        if n < MIN_BINS_FOR_VARIANCE:
            return self.prior.sigma0_sq * self.kappa0 / n
        return self.var_floor / n

    def _cumulative_posterior(self) -> GaussianPosterior:
        traded_bins = self.bins_elapsed - self.zero_bins
        if traded_bins == 0:
            return GaussianPosterior(self.prior.log_mean, self.prior.sigma0_sq)
        c_hat = self.curve.at(self.bins_elapsed)
        if c_hat <= 0:
            return GaussianPosterior(self.prior.log_mean, self.prior.sigma0_sq)
        z = cumulative_observation(self.cum_volume, c_hat)
        if z is None:
            return GaussianPosterior(self.prior.log_mean, self.prior.sigma0_sq)
        # z(n) is never trusted more than the same bins would be in the bin model
        evidence = self.evidence_variance(traded_bins)
        omega_sq = max(float(self.omega_sq[self.bins_elapsed - 1]), evidence)
        return update_cumulative(self.prior, z, omega_sq, min(self.omega_floor, evidence))

    def to_json(self):
        return {
            'route': self.route,
            'prior': self.prior.to_json(),
            'kappa0': self.kappa0,
            'bin_estimates': list(self.bin_estimates),
            'cum_volume': self.cum_volume,
            'bins_elapsed': self.bins_elapsed,
            'zero_bins': self.zero_bins,
            'rerouted': self.rerouted,
        }
