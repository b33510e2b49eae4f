"""
Statistical primitives shared by the models: log-normal diagnostics, geometric mean,
Grubbs outlier filter, the asymmetric logarithmic error (ALE) and regression under it.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy import stats as ss

from volume_quintet.errors import CalibrationError

logger = logging.getLogger(__name__)

GRUBBS_ALPHA = 0.05
GRUBBS_MIN_SAMPLE = 7
GRUBBS_MAX_FRACTION = 0.1
GRUBBS_RELATIVE_SPREAD = 1e-12


@dataclass(frozen=True)
class LossSpec:
    over_weight: float = 2.0
    under_weight: float = 1.0
    exponent: int = 1

    def __post_init__(self):
        if self.over_weight <= 0 or self.under_weight <= 0:
            raise ValueError('loss weights must be positive')
        if self.exponent not in (1, 2):
            raise ValueError(f'loss exponent must be 1 or 2, got {self.exponent}')

    @property
    def symmetric(self) -> bool:
        return self.over_weight == self.under_weight

    def to_json(self):
        return {'over_weight': self.over_weight, 'under_weight': self.under_weight, 'exponent': self.exponent}

    @staticmethod
    def from_json(data) -> LossSpec:
        return LossSpec(data['over_weight'], data['under_weight'], data['exponent'])


@dataclass(frozen=True)
class LogNormalFit:
    mu: float
    sigma: float
    n: int
    qq_points: list[tuple[float, float]] = field(repr=False)
    qq_correlation: float = 1.0

    @property
    def arithmetic_mean(self) -> float:
        return float(np.exp(self.mu + self.sigma ** 2 / 2))


def _positive_array(values: Sequence[float]) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        raise ValueError('empty volume list')
    if np.any(array <= 0):
        raise ValueError('volumes must be strictly positive')
    return array


def geometric_mean(volumes: Sequence[float]) -> float:
    return float(np.exp(np.mean(np.log(_positive_array(volumes)))))


def lognormal_fit(volumes: Sequence[float]) -> LogNormalFit:
    """
    Fits a normal distribution to log volumes and pairs standard-normal quantiles with
    the standardized sorted log values for a QQ diagnostic.
    """
    logs = np.log(_positive_array(volumes))
    if logs.size < 3:
        raise ValueError(f'log-normal fit needs at least 3 volumes, got {logs.size}')
    mu = float(np.mean(logs))
    sigma = float(np.std(logs, ddof=1))
    standardized = (logs - mu) / sigma if sigma > 0 else np.zeros_like(logs)
    theoretical, ordered = ss.probplot(standardized, dist='norm', fit=False)
    correlation = float(np.corrcoef(theoretical, ordered)[0, 1]) if sigma > 0 else 1.0
    points = [(float(q), float(v)) for q, v in zip(theoretical, ordered)]
    return LogNormalFit(mu, sigma, int(logs.size), points, correlation)


def grubbs_critical_value(n: int, alpha: float = GRUBBS_ALPHA) -> float:
    """Two-sided Grubbs critical value for a sample of size n"""
    t = ss.t.ppf(1 - alpha / (2 * n), n - 2)
    return float((n - 1) / np.sqrt(n) * np.sqrt(t ** 2 / (n - 2 + t ** 2)))


def grubbs_filter(logs: Sequence[float], alpha: float = GRUBBS_ALPHA,
                  max_removals: int | None = None) -> tuple[list[float], list[float]]:
    """
    Repeatedly removes the most extreme value while the Grubbs statistic exceeds its
    critical value. At most 10% of the sample (or `max_removals`) is removed; samples
    smaller than 7 pass through.
    """
    kept = [float(x) for x in logs]
    removed: list[float] = []
    if len(kept) < GRUBBS_MIN_SAMPLE:
        return kept, removed

    cap = int(GRUBBS_MAX_FRACTION * len(kept))
    if max_removals is not None:
        cap = min(cap, max_removals)
    while len(removed) < cap and len(kept) >= GRUBBS_MIN_SAMPLE:
        values = np.array(kept)
        sd = values.std(ddof=1)
        # rounding-level spread counts as constant
        if sd <= GRUBBS_RELATIVE_SPREAD * max(1.0, float(np.abs(values).max())):
            break
        deviations = np.abs(values - values.mean())
        worst = int(np.argmax(deviations))
        if deviations[worst] / sd <= grubbs_critical_value(len(values), alpha):
            break
        removed.append(kept.pop(worst))
    if removed:
        logger.debug('grubbs removed %s', removed)
    return kept, removed


def _paired(est_log: Sequence[float], true_log: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    est = np.asarray(est_log, dtype=float)
    true = np.asarray(true_log, dtype=float)
    if est.shape != true.shape:
        raise ValueError(f'length mismatch: {est.size} estimates, {true.size} observations')
    if est.size == 0:
        raise ValueError('no observations')
    return est, true


def ale_from_errors(errors: np.ndarray, spec: LossSpec) -> float:
    weights = np.where(errors > 0, spec.over_weight, spec.under_weight)
    return float(np.sum(weights * np.abs(errors) ** spec.exponent))


def ale(est_log: Sequence[float], true_log: Sequence[float], spec: LossSpec = LossSpec()) -> float:
    """Asymmetric logarithmic error; overestimates weigh `over_weight`"""
    est, true = _paired(est_log, true_log)
    return ale_from_errors(est - true, spec)


def report_metrics(est_log: Sequence[float], true_log: Sequence[float],
                   spec: LossSpec = LossSpec()) -> dict[str, float]:
    """ALE in log space next to RMSE and MAPE (percent) in share space"""
    est, true = _paired(est_log, true_log)
    est_volume = np.exp(est)
    true_volume = np.exp(true)
    return {
        'ale': ale_from_errors(est - true, spec),
        'rmse': float(np.sqrt(np.mean((est_volume - true_volume) ** 2))),
        'mape': float(np.mean(np.abs(est_volume - true_volume) / true_volume) * 100),
        'n': int(est.size),
    }


def sum_of_squares_decomposition(x: Sequence[float], mu: float) -> tuple[float, float]:
    """
    Both sides of sum((x - mu)^2) = n * var + n * (mean - mu)^2, var being the
    empirical (1/n) variance.
    """
    values = np.asarray(x, dtype=float)
    n = values.size
    lhs = float(np.sum((values - mu) ** 2))
    rhs = float(n * values.var() + n * (values.mean() - mu) ** 2)
    return lhs, rhs


def gaussian_log_likelihood(x: Sequence[float], mu: float, sigma_sq: float) -> float:
    values = np.asarray(x, dtype=float)
    n = values.size
    _, squares = sum_of_squares_decomposition(values, mu)
    return float(-n / 2 * np.log(2 * np.pi) - n / 2 * np.log(sigma_sq) - squares / (2 * sigma_sq))


def _check_design(y: np.ndarray, X: np.ndarray):
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError(f'design matrix shape {X.shape} does not match {y.size} observations')
    if X.shape[0] < X.shape[1] + 2:
        raise CalibrationError(f'{X.shape[0]} observations are not enough for {X.shape[1]} coefficients')
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise CalibrationError('rank-deficient design')


def ols(y: Sequence[float], X: np.ndarray) -> np.ndarray:
    coefficients, *_ = np.linalg.lstsq(np.asarray(X, dtype=float), np.asarray(y, dtype=float), rcond=None)
    return coefficients


def ale_regression(y: Sequence[float], X: np.ndarray, spec: LossSpec = LossSpec(),
                   *, max_iter: int = 200, tol: float = 1e-8) -> np.ndarray:
    """
    Linear regression minimizing the ALE of the fitted values against `y`.

    Squared loss is solved by iteratively reweighted least squares (an expectile
    regression); absolute loss is a weighted quantile regression, solved exactly as a
    linear program.
    """
    target = np.asarray(y, dtype=float)
    design = np.asarray(X, dtype=float)
    _check_design(target, design)

    if spec.exponent == 2:
        return _asymmetric_least_squares(target, design, spec, max_iter, tol)
    return _asymmetric_absolute(target, design, spec, max_iter)


def _asymmetric_least_squares(y, X, spec, max_iter, tol):
    beta = ols(y, X)
    if spec.symmetric:
        return beta
    for _ in range(max_iter):
        errors = X @ beta - y
        weights = np.sqrt(np.where(errors > 0, spec.over_weight, spec.under_weight))
        updated = ols(y * weights, X * weights[:, None])
        if np.max(np.abs(updated - beta)) < tol:
            return updated
        beta = updated
    raise CalibrationError(f'ALE regression did not converge in {max_iter} iterations')


def _asymmetric_absolute(y, X, spec, max_iter):
    # y - X b = under - over, both slacks non-negative
    n, k = X.shape
    cost = np.concatenate([np.zeros(k), np.full(n, spec.under_weight), np.full(n, spec.over_weight)])
    identity = sparse.identity(n, format='csr')
    equality = sparse.hstack([sparse.csr_matrix(X), identity, -identity], format='csr')
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    result = optimize.linprog(cost, A_eq=equality, b_eq=y, bounds=bounds, method='highs',
                              options={'maxiter': max(max_iter, 100 * (n + k))})
    if result.status != 0:
        raise CalibrationError(f'ALE regression did not converge: {result.message}')
    return result.x[:k]
