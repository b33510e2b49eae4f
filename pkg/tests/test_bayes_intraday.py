import datetime as dt
import math

import numpy as np
import pytest
from scipy import stats as ss

import volume_quintet.bayes_intraday as bi
from volume_quintet.bayes_intraday import BIN_MODEL, CUMULATIVE_MODEL, IntradayState, NormalGammaParams
from volume_quintet.errors import CalibrationError
from volume_quintet.marketdata import BinSeries
from volume_quintet.prior_daily import VolumePrior
from volume_quintet.synth import ScenarioSpec, generate, shape_curve
from volume_quintet.ucurve import Curve, U_CURVE


def flat_curve(bins: int) -> Curve:
    return Curve(np.full(bins, 1 / bins), U_CURVE).to_c()


def day_series(volumes, day=0) -> BinSeries:
    return BinSeries('ABC', dt.date(2024, 1, 1) + dt.timedelta(days=day), np.asarray(volumes, dtype=float))


def test_observations():
    assert bi.bin_observation(100.0, 0.1) == pytest.approx(math.log(1000))
    assert bi.bin_observation(0.0, 0.1) is None
    with pytest.raises(ValueError):
        bi.bin_observation(10.0, 0.0)
    with pytest.raises(ValueError):
        bi.bin_observation(-1.0, 0.1)

    assert bi.cumulative_observation(250.0, 0.25) == pytest.approx(math.log(1000))
    assert bi.cumulative_observation(0.0, 0.25) is None
    with pytest.raises(ValueError):
        bi.cumulative_observation(10.0, 0.0)


def test_unknown_variance_update():
    assert bi.kappa_from_fraction(0.5, 20) == 10.0
    assert bi.update_unknown_variance(10.0, 10.0, []) == 10.0
    assert bi.update_unknown_variance(10.0, 10.0, [12.0, 14.0]) == pytest.approx((100 + 26) / 12)
    with pytest.raises(ValueError):
        bi.update_unknown_variance(10.0, 0.0, [1.0])


def test_known_variance_update():
    prior = VolumePrior(10.0, 0.04)
    posterior = bi.update_known_variance(prior, [11.0, 11.2, 10.8], 0.09)
    precision = 1 / 0.04 + 3 / 0.09
    assert posterior.sigma_p_sq == pytest.approx(1 / precision)
    assert posterior.mu_p == pytest.approx((10 / 0.04 + 33 / 0.09) / precision)
    assert not posterior.floored

    floored = bi.update_known_variance(prior, [11.0, 11.0], 0.0)
    assert floored.floored
    assert floored.sigma_p_sq == pytest.approx(1 / (1 / 0.04 + 2 / 0.05 ** 2))

    assert bi.update_known_variance(prior, [], 0.1).mu_p == 10.0


def test_normal_gamma_marginal_matches_prior():
    prior = VolumePrior(12.0, 0.09)
    params = NormalGammaParams.from_prior(prior, 10.0)
    marginal = params.marginal()
    assert marginal.mean() == pytest.approx(12.0)
    # the t marginal has scale sigma0
    scale = (marginal.ppf(0.75) - 12.0) / ss.t.ppf(0.75, df=2 * params.alpha)
    assert scale == pytest.approx(0.3)


def test_normal_gamma_update_is_conjugate():
    prior = NormalGammaParams(1.0, 2.0, 3.0, 1.5)
    x = np.array([0.4, 1.9, 1.2, 0.7])
    posterior = bi.normal_gamma_update(prior, x)

    def unnormalized(mu, lam):
        likelihood = ss.norm.logpdf(x, loc=mu, scale=1 / np.sqrt(lam)).sum()
        return prior.logpdf(mu, lam) + likelihood

    # prior times likelihood and the posterior density differ by a constant
    points = [(0.5, 1.0), (1.2, 0.4), (2.0, 3.0), (-0.3, 2.2)]
    offsets = [unnormalized(mu, lam) - posterior.logpdf(mu, lam) for mu, lam in points]
    assert offsets == pytest.approx([offsets[0]] * len(points))

    assert posterior.mu == pytest.approx(bi.update_unknown_variance(1.0, 2.0, x))
    assert bi.normal_gamma_update(prior, []) == prior


def test_normal_gamma_posterior_by_integration():
    prior = NormalGammaParams(0.0, 1.0, 2.0, 2.0)
    x = np.array([0.8, 1.1, 0.5])
    posterior = bi.normal_gamma_update(prior, x)

    mus = np.linspace(-4, 5, 361)
    lams = np.linspace(1e-3, 8, 400)
    mu_grid, lam_grid = np.meshgrid(mus, lams, indexing='ij')
    log_density = (ss.gamma.logpdf(lam_grid, a=prior.alpha, scale=1 / prior.beta)
                   + ss.norm.logpdf(mu_grid, loc=prior.mu, scale=1 / np.sqrt(prior.kappa * lam_grid)))
    for value in x:
        log_density += ss.norm.logpdf(value, loc=mu_grid, scale=1 / np.sqrt(lam_grid))
    density = np.exp(log_density - log_density.max())
    mu_marginal = density.sum(axis=1)
    mu_marginal /= mu_marginal.sum()
    assert np.sum(mus * mu_marginal) == pytest.approx(posterior.mu, abs=1e-3)
    assert np.sum(mus ** 2 * mu_marginal) - posterior.mu ** 2 == pytest.approx(posterior.marginal().var(), rel=0.02)


def test_cumulative_update():
    prior = VolumePrior(10.0, 0.04)
    posterior = bi.update_cumulative(prior, 11.0, 0.01)
    assert posterior.mu_p == pytest.approx((10 / 0.04 + 11 / 0.01) / (1 / 0.04 + 1 / 0.01))
    assert bi.update_cumulative(prior, 11.0, 0.0).floored


def test_cumulative_log_estimates():
    z = bi.cumulative_log_estimates(day_series([0, 50, 50, 100]), flat_curve(4))
    assert math.isnan(z[0])
    assert z[1:] == pytest.approx([math.log(200), math.log(200), math.log(200)])


def test_dispersion_profile():
    totals = np.full(20, 5.0)
    z = np.tile([5.0, 5.0, 5.0], (20, 1))
    z[::2, 0] += 0.2
    z[1::2, 0] -= 0.2
    z[:, 2] = np.nan
    omega = bi.dispersion_profile(z, totals)
    assert omega[0] == pytest.approx(0.04)
    assert omega[1] == 0.0
    # never-defined bins take the widest dispersion
    assert omega[2] == pytest.approx(0.04)
    with pytest.raises(CalibrationError):
        bi.dispersion_profile(z[:5], totals[:5])


def test_dispersion_from_history():
    bins = [day_series([10, 10, 10, 10], d) for d in range(30)]
    omega = bi.dispersion_from_history(bins, flat_curve(4))
    assert omega == pytest.approx(np.zeros(4))
    with pytest.raises(CalibrationError):
        bi.dispersion_from_history(bins[:10], flat_curve(4))


def test_routing():
    full = [day_series([10] * 20, d) for d in range(30)]
    assert bi.route_symbol(full) == BIN_MODEL

    # exactly 5% empty bins stays on the bin model
    edge = [day_series([0] + [10] * 19, d) for d in range(30)]
    assert bi.zero_bin_fraction(edge) == pytest.approx(0.05)
    assert bi.route_symbol(edge) == BIN_MODEL

    sparse = [day_series([0, 0] + [10] * 18, d) for d in range(30)]
    assert bi.route_symbol(sparse) == CUMULATIVE_MODEL
    assert bi.route_symbol(full[:10]) == CUMULATIVE_MODEL


def test_state_prior_before_first_bin():
    prior = VolumePrior(10.0, 0.04, multiplier=2.0)
    state = IntradayState(prior, flat_curve(10))
    assert state.kappa0 == pytest.approx(10.0)
    posterior = state.posterior()
    assert posterior.mu_p == pytest.approx(prior.log_mean)
    assert posterior.sigma_p_sq == 0.04


def test_state_unknown_variance_regime():
    prior = VolumePrior(10.0, 0.04)
    state = IntradayState(prior, flat_curve(10), kappa0=4.0)
    for _ in range(3):
        state.observe(math.exp(11.0) / 10)
    posterior = state.posterior()
    assert state.bins_seen == 3
    assert posterior.mu_p == pytest.approx((10 * 4 + 3 * 11) / 7)
    assert posterior.sigma_p_sq == pytest.approx(0.04 * 4 / 7)


def test_state_drops_outlying_bins():
    prior = VolumePrior(10.0, 0.04)
    state = IntradayState(prior, flat_curve(20))
    offsets = [0.0, 0.01, -0.01, 0.02, -0.02, 0.0, 0.01, -0.01, 0.0, 0.02, -0.02, 3.0]
    for offset in offsets:
        state.observe(math.exp(10.5 + offset) / 20)
    posterior = state.posterior()
    assert posterior.mu_p == pytest.approx(10.5, abs=0.01)


def test_state_reroutes_on_empty_bins():
    prior = VolumePrior(10.0, 0.04)
    state = IntradayState(prior, flat_curve(20))
    for volume in [1000, 0, 1000, 1000, 1000]:
        state.observe(volume)
    assert state.route == BIN_MODEL
    state.observe(1000)
    assert state.route == CUMULATIVE_MODEL
    assert state.rerouted
    assert state.cum_volume == 5000
    # five traded bins carry no more evidence than the bin model gives them
    expected = bi.update_cumulative(prior, math.log(5000 / 0.3), prior.sigma0_sq * state.kappa0 / 5)
    assert state.posterior().mu_p == pytest.approx(expected.mu_p)


def test_state_input_checks():
    state = IntradayState(VolumePrior(10.0, 0.04), flat_curve(2))
    with pytest.raises(ValueError):
        state.observe(-1.0)
    state.observe(1.0)
    state.observe(1.0)
    with pytest.raises(ValueError):
        state.observe(1.0)
    with pytest.raises(ValueError):
        IntradayState(VolumePrior(10.0, 0.04), flat_curve(2), 'other')


def test_cumulative_state_uses_bin_dispersion():
    prior = VolumePrior(10.0, 0.04)
    omega = np.array([0.5, 0.1, 0.02, 0.0])
    state = IntradayState(prior, flat_curve(4), CUMULATIVE_MODEL, omega_sq=omega, kappa0=0.5)
    assert state.posterior().mu_p == 10.0
    state.observe(0.0)
    assert state.posterior().mu_p == 10.0
    state.observe(math.exp(11.0) / 2)
    expected = bi.update_cumulative(prior, 11.0, 0.1)
    assert state.posterior().mu_p == pytest.approx(expected.mu_p)
    assert state.posterior().sigma_p_sq == pytest.approx(expected.sigma_p_sq)


def test_models_agree_on_noiseless_days():
    spec = ScenarioSpec(n_days=5, sigma_log=0.0, bin_noise=0.0, beta_gap=0.0)
    market = generate(spec)
    curve = shape_curve(spec.curve_shape, market.bins[0].volumes.size).to_c()
    for series in market.bins:
        log_total = math.log(series.total)
        # prior half a log unit below the realized volume
        prior = VolumePrior(log_total - 0.5, 0.09)
        by_bin = IntradayState(prior, curve, BIN_MODEL)
        by_sum = IntradayState(prior, curve, CUMULATIVE_MODEL, omega_sq=np.zeros(curve.bin_count))
        for volume in series.volumes:
            by_bin.observe(volume)
            by_sum.observe(volume)
            assert by_sum.posterior().mu_p == pytest.approx(by_bin.posterior().mu_p, abs=1e-9)
            assert by_sum.posterior().sigma_p_sq == pytest.approx(by_bin.posterior().sigma_p_sq, rel=1e-9)
        assert by_bin.posterior().mu_p == pytest.approx(log_total, abs=1e-3)
        assert by_sum.posterior().mu_p == pytest.approx(log_total, abs=1e-3)


def test_evidence_variance():
    state = IntradayState(VolumePrior(10.0, 0.04), flat_curve(10), kappa0=4.0)
    assert state.evidence_variance(2) == pytest.approx(0.04 * 4 / 2)
    assert state.evidence_variance(8) == pytest.approx(0.05 ** 2 / 8)
    with pytest.raises(ValueError):
        state.evidence_variance(0)


@pytest.mark.timeout(120)
def test_bin_model_converges_to_realized_volume():
    spec = ScenarioSpec(n_days=200, sigma_log=0.4, bin_noise=0.2)
    market = generate(spec)
    curve = shape_curve(spec.curve_shape, market.bins[0].volumes.size).to_c()
    rng = np.random.Generator(np.random.Philox(17))
    offsets = rng.normal(0.0, 0.8, len(market.bins))
    closer = 0
    for series, offset in zip(market.bins, offsets):
        log_total = math.log(series.total)
        state = IntradayState(VolumePrior(log_total + offset, 0.16), curve)
        for j, volume in enumerate(series.volumes):
            state.observe(volume)
            if j == 4:
                early = abs(state.posterior().mu_p - log_total)
        late = abs(state.posterior().mu_p - log_total)
        closer += late < early
    assert closer >= 190


def test_bin_model_full_day_is_unbiased():
    spec = ScenarioSpec(n_days=200, sigma_log=0.4, bin_noise=0.2, seed=3)
    market = generate(spec)
    curve = shape_curve(spec.curve_shape, market.bins[0].volumes.size).to_c()
    errors = []
    for series in market.bins:
        log_total = math.log(series.total)
        state = IntradayState(VolumePrior(log_total, 0.16), curve)
        for volume in series.volumes:
            state.observe(volume)
        errors.append(state.posterior().mu_p - log_total)
    # without the half-variance shift the mean error sits near -0.02
    assert abs(np.mean(errors)) < 0.005


@pytest.mark.timeout(60)
def test_known_variance_update_by_grid_integration():
    rng = np.random.Generator(np.random.Philox(41))
    for _ in range(100):
        prior = VolumePrior(rng.uniform(5.0, 15.0), rng.uniform(0.01, 0.5))
        sample_var = rng.uniform(0.01, 0.5)
        x = prior.mu0 + rng.normal(0.0, 0.8, int(rng.integers(1, 11)))
        posterior = bi.update_known_variance(prior, x, sample_var)

        half_width = abs(prior.mu0 - x.mean()) + 14 * math.sqrt(prior.sigma0_sq)
        mus = np.linspace(-half_width, half_width, 40001) + (prior.mu0 + x.mean()) / 2
        log_density = -(mus - prior.mu0) ** 2 / (2 * prior.sigma0_sq)
        log_density -= ((x[None, :] - mus[:, None]) ** 2).sum(axis=1) / (2 * sample_var)
        weights = np.exp(log_density - log_density.max())
        weights /= weights.sum()
        mean = np.sum(weights * mus)
        assert posterior.mu_p == pytest.approx(mean, rel=1e-6)
        assert posterior.sigma_p_sq == pytest.approx(np.sum(weights * (mus - mean) ** 2), rel=1e-5)


@pytest.mark.timeout(120)
def test_normal_gamma_update_by_grid_integration():
    rng = np.random.Generator(np.random.Philox(43))
    log_lams = np.arange(-40.0, 6.0, 0.015)
    lams = np.exp(log_lams)[:, None]
    steps = np.linspace(-1.0, 1.0, 801)[None, :]
    for _ in range(100):
        prior = NormalGammaParams(rng.uniform(5.0, 15.0), rng.uniform(0.5, 5.0), rng.uniform(1.5, 4.0),
                                  rng.uniform(0.5, 3.0))
        x = prior.mu + rng.standard_normal(int(rng.integers(1, 6)))
        n, xbar = x.size, x.mean()
        posterior = bi.normal_gamma_update(prior, x)

        # per-precision mu grid wide enough for the prior conditional at that precision
        half_width = abs(prior.mu - xbar) + 14 / np.sqrt(prior.kappa * lams)
        mus = (prior.mu + xbar) / 2 + half_width * steps
        squares = n * (mus - xbar) ** 2 + np.sum((x - xbar) ** 2)
        log_density = ((prior.alpha - 0.5 + n / 2) * np.log(lams) - prior.beta * lams
                       - lams * (prior.kappa * (mus - prior.mu) ** 2 + squares) / 2)
        # d mu d lambda = (mu step) (lambda) d log lambda
        weights = np.exp(log_density - log_density.max()) * half_width * lams
        weights /= weights.sum()
        mean = np.sum(weights * mus)
        variance = np.sum(weights * (mus - mean) ** 2)

        assert posterior.mu == pytest.approx(mean, rel=1e-6)
        assert bi.update_unknown_variance(prior.mu, prior.kappa, x) == pytest.approx(mean, rel=1e-6)
        assert posterior.marginal().var() == pytest.approx(variance, rel=1e-5)
        assert posterior.alpha / posterior.beta == pytest.approx(np.sum(weights * lams), rel=1e-6)


def test_dispersion_profile_shrinks_with_noise():
    rng = np.random.Generator(np.random.Philox(29))
    totals = rng.normal(13.0, 0.5, 60)
    schedule = np.linspace(0.5, 0.05, 39)
    draws = rng.standard_normal(60)
    z = totals[:, None] + schedule[None, :] * draws[:, None]
    omega = bi.dispersion_profile(z, totals)
    assert np.all(np.diff(omega) <= 0)
    assert omega[0] == pytest.approx(0.25 * np.var(draws), rel=1e-6)
