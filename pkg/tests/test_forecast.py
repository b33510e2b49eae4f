import datetime as dt
import math

import numpy as np
import pytest

import volume_quintet.forecast as fc
from volume_quintet.auction import AuctionModel
from volume_quintet.bayes_intraday import BIN_MODEL, CUMULATIVE_MODEL, IntradayState
from volume_quintet.errors import ForecastError
from volume_quintet.prior_daily import VolumePrior
from volume_quintet.ucurve import VOLUME_PERCENTILE, Curve, CurveModel, FunctionalBetas, U_CURVE

DAY = dt.date(2024, 3, 14)


def flat_model(bins=4, betas: FunctionalBetas | None = None) -> CurveModel:
    base = Curve(np.full(bins, 1 / bins), U_CURVE).to_c()
    return CurveModel(base, betas or FunctionalBetas.zeros(bins))


def auction_model() -> AuctionModel:
    return AuctionModel(math.log(3), math.log(1e4))


def start_of_day(prior: VolumePrior, model: CurveModel, route=BIN_MODEL, **kwargs):
    state = IntradayState(prior, model.base, route, **kwargs)
    return state, fc.assemble(prior, state, model, auction_model(), 0, date=DAY, symbol='ABC')


def test_assemble_before_the_open():
    prior = VolumePrior(math.log(1e6), 0.04)
    state, forecast = start_of_day(prior, flat_model())
    assert forecast.total == pytest.approx(1e6)
    assert forecast.remaining == pytest.approx(1e6)
    assert forecast.traded == 0.0
    assert forecast.auction == pytest.approx(1e4)
    assert forecast.route == BIN_MODEL
    assert forecast.posterior_var == 0.04
    assert not forecast.deficit

    expiry = fc.assemble(prior, state, flat_model(), auction_model(), 0, date=DAY, expiry=True)
    assert expiry.auction == pytest.approx(3e4)


def test_assemble_through_the_day():
    prior = VolumePrior(math.log(1e6), 0.04)
    model = flat_model()
    state, forecast = start_of_day(prior, model)
    for j in range(4):
        state.observe(2.5e5, forecast.c_hat)
        forecast = fc.assemble(prior, state, model, auction_model(), j + 1, date=DAY)
        assert forecast.traded == pytest.approx(2.5e5 * (j + 1))
    assert forecast.remaining == 0.0
    assert forecast.day_estimate == pytest.approx(1e6)
    assert forecast.total == pytest.approx(1e6)


def test_assemble_checks_its_inputs():
    prior = VolumePrior(math.log(1e6), 0.04)
    model = flat_model()
    state, _ = start_of_day(prior, model)
    with pytest.raises(ForecastError) as info:
        fc.assemble(VolumePrior(math.log(1e6), 0.04), state, model, auction_model(), 0, date=DAY)
    assert info.value.module == 'prior_daily'
    with pytest.raises(ForecastError) as info:
        fc.assemble(prior, state, model, auction_model(), 2, date=DAY)
    assert info.value.module == 'bayes_intraday'
    with pytest.raises(ForecastError) as info:
        fc.assemble(prior, state, CurveModel(model.base, FunctionalBetas.zeros(5)), auction_model(), 0, date=DAY)
    assert info.value.module == 'ucurve'


def test_assemble_updates_curve_with_volume_rank():
    prior = VolumePrior(math.log(1e6), 0.04)
    tilt = np.vstack([np.zeros(4), np.linspace(0.1, 0.0, 4)])
    betas = FunctionalBetas(np.zeros(4), tilt, ('gap_ratio', VOLUME_PERCENTILE), np.array([0.0, 0.5]),
                            np.ones(2), np.zeros((2, 4)))
    model = flat_model(betas=betas)
    state = IntradayState(prior, model.base)
    heavy = fc.assemble(prior, state, model, auction_model(), 0, date=DAY, volume_history=[1e5] * 10)
    light = fc.assemble(prior, state, model, auction_model(), 0, date=DAY, volume_history=[1e7] * 10)
    plain = fc.assemble(prior, state, model, auction_model(), 0, date=DAY)
    assert heavy.c_hat.values[0] > plain.c_hat.values[0] > light.c_hat.values[0]


def test_deficit_is_flagged():
    prior = VolumePrior(math.log(1000), 0.04)
    model = flat_model()
    state, _ = start_of_day(prior, model, CUMULATIVE_MODEL, omega_sq=np.full(4, 100.0))
    state.observe(5000)
    forecast = fc.assemble(prior, state, model, auction_model(), 1, date=DAY)
    assert forecast.deficit
    assert forecast.total < forecast.traded


def test_interval_volume_and_participation():
    prior = VolumePrior(math.log(1e6), 0.04)
    _, forecast = start_of_day(prior, flat_model())
    assert fc.interval_volume(forecast, 0, 2) == pytest.approx(5e5)
    assert fc.interval_volume(forecast, 1, 4) == pytest.approx(7.5e5)
    assert fc.interval_volume(forecast, 2, 2) == 0.0
    assert fc.expected_participation(5e4, forecast, 0, 2) == pytest.approx(0.1)
    with pytest.raises(ForecastError):
        fc.expected_participation(5e4, forecast, 2, 2)
    with pytest.raises(ValueError):
        fc.interval_volume(forecast, 3, 1)
    with pytest.raises(ValueError):
        fc.interval_volume(forecast, 0, 5)


def test_end_time():
    prior = VolumePrior(math.log(1e6), 0.04)
    _, forecast = start_of_day(prior, flat_model())
    assert fc.end_time(5e4, 0.1, forecast, 0) == 2
    assert fc.end_time(2.5e4, 0.1, forecast, 0) == 1
    assert fc.end_time(0.0, 0.1, forecast, 3) == 3
    assert fc.end_time(2e5, 0.1, forecast, 0) is None
    with pytest.raises(ValueError):
        fc.end_time(1.0, 0.0, forecast, 0)


def test_remaining_and_realized_volume():
    assert fc.remaining_volume(math.log(1000), 0.25) == pytest.approx(750)
    assert fc.remaining_volume(math.log(1000), 1.0) == 0.0
    with pytest.raises(ValueError):
        fc.remaining_volume(1.0, 1.5)
    assert fc.realized_interval_volume([10, 20, 30, 40], 1, 3) == 50
    with pytest.raises(ValueError):
        fc.realized_interval_volume([10, 20], 2, 1)


def test_forecast_json():
    prior = VolumePrior(math.log(1e6), 0.04)
    _, forecast = start_of_day(prior, flat_model())
    data = forecast.to_json()
    assert data['date'] == '2024-03-14'
    assert data['symbol'] == 'ABC'
    assert data['as_of_bin'] == 0
    assert len(data['c_hat']) == 4


def test_interval_volume_is_additive():
    weights = 1.0 + 3.0 * np.linspace(-1.0, 1.0, 39) ** 2
    model = CurveModel(Curve(weights / weights.sum(), U_CURVE).to_c(), FunctionalBetas.zeros(39))
    prior = VolumePrior(math.log(2e6), 0.09)
    state, forecast = start_of_day(prior, model)
    for j in range(10):
        state.observe(6e4 * (1 + 0.1 * (j % 3)), forecast.c_hat)
    forecast = fc.assemble(prior, state, model, auction_model(), 10, date=DAY)

    rng = np.random.Generator(np.random.Philox(12))
    for _ in range(200):
        t1, t2, t3 = (int(t) for t in np.sort(rng.integers(0, 40, 3)))
        whole = fc.interval_volume(forecast, t1, t3)
        parts = fc.interval_volume(forecast, t1, t2) + fc.interval_volume(forecast, t2, t3)
        assert parts == pytest.approx(whole, rel=1e-9, abs=1e-9)
    assert fc.interval_volume(forecast, 0, 39) == pytest.approx(forecast.day_estimate, rel=1e-9)
