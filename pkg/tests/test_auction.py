import datetime as dt
import math

import numpy as np
import pandas as pd
import pytest

import volume_quintet.auction as au
from volume_quintet.auction import AuctionModel, ExpiryCalendar
from volume_quintet.errors import CalibrationError, DataError
from volume_quintet.marketdata import DayRecord
from volume_quintet.synth import ScenarioSpec, generate


def business_days(n: int, start='2023-01-02') -> list[dt.date]:
    return [ts.date() for ts in pd.bdate_range(start, periods=n)]


def auction_history(n: int, base=1000.0, expiry_factor=3.0, calendar=ExpiryCalendar()) -> list[DayRecord]:
    days = []
    for date in business_days(n):
        day = DayRecord('ABC', date, 10.0, 10.0, 10_000.0, base)
        auction = base * expiry_factor if calendar.is_expiry(day) else base
        days.append(DayRecord('ABC', date, 10.0, 10.0, 10_000.0 + auction, auction))
    return days


def test_triple_witching():
    assert au.is_triple_witching(dt.date(2024, 3, 15))
    assert au.is_triple_witching(dt.date(2024, 6, 21))
    assert not au.is_triple_witching(dt.date(2024, 3, 22))
    assert not au.is_triple_witching(dt.date(2024, 4, 19))
    assert not au.is_triple_witching(dt.date(2024, 3, 14))


def test_triple_witching_four_times_a_year():
    dates = [ts.date() for ts in pd.date_range('2010-01-01', '2030-12-31')]
    fired = pd.Series([d.year for d in dates if au.is_triple_witching(d)]).value_counts()
    assert sorted(fired.index) == list(range(2010, 2031))
    assert (fired == 4).all()
    for date in dates:
        if au.is_triple_witching(date):
            assert date.month in (3, 6, 9, 12)
            assert date.weekday() == 4


def test_expiry_calendar():
    regular = DayRecord('ABC', dt.date(2024, 3, 14), 10, 10, 100, 10)
    witching = DayRecord('ABC', dt.date(2024, 3, 15), 10, 10, 100, 10)
    flagged = DayRecord('ABC', dt.date(2024, 3, 14), 10, 10, 100, 10, frozenset({'optexp'}))

    calendar = ExpiryCalendar()
    assert calendar.is_expiry(witching)
    assert not calendar.is_expiry(regular)
    assert calendar.is_expiry(flagged)

    custom = ExpiryCalendar([dt.date(2024, 3, 14)])
    assert custom.is_expiry(regular)
    assert not custom.is_expiry(witching)

    assert ExpiryCalendar.from_json(custom.to_json()).is_expiry(regular)
    assert ExpiryCalendar.from_json(None).is_expiry(witching)


def test_load_expiry_calendar(tmp_path):
    path = tmp_path / 'expiry.csv'
    path.write_text('date,label\n2024-03-14,monthly\n2024-04-18,monthly\n')
    calendar = ExpiryCalendar.load(path)
    assert calendar.is_expiry(DayRecord('ABC', dt.date(2024, 4, 18), 10, 10, 100, 10))

    path.write_text('day\n2024-03-14\n')
    with pytest.raises(DataError, match='expected header'):
        ExpiryCalendar.load(path)
    path.write_text('date,label\n14/03/2024,x\n')
    with pytest.raises(DataError):
        ExpiryCalendar.load(path)
    with pytest.raises(DataError, match='not found'):
        ExpiryCalendar.load(tmp_path / 'missing.csv')


def test_rolling_auction_mean():
    days = auction_history(30, expiry_factor=1.0)
    days[-1] = DayRecord('ABC', days[-1].date, 10, 10, 10_000, 0)
    at = days[-1].date + dt.timedelta(days=1)
    assert au.rolling_auction_mean(days, at) == pytest.approx(math.log(1000))
    with pytest.raises(DataError):
        au.rolling_auction_mean(days, days[0].date)


def test_auction_seasonality_on_constant_history():
    days = auction_history(400)
    model = au.fit_auction_seasonality(days)
    assert model.beta_expiry == pytest.approx(math.log(3), abs=1e-9)
    assert model.expiry_multiplier == pytest.approx(3.0)
    assert model.expiry_days > 0

    model = au.fit_auction_seasonality(days, exclude_expiry=True)
    assert model.mu_a == pytest.approx(math.log(1000))
    assert model.exclude_expiry


def test_auction_seasonality_without_expiry_days():
    calendar = ExpiryCalendar([])
    model = au.fit_auction_seasonality(auction_history(100, calendar=calendar), calendar=calendar)
    assert model.beta_expiry == 0.0
    assert model.expiry_days == 0


def test_auction_seasonality_short_history():
    with pytest.raises(CalibrationError):
        au.fit_auction_seasonality(auction_history(22))


@pytest.mark.timeout(60)
def test_auction_seasonality_on_synthetic_market():
    spec = ScenarioSpec(n_days=2520, sigma_log=0.05, auction_noise=0.05, phi=0.0, theta=0.0, beta_gap=0.0)
    market = generate(spec)
    model = au.fit_auction_seasonality(market.days)
    assert model.beta_expiry == pytest.approx(math.log(3), abs=0.05)
    assert model.expiry_multiplier == pytest.approx(3.0, rel=0.06)


def test_predict_auction():
    model = AuctionModel(math.log(3), math.log(1000))
    assert au.predict_auction(model, dt.date(2024, 3, 14)) == pytest.approx(1000)
    assert au.predict_auction(model, dt.date(2024, 3, 15)) == pytest.approx(3000)
    assert au.predict_auction(model, dt.date(2024, 3, 14), expiry=True) == pytest.approx(3000)


def test_auction_model_roll_and_json():
    model = AuctionModel(0.5, 2.0, window=5, beta_stderr=0.1, expiry_days=4)
    assert AuctionModel.from_json(model.to_json()) == model

    days = auction_history(30, base=500.0, expiry_factor=1.0)
    rolled = model.rolled(days, days[-1].date)
    assert rolled.mu_a == pytest.approx(math.log(500))
    assert rolled.beta_expiry == 0.5
    with pytest.raises(ValueError):
        AuctionModel(float('nan'), 0.0)


def test_auction_allocation():
    assert au.auction_allocation(10_000, 50_000) == pytest.approx(1200)
    assert au.auction_allocation(100_000, 50_000) == pytest.approx(6000)
    assert au.auction_allocation(0, 50_000) == 0.0
    with pytest.raises(ValueError):
        au.auction_allocation(-1, 10)


def test_special_day_auction_slope():
    dates = business_days(150)
    expiry_dates = [dates[i] for i in (30, 60, 90, 120)]
    days = []
    for date in dates:
        continuous, auction = 10_000.0, 1000.0
        if date in expiry_dates:
            k = expiry_dates.index(date) + 1
            continuous *= np.exp(0.1 * k)
            auction *= np.exp(0.5 + 0.2 * k)
        days.append(DayRecord('ABC', date, 10.0, 10.0, continuous + auction, auction))
    slope = au.special_day_auction_slope(days, calendar=ExpiryCalendar(expiry_dates))
    assert slope == pytest.approx(2.0)

    with pytest.raises(CalibrationError):
        au.special_day_auction_slope(days, calendar=ExpiryCalendar(expiry_dates[:2]))
