import math

import numpy as np
import pytest

import volume_quintet.synth as sy
from volume_quintet.auction import is_triple_witching
from volume_quintet.bayes_intraday import BIN_MODEL, CUMULATIVE_MODEL
from volume_quintet.errors import ConfigError
from volume_quintet.marketdata import BinGrid, load_bins, load_days, reconcile
from volume_quintet.params import CalibratedParams
from volume_quintet.synth import ScenarioSpec


def test_scenario_validation():
    with pytest.raises(ConfigError):
        ScenarioSpec(n_days=1)
    with pytest.raises(ConfigError):
        ScenarioSpec(phi=1.0)
    with pytest.raises(ConfigError):
        ScenarioSpec(zero_bin_prob=1.5)
    with pytest.raises(ConfigError):
        ScenarioSpec(curve_shape='w_shape')
    with pytest.raises(ConfigError):
        ScenarioSpec(bin_noise=-0.1)
    with pytest.raises(ConfigError):
        ScenarioSpec(auction_share=1.0)


def test_load_scenario(tmp_path):
    path = tmp_path / 'scenario.cfg'
    path.write_text('n_days = 80\nsymbol = THIN\nzero_bin_prob = 0.2\ncurve_shape = inverted_j\n')
    spec = ScenarioSpec.load(path)
    assert spec.n_days == 80
    assert spec.symbol == 'THIN'
    assert spec.curve_shape == sy.INVERTED_J
    assert spec.seed == 7

    path.write_text('n_day = 80\n')
    with pytest.raises(ConfigError):
        ScenarioSpec.load(path)


def test_shape_curves():
    for shape in sy.CURVE_SHAPES:
        u = sy.shape_curve(shape, 39).values
        assert u.sum() == pytest.approx(1.0)
        assert np.all(u > 0)
    u = sy.shape_curve(sy.U_SHAPE, 39).values
    assert u[0] == pytest.approx(u[-1])
    assert u[0] > u[19]
    j = sy.shape_curve(sy.INVERTED_J, 39).values
    assert j[0] > j[10]
    assert sy.shape_curve(sy.UNIFORM, 4).values == pytest.approx([0.25] * 4)


def test_generation_is_deterministic():
    spec = ScenarioSpec(n_days=50)
    first = sy.generate(spec)
    second = sy.generate(spec)
    assert [d.total_volume for d in first.days] == [d.total_volume for d in second.days]
    assert all(np.array_equal(a.volumes, b.volumes) for a, b in zip(first.bins, second.bins))

    other = sy.generate(ScenarioSpec(n_days=50, seed=8))
    assert [d.total_volume for d in other.days] != [d.total_volume for d in first.days]


def test_generated_market_is_consistent():
    market = sy.generate(ScenarioSpec(n_days=300, expiry_multiplier=3.0))
    assert len(market.days) == len(market.bins) == 300
    for day, series in zip(market.days, market.bins):
        assert series.date == day.date
        assert series.total == pytest.approx(day.continuous_volume)
        assert day.total_volume == pytest.approx(series.total + day.auction_volume)
        assert ('optexp' in day.flags) == is_triple_witching(day.date)
    days = {'SYN': market.days}
    assert reconcile(days, {'SYN': market.bins}) == []

    expiry = [d.auction_volume / d.continuous_volume for d in market.days if 'optexp' in d.flags]
    regular = [d.auction_volume / d.continuous_volume for d in market.days if 'optexp' not in d.flags]
    assert len(expiry) >= 3
    assert np.median(expiry) / np.median(regular) == pytest.approx(3.0, rel=0.2)
    assert sum('earnings' in d.flags for d in market.days) == 300 // sy.EARNINGS_PERIOD


def test_zero_bins():
    market = sy.generate(ScenarioSpec(n_days=100, zero_bin_prob=0.2))
    zeros = sum(series.zero_bins for series in market.bins)
    assert zeros / (100 * 39) == pytest.approx(0.2, abs=0.03)
    assert market.truth.route == CUMULATIVE_MODEL
    assert sy.generate(ScenarioSpec(n_days=10)).truth.route == BIN_MODEL


def test_ground_truth():
    spec = ScenarioSpec(phi=0.6, theta=-0.2, beta_gap=0.25, expiry_multiplier=3.0, earnings_multiplier=1.5,
                        curve_gap_tilt=0.02)
    truth = sy.ground_truth(spec)
    assert truth.arma.phi == 0.6
    assert truth.arma.theta == -0.2
    assert truth.special_betas['gap_ratio'] == 0.25
    assert truth.special_betas['earnings'] == pytest.approx(math.log(1.5))
    assert truth.auction.beta_expiry == pytest.approx(math.log(3))
    raw = truth.curve.betas.raw_betas()
    assert raw[0][0] == pytest.approx(0.02)
    assert raw[0][-1] == 0.0
    assert np.all(raw[1] == 0.0)


def test_write_market(tmp_path):
    grid = BinGrid()
    market = sy.generate(ScenarioSpec(n_days=30))
    paths = sy.write_market(market, tmp_path / 'out', grid)
    assert paths['days'].name == sy.DAYS_FILE

    days = load_days(paths['days'])
    bins = load_bins(paths['bins'], grid)
    assert len(days['SYN']) == 30
    assert len(bins['SYN']) == 30
    assert days['SYN'][5].total_volume == pytest.approx(market.days[5].total_volume)
    assert reconcile(days, bins) == []

    truth = CalibratedParams.load(paths['truth'])
    assert truth.symbol == 'SYN'
    assert truth.diagnostics['seed'] == 7
