#!/usr/bin/env python3

import sys
from pathlib import Path
import argparse
import datetime as dt
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from volume_quintet.auction import AuctionModel, ExpiryCalendar, fit_auction_seasonality
from volume_quintet.bayes_intraday import IntradayState, dispersion_from_history, kappa_from_fraction, route_symbol, \
    zero_bin_fraction
from volume_quintet.config import RunConfig
from volume_quintet.errors import CalibrationError, DataError, ForecastError, QuintetError
from volume_quintet.forecast import Forecast, assemble
from volume_quintet.marketdata import (VOLATILITY_WINDOW, BinSeries, DayRecord, load_bins, load_days, reconcile,
                                      trailing_volumes)
from volume_quintet.params import CalibratedParams, json_encoder, load_params
from volume_quintet.prior_daily import (GAP_RATIO, DailyDesign, build_prior, calibrate_arma, daily_design,
                                        pooled_special_day_regression, rolling_log_mean, special_day_features,
                                        special_day_regression)
from volume_quintet.stats import lognormal_fit, report_metrics
from volume_quintet.synth import ScenarioSpec, generate, write_market
from volume_quintet.ucurve import (CURVE_PREDICTORS, Curve, CurveModel, FunctionalBetas, bucket_curves,
                                   curve_regression_sample, daily_c_curve, export_curve_csv,
                                   fit_functional_regression, historical_curve, repair_curve)

logger = logging.getLogger(__name__)

LADDER = ('gm', 'gm_arma', 'gm_arma_special', 'quintet')


@dataclass
class SymbolData:
    symbol: str
    days: list[DayRecord]
    bins: list[BinSeries] = field(default_factory=list)

    def bins_before(self, at: dt.date) -> list[BinSeries]:
        return [series for series in self.bins if series.date < at]


@dataclass
class DayOutcome:
    """Model estimates of one replayed day next to what actually traded"""
    symbol: str
    date: dt.date
    realized: float
    ladder: dict[str, float]
    remaining: list[tuple[float, float]]
    auction: tuple[float, float] | None


def load_market(config: RunConfig) -> dict[str, SymbolData]:
    if config.days is None or config.bins is None:
        raise DataError('both a days file and a bins file are required')
    days = load_days(config.days, total_includes_auction=config.total_includes_auction)
    bins = load_bins(config.bins, config.grid)
    flagged = reconcile(days, bins, config.reconcile_tolerance)
    if flagged:
        logger.warning('%d days do not reconcile with their bins', len(flagged))
    for symbol in sorted(set(bins) - set(days)):
        logger.warning("bins for '%s' have no daily records, ignored", symbol)
    return {symbol: SymbolData(symbol, records, bins.get(symbol, [])) for symbol, records in sorted(days.items())}


def load_calendar(config: RunConfig) -> ExpiryCalendar:
    if config.expiry_calendar is None:
        return ExpiryCalendar()
    return ExpiryCalendar.load(config.expiry_calendar)


def truncate(data: SymbolData, until: dt.date | None) -> SymbolData:
    if until is None:
        return data
    return SymbolData(data.symbol, [d for d in data.days if d.date < until], data.bins_before(until))


###############################################################################
#  Calibration
###############################################################################


def fit_curve_model(data: SymbolData, config: RunConfig, params: CalibratedParams) -> CurveModel:
    try:
        base = historical_curve(data.bins, config.curve_window)
    except CalibrationError as exc:
        params.add_fallback('uniform_curve', str(exc))
        base = repair_curve(np.ones(config.grid.bin_count).cumsum() / config.grid.bin_count)
    try:
        sample, predictors = curve_regression_sample(data.days, data.bins, config.percentile_window)
        betas = fit_functional_regression([daily_c_curve(series) for series in sample], predictors,
                                          smooth=config.smooth_betas)
    except CalibrationError as exc:
        params.add_fallback('no_curve_regression', str(exc))
        betas = FunctionalBetas.zeros(base.bin_count)
    return CurveModel(base, betas)


def calibrate_symbol(data: SymbolData, config: RunConfig, calendar: ExpiryCalendar,
                     pooled_betas: dict[str, float] | None = None, design: DailyDesign | None = None) -> CalibratedParams:
    """Fits every per-symbol model; missing pieces fall back to neutral values with a flag"""
    logger.info('calibrating %s on %d days', data.symbol, len(data.days))
    params = CalibratedParams(data.symbol, loss=config.loss)
    if design is None:
        design = daily_design(data.days, config.prior_window, config.grubbs_alpha, calendar)

    try:
        betas = special_day_regression(design.y, design.features, config.loss, min_rows=config.min_calibration_days)
    except CalibrationError as exc:
        if pooled_betas is not None:
            params.add_fallback('pooled_special_days', str(exc))
            betas = dict(pooled_betas)
        else:
            params.add_fallback('no_special_days', str(exc))
            betas = {name: 0.0 for name in design.features}
    params.special_betas = betas

    params.arma = calibrate_arma(design.residual(betas), config.loss, min_obs=config.min_calibration_days)
    if params.arma.prior_only:
        params.add_fallback('prior_only', f'{len(design)} excess volumes')

    params.curve = fit_curve_model(data, config, params)
    params.route = route_symbol(data.bins, config.routing_threshold, config.dispersion_window)
    try:
        params.omega_sq = dispersion_from_history(data.bins, params.curve.base, config.dispersion_window)
    except CalibrationError as exc:
        params.add_fallback('no_dispersion', str(exc))

    try:
        params.auction = fit_auction_seasonality(data.days, calendar=calendar,
                                                 exclude_expiry=config.exclude_expiry_from_auction_mean)
    except CalibrationError as exc:
        params.add_fallback('no_auction', str(exc))

    params.diagnostics = calibration_diagnostics(data, design)
    return params


def calibration_diagnostics(data: SymbolData, design: DailyDesign) -> dict:
    diagnostics = {
        'days': len(data.days),
        'bin_days': len(data.bins),
        'design_rows': len(design),
        'first_date': data.days[0].date if data.days else None,
        'last_date': data.days[-1].date if data.days else None,
    }
    if data.bins:
        diagnostics['zero_bin_fraction'] = zero_bin_fraction(data.bins)
    volumes = [day.continuous_volume for day in data.days if day.continuous_volume > 0]
    if len(volumes) >= 3:
        fit = lognormal_fit(volumes)
        diagnostics['log_volume'] = {'mu': fit.mu, 'sigma': fit.sigma, 'qq_correlation': fit.qq_correlation}
    return diagnostics


def calibrate_market(market: dict[str, SymbolData], config: RunConfig,
                     calendar: ExpiryCalendar) -> tuple[dict[str, CalibratedParams], dict[str, str]]:
    designs = {symbol: daily_design(data.days, config.prior_window, config.grubbs_alpha, calendar)
               for symbol, data in market.items()}
    try:
        pooled = pooled_special_day_regression(list(designs.values()), config.loss)
    except CalibrationError as exc:
        logger.info('no pooled special-day fit: %s', exc)
        pooled = None

    results, failures = {}, {}
    for symbol, data in market.items():
        try:
            results[symbol] = calibrate_symbol(data, config, calendar, pooled, designs[symbol])
        except QuintetError as exc:
            logger.error('%s: calibration failed: %s', symbol, exc)
            failures[symbol] = str(exc)
    return results, failures


###############################################################################
#  Replay
###############################################################################


def rolled_auction(model: AuctionModel | None, history: list[DayRecord], at: dt.date,
                   calendar: ExpiryCalendar) -> AuctionModel:
    if model is None:
        raise ForecastError('auction', 'no calibrated auction model')
    try:
        return model.rolled(history, at, calendar)
    except DataError as exc:
        logger.debug('%s: keeping the calibrated auction mean (%s)', at, exc)
        return model


def replay_day(data: SymbolData, index: int, series: BinSeries, params: CalibratedParams, config: RunConfig,
               calendar: ExpiryCalendar, design: DailyDesign) -> tuple[list[Forecast], DayOutcome]:
    """Replays one day bin by bin using only the days before it and the bins already seen"""
    today = data.days[index]
    history = data.days[:index]
    prev = history[-1] if history else None
    context = history[-(VOLATILITY_WINDOW + 1):]
    features = special_day_features(prev, today, context, calendar)
    prior_args = dict(at=today.date, window=config.prior_window, alpha=config.grubbs_alpha,
                      sigma_floor=config.sigma_floor, design=design, calendar=calendar)
    try:
        prior = build_prior(history, params.arma, params.special_betas, features, **prior_args)
        gm_arma = build_prior(history, params.arma, {}, {}, **prior_args)
    except DataError as exc:
        raise ForecastError('prior_daily', str(exc)) from exc

    curve_model = params.curve or CurveModel(repair_curve(np.arange(1, series.volumes.size + 1) / series.volumes.size),
                                             FunctionalBetas.zeros(series.volumes.size))
    auction_model = rolled_auction(params.auction, history, today.date, calendar)
    expiry = calendar.is_expiry(today)
    volume_history = trailing_volumes(history, today.date, config.percentile_window)
    gap_ratio = features[GAP_RATIO]

    state = IntradayState(prior, curve_model.predict(gap_ratio=gap_ratio), params.route,
                          kappa0=kappa_from_fraction(config.kappa_fraction, config.prior_window),
                          omega_sq=params.omega_sq, threshold=config.routing_threshold,
                          var_floor=config.variance_floor, omega_floor=config.omega_floor)

    def snapshot(as_of_bin: int) -> Forecast:
        return assemble(prior, state, curve_model, auction_model, as_of_bin, date=today.date, symbol=data.symbol,
                        gap_ratio=gap_ratio, volume_history=volume_history, expiry=expiry)

    forecasts = [snapshot(0)]
    for j, volume in enumerate(series.volumes):
        state.observe(float(volume), forecasts[-1].c_hat)
        forecasts.append(snapshot(j + 1))

    realized = today.continuous_volume
    remaining = []
    for forecast in forecasts[:-1]:
        actual = float(series.volumes[forecast.as_of_bin:].sum())
        if actual > 0 and forecast.remaining > 0:
            remaining.append((float(np.log(forecast.remaining)), float(np.log(actual))))
    auction = None
    if today.auction_volume > 0:
        auction = (float(np.log(forecasts[-1].auction)), float(np.log(today.auction_volume)))
    ladder = {
        'gm': rolling_log_mean(history, config.prior_window, today.date, config.grubbs_alpha),
        'gm_arma': gm_arma.log_mean,
        'gm_arma_special': prior.log_mean,
        'quintet': forecasts[-1].total_log,
    }
    return forecasts, DayOutcome(data.symbol, today.date, realized, ladder, remaining, auction)


def replay_symbol(data: SymbolData, params: CalibratedParams, config: RunConfig, calendar: ExpiryCalendar,
                  start: dt.date, end: dt.date) -> tuple[list[Forecast], list[DayOutcome]]:
    design = daily_design(data.days, config.prior_window, config.grubbs_alpha, calendar)
    bins_by_date = {series.date: series for series in data.bins}
    forecasts, outcomes = [], []
    for index, day in enumerate(data.days):
        if not start <= day.date <= end:
            continue
        series = bins_by_date.get(day.date)
        if series is None:
            logger.warning('%s %s: no bins, day skipped', data.symbol, day.date)
            continue
        if day.continuous_volume <= 0:
            logger.warning('%s %s: no continuous volume, day skipped', data.symbol, day.date)
            continue
        try:
            day_forecasts, outcome = replay_day(data, index, series, params, config, calendar, design)
        except ForecastError as exc:
            logger.warning('%s %s: day skipped, %s', data.symbol, day.date, exc)
            continue
        forecasts.extend(day_forecasts)
        outcomes.append(outcome)
    logger.info('%s: replayed %d days', data.symbol, len(outcomes))
    return forecasts, outcomes


def _metrics(pairs: Sequence[tuple[float, float]], config: RunConfig) -> dict | None:
    if not pairs:
        return None
    est, true = zip(*pairs)
    return report_metrics(est, true, config.loss)


def evaluate(outcomes: Sequence[DayOutcome], config: RunConfig) -> dict:
    """ALE/RMSE/MAPE for the total, remaining and auction forecasts, plus the model ladder"""
    realized = [np.log(o.realized) for o in outcomes]
    ladder = []
    for model in LADDER:
        metrics = _metrics([(o.ladder[model], x) for o, x in zip(outcomes, realized)], config)
        if metrics is not None:
            ladder.append({'model': model, **metrics})
    for rank, row in enumerate(sorted(ladder, key=lambda row: row['ale']), start=1):
        row['rank'] = rank
    return {
        'days': len(outcomes),
        'total': _metrics([(o.ladder['quintet'], x) for o, x in zip(outcomes, realized)], config),
        'remaining': _metrics([pair for o in outcomes for pair in o.remaining], config),
        'auction': _metrics([o.auction for o in outcomes if o.auction is not None], config),
        'ladder': ladder,
    }


def write_json(path: Path, data):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=json_encoder)


###############################################################################
#  CLI Commands
###############################################################################


def cmd_calibrate(config: RunConfig, args: argparse.Namespace) -> int:
    market = {s: truncate(d, args.until) for s, d in load_market(config).items()}
    calendar = load_calendar(config)
    results, failures = calibrate_market(market, config, calendar)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for symbol, params in results.items():
        path = params.save(out)
        print(f'{symbol}: {params.route}, phi={params.arma.phi:.2f} theta={params.arma.theta:.2f} -> {path}')
    if failures and not results:
        raise CalibrationError(f'calibration failed for every symbol ({", ".join(failures)})')
    return 0


def cmd_replay(config: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(config)
    calendar = load_calendar(config)
    symbols = args.symbols or list(market)
    params = load_params(Path(args.params), symbols)
    all_forecasts, all_outcomes, per_symbol = [], [], {}
    for symbol in symbols:
        if symbol not in market:
            raise DataError(f"no data for symbol '{symbol}'")
        forecasts, outcomes = replay_symbol(market[symbol], params[symbol], config, calendar, args.start, args.end)
        all_forecasts.extend(forecasts)
        all_outcomes.extend(outcomes)
        per_symbol[symbol] = evaluate(outcomes, config)

    report = {'from': args.start, 'to': args.end, 'symbols': per_symbol, 'overall': evaluate(all_outcomes, config)}
    write_json(Path(args.report), report)
    if args.forecasts:
        with open(args.forecasts, 'w') as f:
            for forecast in all_forecasts:
                f.write(json.dumps(forecast, sort_keys=True, default=json_encoder) + '\n')
    overall = report['overall']
    if overall['total']:
        print(f"{overall['days']} days replayed, total-volume ALE {overall['total']['ale']:.4f}")
    return 0


def _bucket_frame(buckets: list[tuple[int, int, Curve]]) -> pd.DataFrame:
    rows = []
    for bucket, count, curve in buckets:
        for index, value in enumerate(curve.values):
            rows.append({'bucket': bucket, 'days': count, 'bin_index': index, 'c_value': value})
    return pd.DataFrame(rows, columns=['bucket', 'days', 'bin_index', 'c_value'])


def export_symbol_curves(data: SymbolData, params: CalibratedParams, config: RunConfig, out: Path,
                         buckets: int) -> list[Path]:
    written = []
    if params.curve is not None:
        path = out / f'{data.symbol}_base_curve.csv'
        export_curve_csv(path, params.curve.base)
        written.append(path)
        raw = params.curve.betas.raw_betas()
        frame = pd.DataFrame({'bin_index': np.arange(params.curve.betas.bin_count)})
        for name, row in zip(params.curve.betas.predictor_names, raw):
            frame[f'beta_{name}'] = row
        path = out / f'{data.symbol}_betas.csv'
        frame.to_csv(path, index=False)
        written.append(path)

    sample, predictors = curve_regression_sample(data.days, data.bins, config.percentile_window)
    if sample:
        curves = [daily_c_curve(series) for series in sample]
        for name in CURVE_PREDICTORS:
            path = out / f'{data.symbol}_{name}_buckets.csv'
            _bucket_frame(bucket_curves(curves, predictors[name], buckets)).to_csv(path, index=False)
            written.append(path)

    volumes = [day.continuous_volume for day in data.days if day.continuous_volume > 0]
    if len(volumes) >= 3:
        fit = lognormal_fit(volumes)
        path = out / f'{data.symbol}_qq.csv'
        pd.DataFrame(fit.qq_points, columns=['theoretical', 'sample']).to_csv(path, index=False)
        written.append(path)
    return written


def cmd_export_curves(config: RunConfig, args: argparse.Namespace) -> int:
    market = load_market(config)
    symbols = args.symbols or list(market)
    params = load_params(Path(args.params), symbols)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for symbol in symbols:
        if symbol not in market:
            raise DataError(f"no data for symbol '{symbol}'")
        for path in export_symbol_curves(market[symbol], params[symbol], config, out, args.buckets):
            print(f'{symbol}: {path}')
    return 0


def cmd_synth(config: RunConfig, args: argparse.Namespace) -> int:
    spec = ScenarioSpec.load(Path(args.spec)) if args.spec else ScenarioSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    market = generate(spec, config.grid)
    for kind, path in write_market(market, Path(args.out), config.grid).items():
        print(f'{kind}: {path}')
    return 0


def configure_logging(args: argparse.Namespace):
    level = logging.WARN
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG

    logging.basicConfig(
        format='%(levelname)s %(module)s: %(message)s',
        level=level
    )


def parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid date '{text}', expected YYYY-MM-DD")


def build_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(Path(args.config) if args.config else None)
    return config.with_overrides(
        days=Path(args.days) if getattr(args, 'days', None) else None,
        bins=Path(args.bins) if getattr(args, 'bins', None) else None,
        bin_minutes=args.bin_minutes,
        session=args.session,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='volume-quintet')
    subparsers = parser.add_subparsers(title='commands', description='The following commands are available:', required=True)

    common_args = argparse.ArgumentParser(add_help=False)
    common_args.add_argument('-v', '--verbose', action='count', default=0)
    common_args.add_argument('--config', help='flat key = value configuration file')
    common_args.add_argument('--bin-minutes', type=int, help='bin size in minutes (default 10)')
    common_args.add_argument('--session', help='trading session, e.g. 09:30-16:00')

    data_args = argparse.ArgumentParser(add_help=False)
    data_args.add_argument('--days', help='daily records CSV')
    data_args.add_argument('--bins', help='intraday bins CSV')

    parser_calibrate = subparsers.add_parser('calibrate', parents=[common_args, data_args],
                                             help='fits the per-symbol parameters')
    parser_calibrate.add_argument('--out', required=True, help='directory for the parameter files')
    parser_calibrate.add_argument('--until', type=parse_date, help='use only data before this date')
    parser_calibrate.set_defaults(func=cmd_calibrate)

    parser_replay = subparsers.add_parser('replay', parents=[common_args, data_args],
                                          help='replays days bin by bin with calibrated parameters')
    parser_replay.add_argument('--params', required=True, help='directory with the parameter files')
    parser_replay.add_argument('--from', dest='start', type=parse_date, required=True)
    parser_replay.add_argument('--to', dest='end', type=parse_date, required=True)
    parser_replay.add_argument('--report', required=True, help='metric report (JSON)')
    parser_replay.add_argument('--forecasts', help='per-bin forecasts (JSON lines)')
    parser_replay.add_argument('--symbols', nargs='+')
    parser_replay.set_defaults(func=cmd_replay)

    parser_export = subparsers.add_parser('export-curves', parents=[common_args, data_args],
                                          help='writes plot data for volume curves')
    parser_export.add_argument('--params', required=True, help='directory with the parameter files')
    parser_export.add_argument('--out', required=True, help='output directory')
    parser_export.add_argument('--buckets', type=int, default=5, help='quantile buckets per predictor')
    parser_export.add_argument('--symbols', nargs='+')
    parser_export.set_defaults(func=cmd_export_curves)

    parser_synth = subparsers.add_parser('synth', parents=[common_args],
                                         help='generates a synthetic market')
    parser_synth.add_argument('--spec', help='scenario file (flat key = value)')
    parser_synth.add_argument('--out', required=True, help='output directory')
    parser_synth.add_argument('--seed', type=int)
    parser_synth.set_defaults(func=cmd_synth)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        config = build_config(args)
        return args.func(config, args)
    except QuintetError as exc:
        logger.error('%s', exc)
        return exc.exit_code


def main_cli():
    sys.exit(run())


if __name__ == '__main__':
    main_cli()
