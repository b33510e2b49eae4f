"""
Data structures for daily records and intraday volume bins, the CSV loaders that
build them and the per-day features (overnight gap, volume percentile) derived
from them.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from volume_quintet.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

EARNINGS = 'earnings'
OPTION_EXPIRY = 'optexp'
REBALANCE = 'rebalance'
DAY_FLAGS = frozenset({EARNINGS, OPTION_EXPIRY, REBALANCE})

DAYS_COLUMNS = ['symbol', 'date', 'open', 'close', 'total_volume', 'auction_volume', 'flags']
BINS_COLUMNS = ['symbol', 'date', 'bin_start', 'volume']

VOLATILITY_WINDOW = 20
PERCENTILE_WINDOW = 180
RECONCILE_TOLERANCE = 0.005


@dataclass(frozen=True)
class DayRecord:
    symbol: str
    date: dt.date
    open_price: float
    close_price: float
    total_volume: float
    auction_volume: float
    flags: frozenset[str] = frozenset()
    includes_auction: bool = True

    def __post_init__(self):
        if self.open_price <= 0 or self.close_price <= 0:
            raise DataError(f'{self.symbol} {self.date}: non-positive price')
        if self.total_volume < 0 or self.auction_volume < 0:
            raise DataError(f'{self.symbol} {self.date}: negative volume')
        if self.auction_volume > self.total_volume:
            raise DataError(f'{self.symbol} {self.date}: auction volume exceeds total volume')
        unknown = self.flags - DAY_FLAGS
        if unknown:
            raise DataError(f'{self.symbol} {self.date}: unknown flags {",".join(sorted(unknown))}')

    @property
    def continuous_volume(self) -> float:
        """Volume traded in the continuous session, the quantity the engine forecasts"""
        if self.includes_auction:
            return self.total_volume - self.auction_volume
        return self.total_volume

    def to_row(self):
        return {
            'symbol': self.symbol,
            'date': self.date.isoformat(),
            'open': self.open_price,
            'close': self.close_price,
            'total_volume': self.total_volume,
            'auction_volume': self.auction_volume,
            'flags': '|'.join(sorted(self.flags)),
        }


@dataclass(frozen=True)
class BinGrid:
    session_open: dt.time = dt.time(9, 30)
    session_close: dt.time = dt.time(16, 0)
    bin_minutes: int = 10

    def __post_init__(self):
        if self.bin_minutes <= 0:
            raise ConfigError(f'bin size must be positive, got {self.bin_minutes}')
        if self.session_minutes <= 0:
            raise ConfigError('session close must follow session open')
        if self.session_minutes % self.bin_minutes != 0:
            raise ConfigError(f'{self.bin_minutes}-minute bins do not divide a '
                              f'{self.session_minutes}-minute session')

    @staticmethod
    def from_session(session: str, bin_minutes: int = 10) -> BinGrid:
        """Builds a grid from a 'HH:MM-HH:MM' session string"""
        try:
            start, end = session.split('-')
            return BinGrid(_parse_clock(start), _parse_clock(end), bin_minutes)
        except ValueError as exc:
            raise ConfigError(f"invalid session '{session}': {exc}") from exc

    @property
    def session_minutes(self) -> int:
        return _minutes(self.session_close) - _minutes(self.session_open)

    @property
    def bin_count(self) -> int:
        return self.session_minutes // self.bin_minutes

    def bin_index(self, start: dt.time) -> int:
        offset = _minutes(start) - _minutes(self.session_open)
        if offset < 0 or offset >= self.session_minutes:
            raise DataError(f'bin {start:%H:%M} outside session')
        if offset % self.bin_minutes != 0:
            raise DataError(f'timestamp {start:%H:%M} off-grid for {self.bin_minutes}-minute bins')
        return offset // self.bin_minutes

    def bin_start(self, index: int) -> dt.time:
        minutes = _minutes(self.session_open) + index * self.bin_minutes
        return dt.time(minutes // 60, minutes % 60)


@dataclass(frozen=True, eq=False)
class BinSeries:
    symbol: str
    date: dt.date
    volumes: np.ndarray
    missing_bins: int = 0

    @property
    def total(self) -> float:
        return float(self.volumes.sum())

    @property
    def zero_bins(self) -> int:
        return int(np.count_nonzero(self.volumes == 0))

    @property
    def zero_fraction(self) -> float:
        return self.zero_bins / len(self.volumes)

    def __repr__(self):
        return f'BinSeries({self.symbol} {self.date}, total={self.total:.0f}, zeros={self.zero_bins})'


@dataclass(frozen=True)
class GapObservation:
    raw_gap: float
    vol20: float
    gap_ratio: float
    short_window: bool = False


def _parse_clock(text: str) -> dt.time:
    return dt.datetime.strptime(text.strip(), '%H:%M').time()


def _minutes(t: dt.time) -> int:
    return t.hour * 60 + t.minute


def _read_csv(path: Path, columns: list[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise DataError(f'{path}: file not found') from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f'{path}: {exc}') from exc
    if list(frame.columns) != columns:
        raise DataError(f'{path}: expected header {",".join(columns)}')
    return frame


def _parse_flags(text: str) -> frozenset[str]:
    return frozenset(flag.strip() for flag in text.split('|') if flag.strip())


def load_days(path: Path, *, total_includes_auction=True) -> dict[str, list[DayRecord]]:
    """
    Loads a days file, returning the records of each symbol sorted by date.
    """
    frame = _read_csv(Path(path), DAYS_COLUMNS)
    records: dict[tuple[str, dt.date], DayRecord] = {}
    # line 1 is the header
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            record = DayRecord(
                symbol=row.symbol.strip(),
                date=dt.date.fromisoformat(row.date.strip()),
                open_price=float(row.open),
                close_price=float(row.close),
                total_volume=float(row.total_volume),
                auction_volume=float(row.auction_volume),
                flags=_parse_flags(row.flags),
                includes_auction=total_includes_auction,
            )
        except (ValueError, DataError) as exc:
            raise DataError(f'{path}:{line}: {exc}') from exc
        key = (record.symbol, record.date)
        if key in records:
            raise DataError(f'{path}:{line}: duplicate date {record.date} for {record.symbol}')
        records[key] = record

    by_symbol: dict[str, list[DayRecord]] = {}
    for (symbol, _), record in sorted(records.items()):
        by_symbol.setdefault(symbol, []).append(record)
    logger.info('loaded %d days for %d symbols from %s', len(records), len(by_symbol), path)
    return by_symbol


def load_bins(path: Path, grid: BinGrid) -> dict[str, list[BinSeries]]:
    """
    Loads a bins file onto the grid. Missing bins are zero-filled and counted.
    """
    frame = _read_csv(Path(path), BINS_COLUMNS)
    volumes: dict[tuple[str, dt.date], np.ndarray] = {}
    seen: dict[tuple[str, dt.date], np.ndarray] = {}
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            key = (row.symbol.strip(), dt.date.fromisoformat(row.date.strip()))
            index = grid.bin_index(_parse_clock(row.bin_start))
            volume = float(row.volume)
        except (ValueError, DataError) as exc:
            raise DataError(f'{path}:{line}: {exc}') from exc
        if volume < 0:
            raise DataError(f'{path}:{line}: negative volume')
        day_volumes = volumes.setdefault(key, np.zeros(grid.bin_count))
        day_seen = seen.setdefault(key, np.zeros(grid.bin_count, dtype=bool))
        if day_seen[index]:
            raise DataError(f'{path}:{line}: duplicate bin {row.bin_start} on {key[1]}')
        day_volumes[index] = volume
        day_seen[index] = True

    by_symbol: dict[str, list[BinSeries]] = {}
    missing_total = 0
    for key in sorted(volumes):
        missing = int(grid.bin_count - seen[key].sum())
        missing_total += missing
        if missing:
            logger.debug('%s %s: %d missing bins zero-filled', key[0], key[1], missing)
        by_symbol.setdefault(key[0], []).append(BinSeries(key[0], key[1], volumes[key], missing))
    if missing_total:
        logger.info('%s: %d missing bins zero-filled', path, missing_total)
    return by_symbol


def write_days(path: Path, days: Iterable[DayRecord]):
    pd.DataFrame([day.to_row() for day in days], columns=DAYS_COLUMNS).to_csv(path, index=False)


def write_bins(path: Path, bins: Iterable[BinSeries], grid: BinGrid):
    rows = []
    for series in bins:
        for index, volume in enumerate(series.volumes):
            rows.append({
                'symbol': series.symbol,
                'date': series.date.isoformat(),
                'bin_start': f'{grid.bin_start(index):%H:%M}',
                'volume': float(volume),
            })
    pd.DataFrame(rows, columns=BINS_COLUMNS).to_csv(path, index=False)


def reconcile(days: dict[str, list[DayRecord]], bins: dict[str, list[BinSeries]],
              tolerance: float = RECONCILE_TOLERANCE) -> list[tuple[str, dt.date]]:
    """
    Checks that the bins of each day add up to its continuous volume. Days outside the
    tolerance are returned and logged; they are never dropped.
    """
    flagged = []
    for symbol, records in days.items():
        series_by_date = {series.date: series for series in bins.get(symbol, [])}
        for day in records:
            series = series_by_date.get(day.date)
            if series is None:
                continue
            gap = abs(series.total - day.continuous_volume)
            if day.total_volume == 0:
                mismatch = gap > 0
            else:
                mismatch = gap / day.total_volume > tolerance
            if mismatch:
                logger.warning('%s %s: bins sum to %.0f, day reports %.0f',
                               symbol, day.date, series.total, day.continuous_volume)
                flagged.append((symbol, day.date))
    return flagged


def overnight_gap(prev: DayRecord, today: DayRecord, history: Sequence[DayRecord],
                  window: int = VOLATILITY_WINDOW) -> GapObservation:
    """
    Open-to-previous-close return scaled by the standard deviation of the trailing
    close-to-close log returns ending at `prev`.
    """
    if prev.date >= today.date:
        raise DataError(f'{prev.date} does not precede {today.date}')
    if any(prev.date < day.date < today.date for day in history):
        raise DataError(f'{prev.date} is not the day before {today.date}')

    window_days = [day for day in history if day.date < prev.date][-window:] + [prev]
    closes = np.array([day.close_price for day in window_days])
    if len(closes) < 3:
        raise DataError(f'{today.symbol} {today.date}: insufficient history for volatility')
    returns = np.diff(np.log(closes))
    vol = float(np.std(returns, ddof=1))
    if vol < 1e-12:
        raise DataError(f'{today.symbol} {today.date}: degenerate volatility')

    short = len(returns) < window
    if short:
        logger.debug('%s %s: volatility from %d returns', today.symbol, today.date, len(returns))
    raw_gap = today.open_price / prev.close_price - 1.0
    return GapObservation(raw_gap, vol, raw_gap / vol, short)


def volume_percentile(current: float, history: Sequence[float]) -> float:
    """Fraction of historical days that traded strictly less than `current`"""
    values = np.asarray(history, dtype=float)
    if values.size == 0:
        raise DataError('empty volume history')
    return float(np.count_nonzero(values < current)) / values.size


def trailing_volumes(days: Sequence[DayRecord], at: dt.date, window: int = PERCENTILE_WINDOW) -> np.ndarray:
    """Continuous volumes of the last `window` days strictly before `at`"""
    prior = [day.continuous_volume for day in days if day.date < at]
    return np.array(prior[-window:], dtype=float)
