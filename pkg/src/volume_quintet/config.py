"""
Run configuration: every tunable of the pipeline, read from a flat `key = value`
file and overridable from the command line.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from volume_quintet.errors import ConfigError
from volume_quintet.marketdata import BinGrid
from volume_quintet.stats import LossSpec

logger = logging.getLogger(__name__)

_SECTION = 'run'
KAPPA_RANGE = (0.3, 0.8)


@dataclass(frozen=True)
class RunConfig:
    days: Optional[Path] = None
    bins: Optional[Path] = None
    expiry_calendar: Optional[Path] = None
    session: str = '09:30-16:00'
    bin_minutes: int = 10
    prior_window: int = 20
    curve_window: int = 180
    dispersion_window: int = 60
    percentile_window: int = 180
    min_calibration_days: int = 60
    kappa_fraction: float = 0.5
    kappa_override: bool = False
    over_weight: float = 2.0
    under_weight: float = 1.0
    loss_exponent: int = 1
    routing_threshold: float = 0.05
    grubbs_alpha: float = 0.05
    sigma_floor: float = 0.05
    variance_floor: float = 0.05 ** 2
    omega_floor: float = 0.01 ** 2
    reconcile_tolerance: float = 0.005
    total_includes_auction: bool = True
    exclude_expiry_from_auction_mean: bool = False
    smooth_betas: bool = False
    curve_buckets: int = 5

    def __post_init__(self):
        for name in ('prior_window', 'curve_window', 'dispersion_window', 'percentile_window',
                     'min_calibration_days', 'curve_buckets'):
            if getattr(self, name) <= 0:
                raise ConfigError(f'{name} must be positive')
        low, high = KAPPA_RANGE
        if not self.kappa_override and not low <= self.kappa_fraction <= high:
            raise ConfigError(f'kappa_fraction {self.kappa_fraction} outside [{low}, {high}]; '
                              'set kappa_override to force it')
        if self.kappa_fraction <= 0:
            raise ConfigError('kappa_fraction must be positive')
        if not 0 <= self.routing_threshold <= 1:
            raise ConfigError('routing_threshold must be a fraction')
        if not 0 < self.grubbs_alpha < 1:
            raise ConfigError('grubbs_alpha must be in (0,1)')
        for name in ('sigma_floor', 'variance_floor', 'omega_floor', 'reconcile_tolerance'):
            if getattr(self, name) <= 0:
                raise ConfigError(f'{name} must be positive')
        try:
            self.loss
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.grid  # raises on an invalid session

    @property
    def grid(self) -> BinGrid:
        return BinGrid.from_session(self.session, self.bin_minutes)

    @property
    def loss(self) -> LossSpec:
        return LossSpec(self.over_weight, self.under_weight, self.loss_exponent)

    def with_overrides(self, **overrides) -> RunConfig:
        """Copy with the non-None overrides applied, e.g. command line flags"""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @staticmethod
    def load(path: Path | None) -> RunConfig:
        if path is None:
            return RunConfig()
        return load_flat_config(path, RunConfig)


def read_flat_file(path: Path) -> configparser.SectionProxy:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=('#',), inline_comment_prefixes=('#',))
    try:
        with open(path, 'r') as f:
            parser.read_string(f'[{_SECTION}]\n' + f.read(), source=str(path))
    except FileNotFoundError as exc:
        raise ConfigError(f'{path}: file not found') from exc
    except configparser.Error as exc:
        raise ConfigError(f'{path}: {exc}') from exc
    return parser[_SECTION]


def _coerce(section: configparser.SectionProxy, key: str, kind):
    if kind is bool:
        return section.getboolean(key)
    if kind is int:
        return section.getint(key)
    if kind is float:
        return section.getfloat(key)
    if kind is Path or Path in typing.get_args(kind):
        return Path(section[key])
    return section[key]


def load_flat_config(path: Path, cls):
    """Builds the dataclass `cls` from a flat config file; unknown keys are errors"""
    section = read_flat_file(path)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key in section:
        if key not in names:
            raise ConfigError(f'{path}: unknown key {key}')
        try:
            values[key] = _coerce(section, key, hints[key])
        except ValueError as exc:
            raise ConfigError(f'{path}: invalid value for {key}: {exc}') from exc
    logger.info('read %d settings from %s', len(values), path)
    return cls(**values)
