"""
Per-symbol calibrated parameters and their JSON documents.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from volume_quintet.auction import AuctionModel
from volume_quintet.bayes_intraday import BIN_MODEL, ROUTES
from volume_quintet.errors import DataError
from volume_quintet.prior_daily import ArmaParams
from volume_quintet.stats import LossSpec
from volume_quintet.ucurve import CurveModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CalibratedParams:
    __slots__ = ('symbol', 'arma', 'special_betas', 'curve', 'auction', 'route', 'omega_sq', 'loss',
                 'diagnostics', 'fallbacks')

    symbol: str
    arma: ArmaParams
    special_betas: dict[str, float]
    curve: Optional[CurveModel]
    auction: Optional[AuctionModel]
    route: str
    omega_sq: Optional[np.ndarray]
    loss: LossSpec
    diagnostics: dict
    fallbacks: list[str]

    def __init__(self, symbol: str, arma: ArmaParams = ArmaParams(), special_betas: dict[str, float] | None = None,
                 curve: CurveModel | None = None, auction: AuctionModel | None = None, route: str = BIN_MODEL,
                 omega_sq: np.ndarray | None = None, loss: LossSpec = LossSpec(),
                 diagnostics: dict | None = None, fallbacks: list[str] | None = None):
        if route not in ROUTES:
            raise ValueError(f'unknown route {route}')
        self.symbol = symbol
        self.arma = arma
        self.special_betas = dict(special_betas or {})
        self.curve = curve
        self.auction = auction
        self.route = route
        self.omega_sq = omega_sq
        self.loss = loss
        self.diagnostics = dict(diagnostics or {})
        self.fallbacks = list(fallbacks or [])

    @property
    def prior_only(self) -> bool:
        return self.arma.prior_only

    def add_fallback(self, flag: str, reason: str):
        logger.warning('%s: %s (%s)', self.symbol, flag, reason)
        self.fallbacks.append(flag)

    def to_json(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'symbol': self.symbol,
            'route': self.route,
            'arma': self.arma,
            'special_betas': self.special_betas,
            'curve': self.curve,
            'auction': self.auction,
            'omega_sq': self.omega_sq,
            'loss': self.loss,
            'fallbacks': self.fallbacks,
            'diagnostics': self.diagnostics,
        }

    @staticmethod
    def from_json(data) -> CalibratedParams:
        version = data.get('schema_version')
        if version != SCHEMA_VERSION:
            raise DataError(f"{data.get('symbol')}: unsupported parameter schema version {version}")
        return CalibratedParams(
            symbol=data['symbol'],
            arma=ArmaParams.from_json(data['arma']),
            special_betas=data.get('special_betas', {}),
            curve=CurveModel.from_json(data['curve']) if data.get('curve') else None,
            auction=AuctionModel.from_json(data['auction']) if data.get('auction') else None,
            route=data['route'],
            omega_sq=np.array(data['omega_sq']) if data.get('omega_sq') is not None else None,
            loss=LossSpec.from_json(data['loss']),
            diagnostics=data.get('diagnostics', {}),
            fallbacks=data.get('fallbacks', []),
        )

    def __repr__(self):
        return f'Params({self.symbol}, {self.route}, phi={self.arma.phi}, theta={self.arma.theta})'

    def save(self, directory: Path) -> Path:
        path = Path(directory) / f'{self.symbol}.json'
        with open(path, 'w') as f:
            json.dump(self, f, indent=2, sort_keys=True, default=json_encoder)
        return path

    @staticmethod
    def load(path: Path) -> CalibratedParams:
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except FileNotFoundError as exc:
            raise DataError(f'{path}: parameter file not found') from exc
        except json.JSONDecodeError as exc:
            raise DataError(f'{path}: {exc}') from exc
        return CalibratedParams.from_json(data)


def load_params(directory: Path, symbols=None) -> dict[str, CalibratedParams]:
    """Parameter documents of a directory, or of the given symbols only"""
    directory = Path(directory)
    if symbols is None:
        paths = sorted(directory.glob('*.json'))
    else:
        paths = [directory / f'{symbol}.json' for symbol in symbols]
    result = {}
    for path in paths:
        if not path.is_file():
            raise DataError(f'no calibrated parameters for {path.stem} in {directory}')
        params = CalibratedParams.load(path)
        result[params.symbol] = params
    return result


def json_encoder(obj):
    if getattr(obj.__class__, 'to_json', None):
        return obj.to_json()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dt.date):
        return obj.isoformat()
    raise TypeError(f'unexpected {obj}')
