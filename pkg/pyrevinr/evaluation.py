"""
.. module:: evaluation
   :platform: Unix, Windows
   :synopsis: Reconstruction quality and uncertainty quality metrics, evaluation reports and ablation deltas

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from pyrevinr.errors import ConfigError, DegenerateInputError, UsageError
from pyrevinr.models import PredictionField
from pyrevinr.volume import (
    NormParams,
    VolumeGrid,
    apply_normalization,
    gradient_magnitude,
    interpolation_error_field,
    local_variance,
)

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

EXACT = 'exact'
VAR_FLOOR = 1e-12
ERROR_KINDS = ('abs', 'squared')

CORRELATION_METRICS = ('corr_eu_error', 'corr_au_locvar', 'corr_au_interp')


@dataclass(frozen=True)
class EvalOptions:
    locvar_window: Tuple[int, int, int] = (2, 2, 2)
    interp_factors: Tuple[int, int, int] = (4, 4, 4)
    error_kind: str = 'abs'
    var_floor: float = VAR_FLOOR

    def validate(self) -> None:
        if len(self.locvar_window) != 3 or min(self.locvar_window) < 1:
            raise ConfigError(f'locvar_window needs three positive sizes, got {self.locvar_window}')
        if len(self.interp_factors) != 3 or min(self.interp_factors) < 1:
            raise ConfigError(f'interp_factors needs three positive factors, got {self.interp_factors}')
        if self.error_kind not in ERROR_KINDS:
            raise ConfigError(f'error_kind must be one of {ERROR_KINDS}, got {self.error_kind!r}')
        if not self.var_floor > 0:
            raise ConfigError(f'var_floor must be positive, got {self.var_floor}')

    def to_dict(self) -> Dict[str, Any]:
        return {'locvar_window': list(self.locvar_window), 'interp_factors': list(self.interp_factors),
                'error_kind': self.error_kind, 'var_floor': self.var_floor}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'EvalOptions':
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f'unknown eval option keys: {sorted(unknown)}')
        d = dict(d)
        for key in ('locvar_window', 'interp_factors'):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)


def _same_dims(*vols: VolumeGrid) -> None:
    dims = {v.dims for v in vols}
    if len(dims) != 1:
        raise UsageError(f'volumes must share dims, got {sorted(dims)}')


def psnr(gt: VolumeGrid, pred: VolumeGrid) -> Union[float, str]:
    """
    ``20 log10(range / rmse)`` with the ground-truth data range as peak; ``'exact'`` when the volumes match.
    """
    _same_dims(gt, pred)
    diff = np.asarray(gt.values, dtype=np.float64) - pred.values
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return EXACT
    data_range = float(gt.values.max() - gt.values.min())
    if data_range == 0.0:
        raise DegenerateInputError('PSNR is undefined for a constant ground truth')
    return 20.0 * math.log10(data_range / math.sqrt(mse))


def corr_fields(a: VolumeGrid, b: VolumeGrid) -> float:
    """
    Pearson correlation over all voxels. Unlike the training regularizers, a constant input is an error here.
    """
    _same_dims(a, b)
    x = np.asarray(a.values, dtype=np.float64).ravel()
    y = np.asarray(b.values, dtype=np.float64).ravel()
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.dot(xc, xc))
    sy = float(np.dot(yc, yc))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError('correlation with a constant field is undefined')
    return float(np.clip(np.dot(xc, yc) / math.sqrt(sx * sy), -1.0, 1.0))


def clamp_variance(var: np.ndarray, floor: float = VAR_FLOOR) -> Tuple[np.ndarray, int]:
    var = np.asarray(var, dtype=np.float64)
    low = var < floor
    return np.where(low, floor, var), int(low.sum())


def nll_gaussian_field(gt: VolumeGrid, mean: VolumeGrid, var: VolumeGrid, floor: float = VAR_FLOOR) -> float:
    """
    Voxel mean of ``0.5 ln(2 pi var) + (y - mean)^2 / (2 var)``, with ``var`` clamped from below at ``floor``.
    """
    _same_dims(gt, mean, var)
    v, _ = clamp_variance(var.values, floor)
    r = np.asarray(gt.values, dtype=np.float64) - mean.values
    return float(np.mean(0.5 * np.log(2.0 * math.pi * v) + r * r / (2.0 * v)))


def error_field(gt: VolumeGrid, pred: VolumeGrid, kind: str = 'abs') -> VolumeGrid:
    _same_dims(gt, pred)
    diff = np.asarray(pred.values, dtype=np.float64) - gt.values
    values = np.abs(diff) if kind == 'abs' else diff * diff
    return VolumeGrid(values, gt.spacing)


@dataclass
class EvalReport:
    psnr_db: Union[float, str]
    corr_eu_error: Optional[float] = None
    corr_au_locvar: Optional[float] = None
    corr_au_interp: Optional[float] = None
    corr_au_gradient: Optional[float] = None
    nll_eu: Optional[float] = None
    nll_au: Optional[float] = None
    clamped_eu: int = 0
    clamped_au: int = 0
    reconstruction_seconds: Optional[float] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'EvalReport':
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> 'EvalReport':
        return cls.from_dict(json.loads(text))

    @staticmethod
    def csv_header() -> List[str]:
        return [f.name for f in dataclasses.fields(EvalReport) if f.name != 'config']

    def to_csv_row(self) -> str:
        buf = io.StringIO()
        row = self.to_dict()
        csv.writer(buf, lineterminator='\n').writerow(['' if row[k] is None else row[k] for k in self.csv_header()])
        return buf.getvalue()


def _correlation(name: str, a: VolumeGrid, b: VolumeGrid) -> Optional[float]:
    try:
        return corr_fields(a, b)
    except DegenerateInputError as e:
        logger.warning('%s left empty: %s', name, e)
        return None


def evaluate(gt: VolumeGrid, prediction: PredictionField, norm: Optional[NormParams] = None,
             options: Optional[EvalOptions] = None, config: Optional[Dict[str, Any]] = None) -> EvalReport:
    """
    Full metric set for one reconstruction.

    ``prediction.mean`` is in data units; AU and EU are in normalized units squared, so the error and NLL
    terms are computed after mapping ground truth and mean through ``norm``. Without ``norm`` everything
    is taken to be in data units. Variant outputs without AU/EU leave the uncertainty metrics empty, and a
    correlation against a constant field is left empty with a warning.
    """
    options = options or EvalOptions()
    options.validate()
    _same_dims(gt, prediction.mean)

    gt_n = apply_normalization(gt, norm) if norm is not None else gt
    mean_n = apply_normalization(prediction.mean, norm) if norm is not None else prediction.mean
    report = EvalReport(psnr(gt, prediction.mean), reconstruction_seconds=prediction.seconds,
                        config=dict(config or {}, options=options.to_dict()))

    if prediction.eu is not None:
        error = error_field(gt_n, mean_n, options.error_kind)
        report.corr_eu_error = _correlation('corr_eu_error', prediction.eu, error)
        report.nll_eu = nll_gaussian_field(gt_n, mean_n, prediction.eu, options.var_floor)
        report.clamped_eu = clamp_variance(prediction.eu.values, options.var_floor)[1]
    if prediction.au is not None:
        locvar = local_variance(gt, options.locvar_window)
        report.corr_au_locvar = _correlation('corr_au_locvar', prediction.au, locvar)
        interp = interpolation_error_field(gt, options.interp_factors)
        report.corr_au_interp = _correlation('corr_au_interp', prediction.au, interp)
        report.corr_au_gradient = _correlation('corr_au_gradient', prediction.au, gradient_magnitude(gt))
        report.nll_au = nll_gaussian_field(gt_n, mean_n, prediction.au, options.var_floor)
        report.clamped_au = clamp_variance(prediction.au.values, options.var_floor)[1]
    if report.clamped_eu or report.clamped_au:
        logger.warning('clamped %d EU and %d AU voxels to %g for NLL', report.clamped_eu, report.clamped_au,
                       options.var_floor)
    return report


class AblationResult(NamedTuple):
    deltas: Dict[str, float]
    regularized_dominates: bool


def _without_weights(config: Dict[str, Any]) -> Dict[str, Any]:
    config = {k: v for k, v in config.items() if k != 'weights'}
    if isinstance(config.get('train'), dict):
        config['train'] = {k: v for k, v in config['train'].items() if k != 'weights'}
    return config


def ablation_compare(report_with: EvalReport, report_without: EvalReport) -> AblationResult:
    """
    Signed per-metric differences ``with - without`` for two runs that differ only in their loss weights.
    """
    if _without_weights(report_with.config) != _without_weights(report_without.config):
        raise UsageError('ablation reports differ in more than their loss weights')
    a = report_with.to_dict()
    b = report_without.to_dict()
    deltas = {}
    for name in EvalReport.csv_header():
        x, y = a[name], b[name]
        if isinstance(x, (int, float)) and isinstance(y, (int, float)):
            deltas[name] = float(x - y)
    dominates = all(name in deltas and deltas[name] >= 0.0 for name in CORRELATION_METRICS)
    return AblationResult(deltas, dominates)
