"""
.. module:: config
   :platform: Unix, Windows
   :synopsis: Run configuration: volume spec, merged run config and the CLI > file > defaults resolution

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from pyrevinr.errors import ConfigError
from pyrevinr.evaluation import EvalOptions
from pyrevinr.losses import LossWeights, default_weights
from pyrevinr.models import ModelConfig, resolve_model_config
from pyrevinr.training import TrainConfig
from pyrevinr.volume import DTYPES, VolumeGrid, load_raw

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

SECTIONS = ('volume', 'model', 'train', 'weights', 'eval')
TOP_LEVEL = SECTIONS + ('command', 'out_dir')


@dataclass(frozen=True)
class VolumeSpec:
    path: str
    dims: Tuple[int, int, int]
    dtype: str = 'f32le'
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f'dims must be three positive sizes, got {self.dims}')
        if self.dtype not in DTYPES:
            raise ConfigError(f'dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}')
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ConfigError(f'spacing must be three positive values, got {self.spacing}')

    def load(self) -> VolumeGrid:
        return load_raw(self.path, self.dims, self.dtype, self.spacing)

    def to_dict(self) -> Dict[str, Any]:
        return {'path': self.path, 'dims': list(self.dims), 'dtype': self.dtype, 'spacing': list(self.spacing)}

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'VolumeSpec':
        if 'path' not in d or 'dims' not in d:
            raise ConfigError('volume needs a path and dims')
        return cls(str(d['path']), tuple(int(n) for n in d['dims']), str(d.get('dtype', 'f32le')),
                   tuple(float(s) for s in d.get('spacing', (1.0, 1.0, 1.0))))


@dataclass(frozen=True)
class RunConfig:
    """
    Fully materialized configuration for one CLI command; ``to_dict`` is the resolved-config snapshot.
    """
    command: str
    volume: Optional[VolumeSpec] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    out_dir: str = '.'
    eval: EvalOptions = field(default_factory=EvalOptions)

    def validate(self) -> None:
        if self.volume is not None:
            self.volume.validate()
        self.model.validate()
        self.train.validate()
        self.weights.validate()
        self.eval.validate()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'command': self.command,
            'volume': self.volume.to_dict() if self.volume is not None else None,
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'weights': self.weights.to_dict(),
            'out_dir': self.out_dir,
            'eval': self.eval.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'RunConfig':
        return resolve_run_config(d.get('command', 'train'), d)


def load_config_file(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f'{path} is not valid JSON: {e}') from e
    if not isinstance(config, dict):
        raise ConfigError(f'{path} must hold a JSON object')
    return config


def merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """
    Recursive dict merge; ``None`` values in ``override`` leave ``base`` untouched.
    """
    out = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict):
            out[key] = merge(out[key] if isinstance(out.get(key), dict) else {}, value)
        else:
            out[key] = value
    return out


def resolve_run_config(command: str, file_config: Optional[Dict[str, Any]] = None,
                       cli_overrides: Optional[Dict[str, Any]] = None,
                       defaults: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Merges built-in defaults, then ``defaults``, then the JSON config file, then CLI flags, and materializes
    every variant-dependent default (width, decoder width, loss weights).
    """
    merged = merge(merge(defaults or {}, file_config or {}), cli_overrides or {})
    unknown = set(merged) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f'unknown config sections: {sorted(unknown)}')

    model = resolve_model_config(ModelConfig.from_dict(merged.get('model', {})))
    weights = LossWeights.from_dict(merge(default_weights(model.variant).to_dict(), merged.get('weights', {})))
    train_section = dict(merged.get('train', {}))
    train_section['weights'] = weights.to_dict()
    train = TrainConfig.from_dict(train_section)
    eval_options = EvalOptions.from_dict(merged.get('eval', {}))
    volume = VolumeSpec.from_dict(merged['volume']) if merged.get('volume') else None

    run = RunConfig(command, volume, model, train, weights,
                    str(merged.get('out_dir', '.')), eval_options)
    run.validate()
    logger.debug('resolved config: %s', run.to_dict())
    return run
