"""
.. module:: training
   :platform: Unix, Windows
   :synopsis: Epoch-driven training loop with seeded shuffling, chunked backprop, checkpoints and resume

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


Every random stream is derived from ``TrainConfig.seed`` and the loop indices (epoch, batch, chunk), so a run
resumed from a checkpoint replays exactly the batches and dropout masks of an uninterrupted run.
"""

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from pyrevinr.errors import ConfigError, NumericError
from pyrevinr.losses import LossWeights, default_weights, first_non_finite, objective
from pyrevinr.models import ModelConfig, build, resolve_model_config
from pyrevinr.nn import (
    AdamState,
    Checkpoint,
    LrSchedule,
    Network,
    adam_init,
    adam_step,
    backward,
    check_architecture,
    forward,
    load_checkpoint,
    lr_at,
    save_checkpoint,
)
from pyrevinr.parallel import chunk_slices, map_chunks
from pyrevinr.volume import NormParams, VolumeGrid, gradient_magnitude, grid_coordinates, normalize

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

LOG_NAME = 'train_log.jsonl'
FINAL_CHECKPOINT = 'model.ckpt'
LAST_GOOD_CHECKPOINT = 'last_good.ckpt'


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 4096
    seed: int = 0
    base_lr: float = 5e-5
    lr_decay: float = 0.8
    lr_step: int = 15
    weights: Optional[LossWeights] = None
    checkpoint_every: int = 0
    deterministic: bool = True
    workers: int = 1
    chunk_size: int = 4096
    norm_lo: float = -1.0
    norm_hi: float = 1.0

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, self.lr_decay, self.lr_step)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f'epochs must be >= 1, got {self.epochs}')
        if self.batch_size < 2:
            raise ConfigError(f'batch_size must be >= 2, got {self.batch_size}')
        if not (self.base_lr > 0 and 0 < self.lr_decay <= 1 and self.lr_step >= 1):
            raise ConfigError('learning rate schedule needs base_lr > 0, 0 < decay <= 1, step >= 1')
        if self.checkpoint_every < 0:
            raise ConfigError(f'checkpoint_every must be >= 0, got {self.checkpoint_every}')
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigError('workers and chunk_size must be >= 1')
        if not self.norm_lo < self.norm_hi:
            raise ConfigError(f'normalization range must be increasing, got [{self.norm_lo}, {self.norm_hi}]')
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f'seed must be an unsigned 64-bit integer, got {self.seed}')
        if self.weights is not None:
            self.weights.validate()

    def weights_for(self, variant: str) -> LossWeights:
        return self.weights if self.weights is not None else default_weights(variant)

    def to_dict(self) -> Dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d['weights'] = None if self.weights is None else self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'TrainConfig':
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f'unknown train config keys: {sorted(unknown)}')
        d = dict(d)
        if d.get('weights') is not None:
            d['weights'] = LossWeights.from_dict(d['weights'])
        return cls(**d)


class TrainLogRecord(NamedTuple):
    epoch: int
    phase: str
    lr: float
    total: float
    components: Dict[str, float]
    weights: Dict[str, float]
    batches: int
    seconds: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self._asdict())


class TrainResult(NamedTuple):
    network: Network
    adam: AdamState
    log: List[TrainLogRecord]
    norm: NormParams
    next_epoch: int


class TrainingData(NamedTuple):
    points: np.ndarray
    values: np.ndarray
    gradient: Optional[np.ndarray]
    norm: NormParams


def training_data(volume: VolumeGrid, config: TrainConfig, with_gradient: bool = True) -> TrainingData:
    """
    Normalized values at every grid coordinate, plus the gradient magnitude the AU regularizer tracks.
    """
    normalized, norm = normalize(volume, config.norm_lo, config.norm_hi)
    gradient = gradient_magnitude(normalized).flat() if with_gradient else None
    return TrainingData(grid_coordinates(volume.dims).points, normalized.flat(), gradient, norm)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_slices(n: int, batch_size: int) -> List[slice]:
    """
    Consecutive batches over ``range(n)``; a final partial batch is kept only when it has at least 2 samples.
    """
    if n < 2:
        raise ConfigError(f'training needs at least 2 grid points, got {n}')
    slices = chunk_slices(n, batch_size)
    if slices[-1].stop - slices[-1].start < 2:
        slices = slices[:-1]
    return slices


def _sum_grads(parts: Sequence[List[np.ndarray]]) -> List[np.ndarray]:
    total = [g.copy() for g in parts[0]]
    for part in parts[1:]:
        for acc, g in zip(total, part):
            acc += g
    return total


def batch_step(net: Network, variant: str, points: np.ndarray, y: np.ndarray, g: Optional[np.ndarray],
               weights: LossWeights, epoch: int, n_epochs: int, seed: int, batch: int,
               chunk_size: int = 4096, workers: int = 1, deterministic: bool = True):
    """
    Forward, loss and backward for one batch. The batch is split into fixed chunks whose forward passes may
    run on workers; the loss sees the whole batch; chunk parameter gradients are summed in chunk order in
    deterministic mode and in completion order otherwise.

    :return: (BatchLossReport, parameter gradients aligned with ``net.parameters()``)
    """
    slices = chunk_slices(len(points), chunk_size)

    def run_forward(i: int, s: slice):
        rng = np.random.default_rng([seed, epoch, batch, i]) if net.dropout is not None else None
        return forward(net, points[s], 'train', rng)

    try:
        results = map_chunks(run_forward, slices, workers)
    except NumericError as e:
        raise NumericError('non-finite activation', layer=e.layer, epoch=epoch, batch=batch,
                           component='activation') from e

    outputs = [np.concatenate([r.outputs[k] for r in results]) for k in range(len(net.heads))]
    report, head_grads = objective(variant, outputs, y, g, weights, epoch, n_epochs)
    bad = first_non_finite(report)
    if bad is not None:
        raise NumericError('non-finite loss', epoch=epoch, batch=batch, component=bad)

    def run_backward(i: int, s: slice):
        return backward(net, results[i].cache, [hg[s] for hg in head_grads])

    parts = map_chunks(run_backward, slices, workers, ordered=deterministic)
    return report, _sum_grads(parts)


def _append_log(out_dir: Optional[str], record: Dict[str, Any]) -> None:
    if out_dir is None:
        return
    with open(os.path.join(out_dir, LOG_NAME), 'a', encoding='utf-8') as f:
        f.write(json.dumps(record, sort_keys=True) + '\n')


def _meta(model_config: ModelConfig, config: TrainConfig, weights: LossWeights, norm: NormParams,
          dims: Sequence[int], epoch: int) -> Dict[str, Any]:
    return {'model': model_config.to_dict(), 'train': config.to_dict(), 'weights': weights.to_dict(),
            'norm': norm.to_dict(), 'dims': list(dims), 'epoch': epoch}


def _save_last_good(out_dir: Optional[str], net: Network, adam: AdamState, meta: Dict[str, Any]) -> None:
    # the failing step raised before adam_step, so net and adam hold the last finite update
    if out_dir is None:
        return
    if not all(np.all(np.isfinite(p)) for p in net.parameters()):
        logger.warning('parameters are not finite, no %s written', LAST_GOOD_CHECKPOINT)
        return
    save_checkpoint(os.path.join(out_dir, LAST_GOOD_CHECKPOINT), net, adam, meta)
    logger.info('wrote %s for epoch %d', LAST_GOOD_CHECKPOINT, meta['epoch'])


def _run(net: Network, adam: AdamState, model_config: ModelConfig, volume: VolumeGrid, config: TrainConfig,
         start_epoch: int, out_dir: Optional[str]) -> TrainResult:
    variant = model_config.variant
    weights = config.weights_for(variant)
    data = training_data(volume, config, with_gradient=variant == 'rev')
    n = len(data.values)
    slices = batch_slices(n, config.batch_size)
    log: List[TrainLogRecord] = []

    for epoch in range(start_epoch, config.epochs):
        start = time.perf_counter()
        lr = lr_at(config.schedule, epoch)
        order = epoch_permutation(n, config.seed, epoch)
        sums: Dict[str, float] = {}
        total = 0.0
        report = None
        for b, s in enumerate(slices):
            idx = order[s]
            g = data.gradient[idx] if data.gradient is not None else None
            try:
                report, grads = batch_step(net, variant, data.points[idx], data.values[idx], g, weights, epoch,
                                           config.epochs, config.seed, b, config.chunk_size, config.workers,
                                           config.deterministic)
            except NumericError as e:
                _append_log(out_dir, {'event': 'abort', 'epoch': e.epoch, 'batch': e.batch,
                                      'component': e.component, 'layer': e.layer})
                logger.error('training aborted: %s', e)
                _save_last_good(out_dir, net, adam, _meta(model_config, config, weights, data.norm, volume.dims,
                                                          epoch - 1))
                raise
            _, adam = adam_step(net.parameters(), grads, adam, lr)
            total += report.total
            for name, value in report.components.items():
                sums[name] = sums.get(name, 0.0) + value

        nb = len(slices)
        record = TrainLogRecord(epoch, report.phase, lr, total / nb, {k: v / nb for k, v in sums.items()},
                                dict(report.weights), nb, time.perf_counter() - start)
        log.append(record)
        _append_log(out_dir, record.to_dict())
        logger.info('epoch %d phase=%s lr=%.3e loss=%.6e', epoch, record.phase, lr, record.total)

        if out_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f'epoch_{epoch:04d}.ckpt'), net, adam,
                            _meta(model_config, config, weights, data.norm, volume.dims, epoch))

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, FINAL_CHECKPOINT), net, adam,
                        _meta(model_config, config, weights, data.norm, volume.dims, config.epochs - 1))
    return TrainResult(net, adam, log, data.norm, config.epochs)


def train(model_config: ModelConfig, volume: VolumeGrid, config: TrainConfig,
          out_dir: Optional[str] = None) -> TrainResult:
    """
    Trains a fresh network of ``model_config`` on ``volume``.

    With ``out_dir`` set, appends one JSON record per epoch to ``train_log.jsonl``, writes
    ``epoch_NNNN.ckpt`` every ``checkpoint_every`` epochs and ``model.ckpt`` at the end. A non-finite
    activation or loss raises :class:`NumericError` after writing ``last_good.ckpt`` with the parameters and
    Adam moments of the last finite update; ``resume`` restarts from the epoch it was in.
    """
    config.validate()
    model_config = resolve_model_config(model_config)
    net = build(model_config, np.random.default_rng(config.seed))
    logger.info('training %s for %d epochs on %s grid', model_config.variant, config.epochs, volume.dims)
    return _run(net, adam_init(net.parameters()), model_config, volume, config, 0, out_dir)


def resume(checkpoint: Union[str, Checkpoint], volume: VolumeGrid, config: TrainConfig,
           out_dir: Optional[str] = None, model_config: Optional[ModelConfig] = None) -> TrainResult:
    """
    Continues training from a checkpoint written by :func:`train`. Parameters, Adam moments and the epoch
    counter are restored; when ``model_config`` is given its architecture must match the checkpoint's.
    """
    config.validate()
    if isinstance(checkpoint, str):
        checkpoint = load_checkpoint(checkpoint)
    net = checkpoint.network
    if model_config is not None:
        check_architecture(net, resolve_model_config(model_config).to_dict())
    model_config = ModelConfig.from_dict(net.descriptor)
    adam = checkpoint.adam if checkpoint.adam is not None else adam_init(net.parameters())
    next_epoch = int(checkpoint.meta.get('epoch', -1)) + 1

    if next_epoch >= config.epochs:
        logger.warning('checkpoint already covers %d epochs, nothing to resume', next_epoch)
        _append_log(out_dir, {'event': 'resume_noop', 'next_epoch': next_epoch, 'epochs': config.epochs})
        norm = NormParams.from_dict(checkpoint.meta['norm']) if 'norm' in checkpoint.meta else \
            normalize(volume, config.norm_lo, config.norm_hi)[1]
        return TrainResult(net, adam, [], norm, next_epoch)

    logger.info('resuming %s at epoch %d', model_config.variant, next_epoch)
    return _run(net, adam, model_config, volume, config, next_epoch, out_dir)
