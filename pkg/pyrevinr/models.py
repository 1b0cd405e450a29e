"""
.. module:: models
   :platform: Unix, Windows
   :synopsis: The four INR variants (Det, REV, MCD, RMD) and their mean/AU/EU prediction contract

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

import dataclasses
import logging
import time
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from pyrevinr.errors import ConfigError, ResourceError, UsageError
from pyrevinr.evidential import NIGParams, RawEvidentialOutput, link, positive_link, predictive_moments
from pyrevinr.nn import DropoutSite, Network, build_network, forward
from pyrevinr.parallel import chunk_slices, map_chunks
from pyrevinr.volume import NormParams, VolumeGrid, denormalize, grid_coordinates, volume_from_flat

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

VARIANTS = ('det', 'rev', 'mcd', 'rmd')

# head output width for the single-head variants
HEAD_OUTPUTS: Dict[str, int] = {'det': 1, 'rev': 4, 'mcd': 2}

DEFAULT_CHUNK = 4096
DEFAULT_MEMORY_BUDGET = 4 * 1024 ** 3


@dataclass(frozen=True)
class ModelConfig:
    variant: str = 'rev'
    width: Optional[int] = None
    blocks: int = 3
    decoders: int = 5
    decoder_width: Optional[int] = None
    dropout_rate: float = 0.1
    mc_passes: int = 20
    first_omega: float = 30.0
    hidden_omega: float = 1.0
    size_budget_kb: float = 249.0

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f'variant must be one of {VARIANTS}, got {self.variant!r}')
        if self.width is not None and self.width < 1:
            raise ConfigError(f'width must be >= 1, got {self.width}')
        if self.blocks < 1:
            raise ConfigError(f'blocks must be >= 1, got {self.blocks}')
        if self.variant == 'rmd' and self.decoders < 2:
            raise ConfigError(f'rmd needs at least 2 decoders, got {self.decoders}')
        if self.decoder_width is not None and self.decoder_width < 1:
            raise ConfigError(f'decoder_width must be >= 1, got {self.decoder_width}')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f'dropout_rate must be in [0, 1), got {self.dropout_rate}')
        if self.mc_passes < 2:
            raise ConfigError(f'mc_passes must be >= 2, got {self.mc_passes}')
        if self.first_omega <= 0 or self.hidden_omega <= 0:
            raise ConfigError('sine frequencies must be positive')

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> 'ModelConfig':
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f'unknown model config keys: {sorted(unknown)}')
        return cls(**d)


class PointPrediction(NamedTuple):
    mean: np.ndarray
    au: Optional[np.ndarray]
    eu: Optional[np.ndarray]


class PredictionField(NamedTuple):
    mean: VolumeGrid
    au: Optional[VolumeGrid]
    eu: Optional[VolumeGrid]
    seconds: float


def rmd_trunk_params(width: int, blocks: int, input_dim: int = 3) -> int:
    return (input_dim + 1) * width + blocks * 2 * (width * width + width)


def rmd_decoder_params(width: int, decoder_width: int) -> int:
    return width * decoder_width + decoder_width + 2 * decoder_width + 2


def rmd_layout(width: int, blocks: int, decoders: int, budget_kb: float) -> int:
    """
    Decoder hidden width that puts the whole RMD network closest to ``budget_kb`` (1 KB = 1000 bytes)
    at 32-bit parameters, given the shared trunk of ``blocks`` residual blocks of ``width``.
    """
    budget_params = budget_kb * 1000.0 / 4.0
    spare = budget_params - rmd_trunk_params(width, blocks) - 2 * decoders
    decoder_width = int(round(spare / (decoders * (width + 3))))
    if decoder_width < 1:
        raise ConfigError(f'rmd trunk of {blocks} blocks at width {width} already exceeds {budget_kb} KB')
    return decoder_width


def resolve_model_config(config: ModelConfig) -> ModelConfig:
    """
    Materializes variant-dependent defaults (width, rmd decoder width).
    """
    config.validate()
    width = config.width if config.width is not None else (70 if config.variant == 'rmd' else 100)
    decoder_width = config.decoder_width
    if config.variant == 'rmd' and decoder_width is None:
        decoder_width = rmd_layout(width, config.blocks, config.decoders, config.size_budget_kb)
    return dataclasses.replace(config, width=width, decoder_width=decoder_width)


def build(config: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> Network:
    """
    Builds the network for a variant: det (1 output), rev (4 evidential outputs), mcd (mean and variance
    outputs, dropout after the last residual block) or rmd (shared trunk, ``decoders`` two-output heads).
    """
    config = resolve_model_config(config)
    dropout = None
    if config.variant == 'rmd':
        heads = [[(config.decoder_width, 'sine'), (2, 'linear')] for _ in range(config.decoders)]
    else:
        heads = [[(HEAD_OUTPUTS[config.variant], 'linear')]]
    if config.variant == 'mcd':
        dropout = DropoutSite(config.blocks - 1, config.dropout_rate)

    net = build_network(config.width, config.blocks, heads, rng, config.first_omega, config.hidden_omega,
                        dropout, dtype=dtype, descriptor=config.to_dict())
    logger.debug('built %s network: %s', config.variant, config.to_dict())
    return net


def variant_of(net: Network) -> str:
    variant = net.descriptor.get('variant')
    if variant not in VARIANTS:
        raise UsageError(f'network descriptor does not name a known variant: {variant!r}')
    return variant


def eval_heads(net: Network, points: np.ndarray, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> List[np.ndarray]:
    """
    Eval-mode forward over ``points`` in chunks; returns every head's output as 64-bit arrays.
    """
    points = np.asarray(points)
    slices = chunk_slices(len(points), chunk_size)
    parts = map_chunks(lambda i, s: forward(net, points[s], 'eval').outputs, slices, workers)
    return [np.concatenate([p[k] for p in parts]).astype(np.float64) for k in range(len(net.heads))]


def det_predict(net: Network, points: np.ndarray, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> PointPrediction:
    return PointPrediction(eval_heads(net, points, chunk_size, workers)[0][:, 0], None, None)


def rev_nig(net: Network, points: np.ndarray, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> NIGParams:
    raw = eval_heads(net, points, chunk_size, workers)[0]
    return link(RawEvidentialOutput(raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3]))


def rev_predict(net: Network, points: np.ndarray, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> PointPrediction:
    """
    Single deterministic pass: link the four raw outputs, then take the closed-form moments.
    """
    moments = predictive_moments(rev_nig(net, points, chunk_size, workers))
    return PointPrediction(moments.mean, moments.au, moments.eu)


def _stream_seed(rng: Union[np.random.Generator, int, None]) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 63))
    return int(rng or 0)


def mcd_predict(net: Network, points: np.ndarray, n: int, rng: Union[np.random.Generator, int, None] = None,
                chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> PointPrediction:
    """
    ``n`` stochastic passes with dropout active. Mean and AU are the pass means, EU the population variance
    of the pass means.

    Chunk ``i`` draws its dropout masks from ``default_rng([seed, i])`` where ``seed`` comes from ``rng``;
    chunk boundaries depend only on ``chunk_size``, so results do not depend on ``workers``.
    """
    if n < 2:
        raise ConfigError(f'mcd_predict needs at least 2 passes, got {n}')
    points = np.asarray(points)
    seed = _stream_seed(rng)

    def run(index: int, s: slice):
        stream = np.random.default_rng([seed, index])
        mean = au = m2 = 0.0
        for k in range(1, n + 1):
            out = forward(net, points[s], 'train', stream).outputs[0].astype(np.float64)
            mu = out[:, 0]
            delta = mu - mean
            mean = mean + delta / k
            m2 = m2 + delta * (mu - mean)
            au = au + (positive_link(out[:, 1]) - au) / k
        return mean, au, m2 / n

    parts = map_chunks(run, chunk_slices(len(points), chunk_size), workers)
    mean, au, eu = (np.concatenate([p[j] for p in parts]) for j in range(3))
    return PointPrediction(mean, au, eu)


def rmd_predict(net: Network, points: np.ndarray, chunk_size: int = DEFAULT_CHUNK, workers: int = 1) -> PointPrediction:
    """
    Decoder-mean value and AU, population variance of decoder values as EU; one deterministic pass.
    """
    outputs = eval_heads(net, points, chunk_size, workers)
    mean = au = m2 = 0.0
    for k, out in enumerate(outputs, start=1):
        mu = out[:, 0]
        delta = mu - mean
        mean = mean + delta / k
        m2 = m2 + delta * (mu - mean)
        au = au + (positive_link(out[:, 1]) - au) / k
    return PointPrediction(mean, au, m2 / len(outputs))


def predict(net: Network, points: np.ndarray, mc_passes: Optional[int] = None,
            rng: Union[np.random.Generator, int, None] = None, chunk_size: int = DEFAULT_CHUNK,
            workers: int = 1) -> PointPrediction:
    variant = variant_of(net)
    if variant == 'det':
        return det_predict(net, points, chunk_size, workers)
    if variant == 'rev':
        return rev_predict(net, points, chunk_size, workers)
    if variant == 'mcd':
        n = mc_passes if mc_passes is not None else int(net.descriptor.get('mc_passes', 20))
        return mcd_predict(net, points, n, rng, chunk_size, workers)
    return rmd_predict(net, points, chunk_size, workers)


def _check_budget(dims: Sequence[int], memory_budget: int) -> None:
    voxels = int(np.prod(dims))
    # coordinates (3) plus mean/AU/EU and one working copy per output, 64-bit each
    required = voxels * 8 * 8
    if required > memory_budget:
        raise ResourceError(f'reconstruction at dims {tuple(dims)}', required, memory_budget)


def reconstruct(net: Network, dims: Sequence[int], norm: Optional[NormParams] = None,
                mc_passes: Optional[int] = None, seed: int = 0, chunk_size: int = DEFAULT_CHUNK,
                workers: int = 1, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> PredictionField:
    """
    Evaluates the model at every grid point of ``dims``. The mean is mapped back to data units with
    ``norm``; AU and EU stay in normalized units squared.
    """
    _check_budget(dims, memory_budget)
    start = time.perf_counter()
    points = grid_coordinates(dims).points
    pred = predict(net, points, mc_passes, seed, chunk_size, workers)
    seconds = time.perf_counter() - start

    mean = volume_from_flat(pred.mean, dims)
    if norm is not None:
        mean = denormalize(mean, norm)
    au = volume_from_flat(pred.au, dims) if pred.au is not None else None
    eu = volume_from_flat(pred.eu, dims) if pred.eu is not None else None
    logger.info('reconstructed %s voxels in %.3f s', int(np.prod(dims)), seconds)
    return PredictionField(mean, au, eu, seconds)


def rev_nig_fields(net: Network, dims: Sequence[int], chunk_size: int = DEFAULT_CHUNK,
                   workers: int = 1) -> Dict[str, VolumeGrid]:
    """
    The four evidential parameters as co-registered volumes.
    """
    if variant_of(net) != 'rev':
        raise UsageError('NIG fields exist only for the rev variant')
    nig = rev_nig(net, grid_coordinates(dims).points, chunk_size, workers)
    return {name: volume_from_flat(np.asarray(value), dims) for name, value in nig._asdict().items()}
