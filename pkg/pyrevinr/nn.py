"""
.. module:: nn
   :platform: Unix, Windows
   :synopsis: Residual sine networks with hand-written reverse mode, Adam with step decay, and checkpoints

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

import copy
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from pyrevinr.errors import ArchitectureMismatchError, ContractError, NumericError, UsageError

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'PYRVINR\x00'
CHECKPOINT_VERSION = 1

# scale applied to linear output heads so evidential outputs start near their link's fixed point
HEAD_INIT_SCALE = 1e-2


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    omega: float = 1.0
    activation: str = 'sine'

    @property
    def fan_in(self) -> int:
        return int(self.weights.shape[1])

    @property
    def fan_out(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class ResidualSineBlock:
    first: DenseLayer
    second: DenseLayer


class DropoutSite(NamedTuple):
    block: int
    rate: float


@dataclass
class Network:
    """
    Input sine layer, residual sine blocks, then one or more heads (each a list of dense layers).
    ``descriptor`` carries the model-level metadata (variant, widths, ...) used for checkpoint checks.
    """
    input_layer: DenseLayer
    blocks: List[ResidualSineBlock]
    heads: List[List[DenseLayer]]
    dropout: Optional[DropoutSite] = None
    descriptor: Dict[str, Any] = field(default_factory=dict)

    def layers(self) -> List[DenseLayer]:
        layers = [self.input_layer]
        for block in self.blocks:
            layers.extend((block.first, block.second))
        for head in self.heads:
            layers.extend(head)
        return layers

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers():
            params.extend((layer.weights, layer.biases))
        return params

    @property
    def dtype(self) -> np.dtype:
        return self.input_layer.weights.dtype

    def astype(self, dtype) -> 'Network':
        net = copy.deepcopy(self)
        for layer in net.layers():
            layer.weights = layer.weights.astype(dtype)
            layer.biases = layer.biases.astype(dtype)
        return net


class ForwardCache(NamedTuple):
    records: List[Tuple[np.ndarray, np.ndarray]]
    block_inputs: List[np.ndarray]
    mask: Optional[np.ndarray]


class ForwardResult(NamedTuple):
    outputs: List[np.ndarray]
    cache: Optional[ForwardCache]


def _dense_forward(layer: DenseLayer, x: np.ndarray, index: int) -> Tuple[np.ndarray, np.ndarray]:
    z = x @ layer.weights.T + layer.biases
    if layer.activation == 'sine':
        pre = layer.omega * z if layer.omega != 1.0 else z
        y = np.sin(pre)
    else:
        pre = z
        y = z
    if not np.isfinite(y).all():
        raise NumericError('non-finite activation', layer=index)
    return y, pre


def _dense_backward(layer: DenseLayer, x: np.ndarray, pre: np.ndarray,
                    dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if layer.activation == 'sine':
        dz = dy * np.cos(pre)
        if layer.omega != 1.0:
            dz = dz * layer.omega
    else:
        dz = dy
    return dz @ layer.weights, dz.T @ x, dz.sum(axis=0)


def forward(net: Network, points: np.ndarray, mode: str = 'eval',
            rng: Optional[np.random.Generator] = None) -> ForwardResult:
    """
    Runs the network on an (N, 3) array of coordinates.

    In ``train`` mode inverted dropout is applied at the configured site and the activations needed by
    :func:`backward` are cached. ``eval`` mode is a pure function of parameters and input.
    """
    if mode not in ('train', 'eval'):
        raise UsageError(f'mode must be train or eval, got {mode!r}')
    train = mode == 'train'
    dropout = net.dropout if train and net.dropout is not None and net.dropout.rate > 0 else None
    if dropout is not None and rng is None:
        raise UsageError('train-mode dropout needs an rng')

    x = np.asarray(points, dtype=net.dtype)
    records = []
    block_inputs = []
    mask = None

    h, pre = _dense_forward(net.input_layer, x, 0)
    records.append((x, pre))
    index = 1
    for b, block in enumerate(net.blocks):
        block_inputs.append(h)
        s1, pre1 = _dense_forward(block.first, h, index)
        s2, pre2 = _dense_forward(block.second, s1, index + 1)
        records.append((h, pre1))
        records.append((s1, pre2))
        index += 2
        h = 0.5 * (h + s2)
        if dropout is not None and dropout.block == b:
            keep = rng.random(h.shape) >= dropout.rate
            mask = keep.astype(net.dtype) / net.dtype.type(1.0 - dropout.rate)
            h = h * mask

    outputs = []
    for head in net.heads:
        y = h
        for layer in head:
            y_next, pre = _dense_forward(layer, y, index)
            records.append((y, pre))
            y = y_next
            index += 1
        outputs.append(y)

    cache = ForwardCache(records, block_inputs, mask) if train else None
    return ForwardResult(outputs, cache)


def backward(net: Network, cache: Optional[ForwardCache], output_grads: Sequence[np.ndarray]) -> List[np.ndarray]:
    """
    Reverse-mode pass. ``output_grads[k]`` is dLoss/d(head k output); the result is aligned with
    ``net.parameters()``.
    """
    if cache is None:
        raise UsageError('backward needs the cache of a train-mode forward pass')
    if len(output_grads) != len(net.heads):
        raise UsageError(f'expected {len(net.heads)} output gradients, got {len(output_grads)}')

    layers = net.layers()
    layer_grads: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * len(layers)

    index = len(layers)
    dh = None
    for head, grad in reversed(list(zip(net.heads, output_grads))):
        dy = np.asarray(grad, dtype=net.dtype)
        for layer in reversed(head):
            index -= 1
            x, pre = cache.records[index]
            dy, dw, db = _dense_backward(layer, x, pre, dy)
            layer_grads[index] = (dw, db)
        dh = dy if dh is None else dh + dy

    for b in reversed(range(len(net.blocks))):
        block = net.blocks[b]
        if cache.mask is not None and net.dropout.block == b:
            dh = dh * cache.mask
        ds2 = 0.5 * dh
        x2, pre2 = cache.records[index - 1]
        ds1, dw2, db2 = _dense_backward(block.second, x2, pre2, ds2)
        x1, pre1 = cache.records[index - 2]
        dx1, dw1, db1 = _dense_backward(block.first, x1, pre1, ds1)
        layer_grads[index - 1] = (dw2, db2)
        layer_grads[index - 2] = (dw1, db1)
        index -= 2
        dh = 0.5 * dh + dx1

    x0, pre0 = cache.records[0]
    _, dw0, db0 = _dense_backward(net.input_layer, x0, pre0, dh)
    layer_grads[0] = (dw0, db0)

    grads = []
    for dw, db in layer_grads:
        grads.extend((dw, db))
    return grads


def parameter_count(net: Network) -> int:
    return int(sum(p.size for p in net.parameters()))


def model_size_bytes(net: Network, bytes_per_param: int = 4) -> int:
    """
    Size of the parameter payload at 32-bit precision.
    """
    return parameter_count(net) * bytes_per_param


def compression_ratio(volume_bytes: int, net: Network) -> float:
    return volume_bytes / model_size_bytes(net)


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int, omega: float, activation: str,
                first: bool, dtype) -> DenseLayer:
    if first:
        bound = 1.0 / fan_in
    elif activation == 'sine':
        bound = math.sqrt(6.0 / fan_in) / omega
    else:
        bound = math.sqrt(6.0 / fan_in) * HEAD_INIT_SCALE
    weights = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
    biases = rng.uniform(-bound, bound, size=fan_out).astype(dtype)
    return DenseLayer(weights, biases, float(omega), activation)


def build_network(width: int, blocks: int, heads: Sequence[Sequence[Tuple[int, str]]],
                  rng: np.random.Generator, first_omega: float = 30.0, hidden_omega: float = 1.0,
                  dropout: Optional[DropoutSite] = None, input_dim: int = 3, dtype=np.float32,
                  descriptor: Optional[Dict[str, Any]] = None) -> Network:
    """
    Builds and initializes a residual sine network.

    :param heads: per head, a list of (fan_out, activation) pairs applied after the shared trunk
    """
    input_layer = _init_layer(rng, input_dim, width, first_omega, 'sine', True, dtype)
    block_list = [
        ResidualSineBlock(
            _init_layer(rng, width, width, hidden_omega, 'sine', False, dtype),
            _init_layer(rng, width, width, hidden_omega, 'sine', False, dtype),
        )
        for _ in range(blocks)
    ]
    head_list = []
    for spec in heads:
        fan_in = width
        layers = []
        for fan_out, activation in spec:
            omega = hidden_omega if activation == 'sine' else 1.0
            layers.append(_init_layer(rng, fan_in, fan_out, omega, activation, False, dtype))
            fan_in = fan_out
        head_list.append(layers)
    return Network(input_layer, block_list, head_list, dropout, dict(descriptor or {}))


def architecture(net: Network) -> Dict[str, Any]:
    """
    JSON-able description of the network structure (no parameter values).
    """
    return {
        'descriptor': net.descriptor,
        'layers': [[layer.fan_out, layer.fan_in, layer.omega, layer.activation] for layer in net.layers()],
        'blocks': len(net.blocks),
        'heads': [len(head) for head in net.heads],
        'dropout': list(net.dropout) if net.dropout is not None else None,
    }


def network_from_architecture(arch: Dict[str, Any], dtype=np.float32) -> Network:
    """
    Rebuilds a zero-initialized network matching :func:`architecture` output.
    """
    layers = [DenseLayer(np.zeros((out, fan_in), dtype=dtype), np.zeros(out, dtype=dtype), float(omega), activation)
              for out, fan_in, omega, activation in arch['layers']]
    input_layer = layers[0]
    n_blocks = arch['blocks']
    blocks = [ResidualSineBlock(layers[1 + 2 * b], layers[2 + 2 * b]) for b in range(n_blocks)]
    heads = []
    offset = 1 + 2 * n_blocks
    for n_layers in arch['heads']:
        heads.append(layers[offset:offset + n_layers])
        offset += n_layers
    dropout = DropoutSite(int(arch['dropout'][0]), float(arch['dropout'][1])) if arch.get('dropout') else None
    return Network(input_layer, blocks, heads, dropout, dict(arch.get('descriptor', {})))


def check_architecture(net: Network, expected: Dict[str, Any]) -> None:
    actual = net.descriptor
    if actual != expected:
        raise ArchitectureMismatchError(expected, actual)


class AdamState(NamedTuple):
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Sequence[np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, beta1, beta2, eps)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float) -> Tuple[Sequence[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update. Parameters and moment buffers are updated in place; the returned
    state carries the incremented step counter.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise UsageError(f'adam_step got {len(params)} params, {len(grads)} grads, {len(state.m)} moments')
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise UsageError(f'shape mismatch in adam_step: param {p.shape}, grad {g.shape}, moment {m.shape}')
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state._replace(t=t)


class LrSchedule(NamedTuple):
    base_lr: float = 5e-5
    decay: float = 0.8
    step_size: int = 15


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """
    Step decay: ``base_lr * decay ** floor(epoch / step_size)``.
    """
    return schedule.base_lr * schedule.decay ** (epoch // schedule.step_size)


class Checkpoint(NamedTuple):
    network: Network
    adam: Optional[AdamState]
    meta: Dict[str, Any]


def save_checkpoint(path: str, net: Network, adam: Optional[AdamState] = None,
                    meta: Optional[Dict[str, Any]] = None) -> None:
    """
    Writes the versioned binary checkpoint (magic, version, JSON header, little-endian parameter payload,
    then Adam moments if given) and a ``<path>.json`` mirror of the header.
    """
    dtype = np.dtype(net.dtype).newbyteorder('<')
    header = {
        'architecture': architecture(net),
        'dtype': dtype.str,
        'parameter_count': parameter_count(net),
        'adam': None if adam is None else
        {'t': adam.t, 'beta1': adam.beta1, 'beta2': adam.beta2, 'eps': adam.eps},
        'meta': meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    arrays = list(net.parameters())
    if adam is not None:
        arrays += list(adam.m) + list(adam.v)

    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<HI', CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype=dtype).tobytes())
    with open(path + '.json', 'w', encoding='utf-8') as f:
        json.dump(header, f, indent=2, sort_keys=True)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, 'rb') as f:
        blob = f.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ContractError(f'{path} is not a pyrevinr checkpoint')
    offset = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from('<HI', blob, offset)
    if version != CHECKPOINT_VERSION:
        raise ContractError(f'{path}: unsupported checkpoint version {version}')
    offset += struct.calcsize('<HI')
    header = json.loads(blob[offset:offset + header_len].decode('utf-8'))
    offset += header_len

    dtype = np.dtype(header['dtype'])
    net = network_from_architecture(header['architecture'], dtype=dtype.newbyteorder('='))
    params = net.parameters()
    adam = None
    if header['adam'] is not None:
        adam = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                         int(header['adam']['t']), float(header['adam']['beta1']),
                         float(header['adam']['beta2']), float(header['adam']['eps']))
    targets = list(params) + ([] if adam is None else list(adam.m) + list(adam.v))
    for target in targets:
        n = target.size * dtype.itemsize
        target[...] = np.frombuffer(blob, dtype=dtype, count=target.size, offset=offset).reshape(target.shape)
        offset += n
    if offset != len(blob):
        raise ContractError(f'{path}: payload has {len(blob) - offset} trailing bytes')
    return Checkpoint(net, adam, header['meta'])
