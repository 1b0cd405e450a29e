"""
.. module:: volume
   :platform: Unix, Windows
   :synopsis: Loading, normalizing, resampling and deriving auxiliary fields from gridded scalar volumes

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

import json
import logging
import os
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pyrevinr.errors import DomainError, InvariantError, SizeMismatchError, UsageError

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

# raw dtype names accepted on the command line and their numpy equivalents
DTYPES: Dict[str, str] = {
    'f32le': '<f4',
    'f64le': '<f8',
    'u8': 'u1',
    'u16le': '<u2',
}

Dims = Tuple[int, int, int]


class NormParams(NamedTuple):
    data_min: float
    data_max: float
    target_lo: float = -1.0
    target_hi: float = 1.0

    @property
    def scale(self) -> float:
        """
        Data units per normalized unit.
        """
        return (self.data_max - self.data_min) / (self.target_hi - self.target_lo)

    def to_dict(self) -> Dict[str, float]:
        return {'min': self.data_min, 'max': self.data_max, 'lo': self.target_lo, 'hi': self.target_hi}

    @classmethod
    def from_dict(cls, d: Dict[str, float]) -> 'NormParams':
        return cls(float(d['min']), float(d['max']), float(d['lo']), float(d['hi']))


class VolumeGrid(NamedTuple):
    """
    A scalar field on a regular grid. ``values`` is indexed ``[x, y, z]``; the flat order (x fastest)
    is ``values.ravel(order='F')``.
    """
    values: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def dims(self) -> Dims:
        return tuple(int(n) for n in self.values.shape)

    @property
    def size(self) -> int:
        return int(self.values.size)

    def flat(self) -> np.ndarray:
        return self.values.ravel(order='F')


class CoordinateBatch(NamedTuple):
    points: np.ndarray
    targets: Optional[np.ndarray] = None


def volume_from_array(values: np.ndarray, spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> VolumeGrid:
    """
    Wraps a 3D array indexed ``[x, y, z]`` as a VolumeGrid, checking shape, spacing and finiteness.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 1:
        raise DomainError(f'volume values must be a non-empty 3D array, got shape {values.shape}')
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or min(spacing) <= 0:
        raise DomainError(f'spacing must be three positive numbers, got {spacing}')
    if not np.isfinite(values).all():
        raise InvariantError('volume contains non-finite values')
    return VolumeGrid(values, spacing)


def volume_from_flat(flat: np.ndarray, dims: Sequence[int], spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> VolumeGrid:
    dims = _check_dims(dims)
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != int(np.prod(dims)):
        raise UsageError(f'{flat.size} values cannot fill dims {dims}')
    return volume_from_array(flat.reshape(dims, order='F'), spacing)


def _check_dims(dims: Sequence[int]) -> Dims:
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise DomainError(f'dims must be three positive integers, got {dims}')
    return dims


def load_raw(path: str, dims: Sequence[int], dtype: str = 'f32le',
             spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> VolumeGrid:
    """
    Reads a headerless, x-fastest binary volume.

    :param path: raw file
    :param dims: (nx, ny, nz)
    :param dtype: one of f32le, f64le, u8, u16le
    :return: VolumeGrid with 64-bit values
    """
    dims = _check_dims(dims)
    if dtype not in DTYPES:
        raise UsageError(f'unknown raw dtype {dtype!r}, expected one of {sorted(DTYPES)}')
    np_dtype = np.dtype(DTYPES[dtype])
    expected = int(np.prod(dims)) * np_dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise SizeMismatchError(path, expected, actual)

    data = np.fromfile(path, dtype=np_dtype).astype(np.float64)
    logger.debug('loaded %s dims=%s dtype=%s', path, dims, dtype)
    return volume_from_array(data.reshape(dims, order='F'), spacing)


def save_raw(path: str, vol: VolumeGrid, dtype: str = 'f32le') -> None:
    if dtype not in DTYPES:
        raise UsageError(f'unknown raw dtype {dtype!r}, expected one of {sorted(DTYPES)}')
    vol.flat().astype(DTYPES[dtype]).tofile(path)


def write_volume(path: str, vol: VolumeGrid, field_kind: str, norm: Optional[NormParams] = None,
                 **extra: Any) -> str:
    """
    Writes ``vol`` as little-endian 64-bit floats plus a ``<path>.json`` sidecar. Returns the sidecar path.
    """
    vol.flat().astype('<f8').tofile(path)
    sidecar = {
        'dims': list(vol.dims),
        'spacing': list(vol.spacing),
        'dtype': 'f64le',
        'norm': norm.to_dict() if norm is not None else None,
        'field_kind': field_kind,
    }
    sidecar.update(extra)
    sidecar_path = path + '.json'
    with open(sidecar_path, 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    return sidecar_path


def read_volume(path: str) -> Tuple[VolumeGrid, Dict[str, Any]]:
    """
    Reads a volume written by :func:`write_volume`, returning it with its sidecar.
    """
    with open(path + '.json', 'r', encoding='utf-8') as f:
        sidecar = json.load(f)
    vol = load_raw(path, sidecar['dims'], sidecar.get('dtype', 'f64le'), sidecar.get('spacing', (1.0, 1.0, 1.0)))
    return vol, sidecar


def normalize(vol: VolumeGrid, lo: float = -1.0, hi: float = 1.0) -> Tuple[VolumeGrid, NormParams]:
    """
    Affinely maps the volume so that its minimum lands on ``lo`` and its maximum on ``hi``.
    """
    if not hi > lo:
        raise DomainError(f'normalization target must satisfy hi > lo, got [{lo}, {hi}]')
    data_min = float(vol.values.min())
    data_max = float(vol.values.max())
    if not data_max > data_min:
        raise DomainError(f'cannot normalize a constant volume (value {data_min})')
    norm = NormParams(data_min, data_max, float(lo), float(hi))
    return apply_normalization(vol, norm), norm


def apply_normalization(vol: VolumeGrid, norm: NormParams) -> VolumeGrid:
    values = (vol.values - norm.data_min) / (norm.data_max - norm.data_min)
    values = norm.target_lo + values * (norm.target_hi - norm.target_lo)
    return VolumeGrid(values, vol.spacing)


def denormalize(vol: VolumeGrid, norm: NormParams) -> VolumeGrid:
    values = (vol.values - norm.target_lo) / (norm.target_hi - norm.target_lo)
    values = norm.data_min + values * (norm.data_max - norm.data_min)
    return VolumeGrid(values, vol.spacing)


def _trilinear(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    8-corner trilinear blend at continuous index points of shape (M, 3).
    """
    dims = np.array(values.shape)
    i0 = np.floor(points).astype(np.int64)
    i0 = np.clip(i0, 0, np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, dims - 1)
    t = points - i0
    out = np.zeros(len(points))
    for cx in (0, 1):
        wx = t[:, 0] if cx else 1.0 - t[:, 0]
        ix = i1[:, 0] if cx else i0[:, 0]
        for cy in (0, 1):
            wy = t[:, 1] if cy else 1.0 - t[:, 1]
            iy = i1[:, 1] if cy else i0[:, 1]
            for cz in (0, 1):
                wz = t[:, 2] if cz else 1.0 - t[:, 2]
                iz = i1[:, 2] if cz else i0[:, 2]
                out += wx * wy * wz * values[ix, iy, iz]
    return out


def trilinear_sample(vol: VolumeGrid, p: Sequence[float]) -> float:
    """
    Samples the volume at continuous index coordinates ``p`` (no extrapolation).
    """
    p = np.asarray(p, dtype=np.float64)
    upper = np.array(vol.dims) - 1
    if p.shape != (3,) or np.any(p < 0) or np.any(p > upper):
        raise DomainError(f'sample point {p.tolist()} outside [0, n-1] for dims {vol.dims}')
    return float(_trilinear(vol.values, p[None, :])[0])


def downsample(vol: VolumeGrid, factors: Sequence[int]) -> VolumeGrid:
    """
    Keeps every f-th sample per axis starting at index 0.
    """
    fx, fy, fz = _check_factors(factors)
    spacing = (vol.spacing[0] * fx, vol.spacing[1] * fy, vol.spacing[2] * fz)
    return VolumeGrid(np.ascontiguousarray(vol.values[::fx, ::fy, ::fz]), spacing)


def _check_factors(factors: Sequence[int]) -> Dims:
    factors = tuple(int(f) for f in factors)
    if len(factors) != 3 or min(factors) < 1:
        raise DomainError(f'factors must be three integers >= 1, got {factors}')
    return factors


def _lerp_axis(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
    m = values.shape[axis]
    i0 = np.clip(np.floor(coords).astype(np.int64), 0, max(m - 2, 0))
    i1 = np.minimum(i0 + 1, m - 1)
    t = coords - i0
    shape = [1, 1, 1]
    shape[axis] = len(coords)
    t = t.reshape(shape)
    return np.take(values, i0, axis=axis) * (1.0 - t) + np.take(values, i1, axis=axis) * t


def upsample_trilinear(vol: VolumeGrid, target_dims: Sequence[int],
                       factors: Optional[Sequence[int]] = None) -> VolumeGrid:
    """
    Resamples onto a grid of ``target_dims`` by trilinear interpolation.

    Without ``factors`` target index i maps proportionally to source index i*(m-1)/(n-1), so corners map
    to corners. With ``factors`` (the strides of a previous :func:`downsample`) target index i maps to
    i/f, so every retained sample lands back on itself; targets past the last retained sample continue
    the line through the last two retained samples, so affine fields are reproduced exactly.
    """
    target_dims = _check_dims(target_dims)
    if any(n < m for n, m in zip(target_dims, vol.dims)):
        raise DomainError(f'target dims {target_dims} smaller than source dims {vol.dims}')
    if factors is not None:
        factors = _check_factors(factors)

    values = vol.values
    for axis, (n, m) in enumerate(zip(target_dims, vol.dims)):
        idx = np.arange(n, dtype=np.float64)
        if factors is not None:
            coords = idx / factors[axis]
        elif n == 1:
            coords = np.zeros(1)
        else:
            coords = idx * (m - 1) / (n - 1)
        values = _lerp_axis(values, coords, axis)

    spacing = tuple(s * (m - 1) / (n - 1) if n > 1 and m > 1 else s
                    for s, n, m in zip(vol.spacing, target_dims, vol.dims))
    if factors is not None:
        spacing = tuple(s / f for s, f in zip(vol.spacing, factors))
    return VolumeGrid(values, spacing)


def gradient_magnitude(vol: VolumeGrid) -> VolumeGrid:
    """
    Euclidean norm of the central-difference gradient (one-sided at the boundary), in data units per spacing.
    """
    if min(vol.dims) < 2:
        raise DomainError(f'gradient needs at least 2 samples per axis, got dims {vol.dims}')
    gx, gy, gz = np.gradient(vol.values, *vol.spacing, edge_order=1)
    return VolumeGrid(np.sqrt(gx * gx + gy * gy + gz * gz), vol.spacing)


def local_variance(vol: VolumeGrid, window: Sequence[int] = (2, 2, 2), slab: int = 32) -> VolumeGrid:
    """
    Population variance over the window anchored at each grid point (``[i, i+w)`` per axis), clamped
    to the volume. Processed in x-slabs of ``slab`` planes to bound memory.
    """
    window = tuple(int(w) for w in window)
    if len(window) != 3 or any(w < 1 or w > n for w, n in zip(window, vol.dims)):
        raise DomainError(f'window {window} must be within [1, dims] for dims {vol.dims}')

    pad = [(0, w - 1) for w in window]
    padded = np.pad(vol.values, pad, mode='constant', constant_values=np.nan)
    windows = sliding_window_view(padded, window)
    out = np.empty(vol.dims)
    axes = (3, 4, 5)
    for x0 in range(0, vol.dims[0], slab):
        block = windows[x0:x0 + slab]
        mean = np.nanmean(block, axis=axes, keepdims=True)
        var = np.nanmean((block - mean) ** 2, axis=axes)
        constant = np.nanmax(block, axis=axes) == np.nanmin(block, axis=axes)
        out[x0:x0 + slab] = np.where(constant, 0.0, var)
    return VolumeGrid(out, vol.spacing)


def interpolation_error_field(vol: VolumeGrid, factors: Sequence[int]) -> VolumeGrid:
    """
    ``|vol - up(down(vol))|``, the error introduced by decimating and re-interpolating the volume.
    """
    coarse = downsample(vol, factors)
    restored = upsample_trilinear(coarse, vol.dims, factors=factors)
    return VolumeGrid(np.abs(vol.values - restored.values), vol.spacing)


def axis_coordinates(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n, dtype=np.float64) / (n - 1)


def grid_coordinates(dims: Sequence[int]) -> CoordinateBatch:
    """
    Normalized [-1, 1] coordinates of every grid point, in x-fastest order.
    """
    dims = _check_dims(dims)
    xs, ys, zs = np.meshgrid(*(axis_coordinates(n) for n in dims), indexing='ij')
    points = np.stack([xs.ravel(order='F'), ys.ravel(order='F'), zs.ravel(order='F')], axis=1)
    return CoordinateBatch(points)


def sphere_field(dims: Sequence[int]) -> VolumeGrid:
    """
    Smooth radial field ``1 - |p|`` over the normalized domain.
    """
    points = grid_coordinates(dims).points
    return volume_from_flat(1.0 - np.linalg.norm(points, axis=1), dims)


def gaussian_blobs(dims: Sequence[int], n_blobs: int = 8, rng: Optional[np.random.Generator] = None,
                   width: Tuple[float, float] = (0.15, 0.45)) -> VolumeGrid:
    """
    Sum of randomly placed isotropic Gaussian blobs over the normalized domain.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    points = grid_coordinates(dims).points
    values = np.zeros(len(points))
    for _ in range(n_blobs):
        center = rng.uniform(-0.7, 0.7, size=3)
        sigma = rng.uniform(*width)
        amp = rng.uniform(0.5, 1.5)
        d2 = np.sum((points - center) ** 2, axis=1)
        values += amp * np.exp(-d2 / (2.0 * sigma * sigma))
    return volume_from_flat(values, dims)
