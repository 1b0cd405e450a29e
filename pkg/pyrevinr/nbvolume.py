"""
.. module:: nbvolume
   :platform: Unix, Windows
   :synopsis: Numba kernels for the per-voxel and per-cell loops of local variance and level-crossing probability

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

from math import erfc, sqrt

import numpy as np
from numba import njit, prange

from pyrevinr.errors import DomainError
from pyrevinr.lcp import GaussianField, LcpField
from pyrevinr.volume import VolumeGrid

__author__ = 'Will McGinnis'


@njit(cache=True)
def _side(mu: float, var: float, c: float):
    """
    P(X < c), P(X > c) for one Gaussian vertex, with the sign convention for zero variance; a tie is on neither side.
    """
    if var > 0.0:
        z = (c - mu) / sqrt(var)
        return 0.5 * erfc(-z / sqrt(2.0)), 0.5 * erfc(z / sqrt(2.0))
    if c > mu:
        return 1.0, 0.0
    if c < mu:
        return 0.0, 1.0
    return 0.0, 0.0


@njit(cache=True, parallel=True)
def _lcp_kernel(mean: np.ndarray, var: np.ndarray, c: float) -> np.ndarray:
    nx, ny, nz = mean.shape
    out = np.empty((nx - 1, ny - 1, nz - 1))
    for i in prange(nx - 1):
        for j in range(ny - 1):
            for k in range(nz - 1):
                pb = 1.0
                pa = 1.0
                for dz in range(2):
                    for dy in range(2):
                        for dx in range(2):
                            b, a = _side(mean[i + dx, j + dy, k + dz], var[i + dx, j + dy, k + dz], c)
                            pb *= b
                            pa *= a
                out[i, j, k] = min(max(1.0 - pb - pa, 0.0), 1.0)
    return out


@njit(cache=True, parallel=True)
def _local_variance_kernel(values: np.ndarray, wx: int, wy: int, wz: int) -> np.ndarray:
    nx, ny, nz = values.shape
    out = np.empty((nx, ny, nz))
    for i in prange(nx):
        for j in range(ny):
            for k in range(nz):
                ie = min(i + wx, nx)
                je = min(j + wy, ny)
                ke = min(k + wz, nz)
                total = 0.0
                lo = values[i, j, k]
                hi = lo
                for a in range(i, ie):
                    for b in range(j, je):
                        for d in range(k, ke):
                            v = values[a, b, d]
                            total += v
                            lo = min(lo, v)
                            hi = max(hi, v)
                if lo == hi:
                    out[i, j, k] = 0.0
                    continue
                count = (ie - i) * (je - j) * (ke - k)
                mean = total / count
                acc = 0.0
                for a in range(i, ie):
                    for b in range(j, je):
                        for d in range(k, ke):
                            r = values[a, b, d] - mean
                            acc += r * r
                out[i, j, k] = acc / count
    return out


def nb_lcp_field(g: GaussianField, c: float) -> LcpField:
    g.validate()
    if min(g.mean.dims) < 2:
        raise DomainError(f'cell fields need at least 2 points per axis, got {g.mean.dims}')
    mean = np.ascontiguousarray(g.mean.values, dtype=np.float64)
    var = np.ascontiguousarray(g.var.values, dtype=np.float64)
    return LcpField(VolumeGrid(_lcp_kernel(mean, var, float(c)), g.mean.spacing), float(c))


def nb_local_variance(vol: VolumeGrid, window=(2, 2, 2)) -> VolumeGrid:
    """
    Same windows and constant-window convention as :func:`pyrevinr.volume.local_variance`.
    """
    wx, wy, wz = (int(w) for w in window)
    if any(w < 1 or w > n for w, n in zip((wx, wy, wz), vol.dims)):
        raise DomainError(f'window {tuple(window)} must be within [1, dims] for dims {vol.dims}')
    values = np.ascontiguousarray(vol.values, dtype=np.float64)
    return VolumeGrid(_local_variance_kernel(values, wx, wy, wz), vol.spacing)
