"""
.. module:: lcp
   :platform: Unix, Windows
   :synopsis: Level-crossing probability of an isosurface through grid cells with independent Gaussian vertices

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


A cell is crossed unless all eight vertex values fall on the same side of the isovalue ``c``. With
``p_i = P(X_i < c)`` and ``q_i = P(X_i > c)`` the crossing probability is ``1 - prod(p_i) - prod(q_i)``.
Zero-variance vertices resolve by comparing their mean with ``c``; a mean equal to ``c`` counts half on
each side, so such cells do not reach exactly 0 or 1.
"""

import logging
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from pyrevinr.errors import DomainError, InvariantError, UsageError
from pyrevinr.volume import NormParams, VolumeGrid

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

# offsets of the eight cell vertices
CORNERS: Tuple[Tuple[int, int, int], ...] = tuple((dx, dy, dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1))


class GaussianField(NamedTuple):
    mean: VolumeGrid
    var: VolumeGrid

    def validate(self) -> None:
        if self.mean.dims != self.var.dims:
            raise UsageError(f'mean dims {self.mean.dims} differ from variance dims {self.var.dims}')
        if np.any(self.var.values < 0):
            raise InvariantError('Gaussian field variance must be >= 0')


class LcpField(NamedTuple):
    values: VolumeGrid
    isovalue: float


def normal_cdf(x):
    """
    Standard normal CDF.
    """
    return ndtr(x)


def side_probabilities(mean, var, c: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    ``(P(X < c), P(X > c))`` for ``X ~ N(mean, var)``, each computed directly to keep both tails accurate.

    A zero-variance vertex sitting exactly on ``c`` touches the level set, so both sides are 0 and any cell
    containing it crosses with probability 1, matching :func:`mean_crossing_mask`.
    """
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise InvariantError('vertex variance must be >= 0')
    positive = var > 0
    with np.errstate(divide='ignore', invalid='ignore'):
        z = (c - mean) / np.sqrt(var)
    below = np.where(positive, ndtr(z), (c > mean).astype(np.float64))
    above = np.where(positive, ndtr(-z), (c < mean).astype(np.float64))
    return below, above


def cell_lcp(means: Sequence[float], variances: Sequence[float], c: float) -> float:
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if means.shape != (8,) or variances.shape != (8,):
        raise UsageError(f'a cell has 8 vertices, got {means.shape} means and {variances.shape} variances')
    below, above = side_probabilities(means, variances, c)
    return float(np.clip(1.0 - np.prod(below) - np.prod(above), 0.0, 1.0))


def _corner_view(values: np.ndarray, offset: Tuple[int, int, int]) -> np.ndarray:
    nx, ny, nz = values.shape
    dx, dy, dz = offset
    return values[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz]


def _check_cells(dims: Tuple[int, int, int]) -> None:
    if min(dims) < 2:
        raise DomainError(f'cell fields need at least 2 points per axis, got {dims}')


def lcp_field(g: GaussianField, c: float) -> LcpField:
    """
    Crossing probability for every cell, as a cell-centered grid of dims ``(nx-1, ny-1, nz-1)``.
    """
    g.validate()
    _check_cells(g.mean.dims)
    below, above = side_probabilities(g.mean.values, g.var.values, c)
    prod_below = np.ones(tuple(n - 1 for n in g.mean.dims))
    prod_above = np.ones_like(prod_below)
    for offset in CORNERS:
        prod_below *= _corner_view(below, offset)
        prod_above *= _corner_view(above, offset)
    values = np.clip(1.0 - prod_below - prod_above, 0.0, 1.0)
    return LcpField(VolumeGrid(values, g.mean.spacing), float(c))


def mean_crossing_mask(mean: VolumeGrid, c: float) -> VolumeGrid:
    """
    1.0 for cells whose vertex values straddle or touch ``c``, else 0.0.
    """
    _check_cells(mean.dims)
    lo = np.full(tuple(n - 1 for n in mean.dims), np.inf)
    hi = np.full_like(lo, -np.inf)
    for offset in CORNERS:
        corner = _corner_view(mean.values, offset)
        lo = np.minimum(lo, corner)
        hi = np.maximum(hi, corner)
    return VolumeGrid(((lo <= c) & (c <= hi)).astype(np.float64), mean.spacing)


def gaussian_field_in_data_units(mean: VolumeGrid, var: VolumeGrid, norm: Optional[NormParams]) -> GaussianField:
    """
    Pairs a data-unit mean with a normalized-unit variance, rescaling the variance to data units squared.
    """
    if norm is None:
        return GaussianField(mean, var)
    return GaussianField(mean, VolumeGrid(var.values * norm.scale ** 2, var.spacing))
