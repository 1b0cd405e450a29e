"""
.. module:: pyrevinr
   :platform: Unix, Windows
   :synopsis: Uncertainty-aware implicit neural representations of scalar volumes

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


"""

from .errors import (
    PyrevinrError,
    ConfigError,
    UsageError,
    ResourceError,
    NumericError,
    ContractError,
    DomainError,
    InvariantError,
    DegenerateInputError,
    SizeMismatchError,
    ArchitectureMismatchError,
)
from .volume import (
    NormParams,
    VolumeGrid,
    CoordinateBatch,
    volume_from_array,
    volume_from_flat,
    load_raw,
    save_raw,
    write_volume,
    read_volume,
    normalize,
    apply_normalization,
    denormalize,
    trilinear_sample,
    downsample,
    upsample_trilinear,
    gradient_magnitude,
    local_variance,
    interpolation_error_field,
    grid_coordinates,
    sphere_field,
    gaussian_blobs,
)
from .nn import (
    Network,
    forward,
    backward,
    build_network,
    parameter_count,
    model_size_bytes,
    compression_ratio,
    AdamState,
    adam_init,
    adam_step,
    LrSchedule,
    lr_at,
    save_checkpoint,
    load_checkpoint,
)
from .evidential import (
    NIGParams, RawEvidentialOutput, Moments, link, predictive_moments, nig_pdf, nig_kl, evidence_penalty,
)
from .losses import LossWeights, BatchLossReport, default_weights, objective
from .models import ModelConfig, PredictionField, build, rmd_layout, predict, reconstruct, rev_nig_fields
from .models import det_predict, rev_predict, mcd_predict, rmd_predict
from .training import TrainConfig, TrainLogRecord, TrainResult, train, resume
from .evaluation import EvalOptions, EvalReport, psnr, corr_fields, nll_gaussian_field, evaluate, ablation_compare
from .lcp import GaussianField, LcpField, normal_cdf, cell_lcp, lcp_field, mean_crossing_mask
from .lcp import gaussian_field_in_data_units
from .config import VolumeSpec, RunConfig, resolve_run_config

__author__ = 'willmcginnis'

__all__ = [
    'PyrevinrError',
    'ConfigError',
    'UsageError',
    'ResourceError',
    'NumericError',
    'ContractError',
    'DomainError',
    'InvariantError',
    'DegenerateInputError',
    'SizeMismatchError',
    'ArchitectureMismatchError',
    'NormParams',
    'VolumeGrid',
    'CoordinateBatch',
    'volume_from_array',
    'volume_from_flat',
    'load_raw',
    'save_raw',
    'write_volume',
    'read_volume',
    'normalize',
    'apply_normalization',
    'denormalize',
    'trilinear_sample',
    'downsample',
    'upsample_trilinear',
    'gradient_magnitude',
    'local_variance',
    'interpolation_error_field',
    'grid_coordinates',
    'sphere_field',
    'gaussian_blobs',
    'Network',
    'forward',
    'backward',
    'build_network',
    'parameter_count',
    'model_size_bytes',
    'compression_ratio',
    'AdamState',
    'adam_init',
    'adam_step',
    'LrSchedule',
    'lr_at',
    'save_checkpoint',
    'load_checkpoint',
    'NIGParams',
    'RawEvidentialOutput',
    'Moments',
    'link',
    'predictive_moments',
    'nig_pdf',
    'nig_kl',
    'evidence_penalty',
    'LossWeights',
    'BatchLossReport',
    'default_weights',
    'objective',
    'ModelConfig',
    'PredictionField',
    'build',
    'rmd_layout',
    'predict',
    'det_predict',
    'rev_predict',
    'mcd_predict',
    'rmd_predict',
    'reconstruct',
    'rev_nig_fields',
    'TrainConfig',
    'TrainLogRecord',
    'TrainResult',
    'train',
    'resume',
    'EvalOptions',
    'EvalReport',
    'psnr',
    'corr_fields',
    'nll_gaussian_field',
    'evaluate',
    'ablation_compare',
    'GaussianField',
    'LcpField',
    'normal_cdf',
    'cell_lcp',
    'lcp_field',
    'mean_crossing_mask',
    'gaussian_field_in_data_units',
    'VolumeSpec',
    'RunConfig',
    'resolve_run_config',
]

try:
    # Soft dependency
    import numba
    from .nbvolume import nb_lcp_field, nb_local_variance
    __all__ += [
        'nb_lcp_field',
        'nb_local_variance',
    ]

except ImportError:
    import logging
    logging.getLogger(__name__).warning('Numba is a soft dependency for the compiled volume kernels. '
                                        'Only the numpy implementations are available.')
