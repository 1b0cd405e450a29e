"""
.. module:: cli
   :platform: Unix, Windows
   :synopsis: Command-line surface: train, reconstruct, evaluate, lcp, derive-fields and info

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


Exit codes: 0 success, 2 configuration or usage error, 3 IO error, 4 numeric failure, 5 contract violation.
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from pyrevinr.config import RunConfig, load_config_file, merge, resolve_run_config
from pyrevinr.errors import EXIT_OK, PyrevinrError, UsageError, exit_code_for
from pyrevinr.evaluation import EvalReport, ablation_compare, evaluate
from pyrevinr.lcp import gaussian_field_in_data_units, lcp_field, mean_crossing_mask
from pyrevinr.models import PredictionField, reconstruct, rev_nig_fields, variant_of
from pyrevinr.nn import compression_ratio, load_checkpoint, model_size_bytes, parameter_count
from pyrevinr.training import FINAL_CHECKPOINT, resume, train
from pyrevinr.volume import (
    DTYPES,
    NormParams,
    gradient_magnitude,
    interpolation_error_field,
    load_raw,
    local_variance,
    normalize,
    read_volume,
    write_volume,
)

__author__ = 'Will McGinnis'

logger = logging.getLogger(__name__)

CONFIG_SNAPSHOT = 'config.json'
REPORT_NAME = 'report.json'
ABLATION_NAME = 'ablation.json'

# fields each variant can reconstruct
VARIANT_FIELDS = {'det': ('mean',), 'rev': ('mean', 'au', 'eu'), 'mcd': ('mean', 'au', 'eu'),
                  'rmd': ('mean', 'au', 'eu')}


def parse_triple(text: str, kind=int) -> Tuple:
    try:
        values = tuple(kind(p) for p in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected three comma separated values, got {text!r}')
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f'expected three comma separated values, got {text!r}')
    return values


def parse_dims_or_scale(text: str) -> Union[Tuple[int, int, int], int]:
    """
    ``nx,ny,nz`` or a scale factor on the training dims such as ``2x``.
    """
    if text.endswith('x') and text[:-1].isdigit():
        factor = int(text[:-1])
        if factor < 1:
            raise argparse.ArgumentTypeError(f'scale factor must be >= 1, got {text!r}')
        return factor
    return parse_triple(text)


def _run_config(args: argparse.Namespace, command: str, overrides: Dict[str, Any]) -> RunConfig:
    file_config = load_config_file(args.config) if args.config else None
    shared = {'train': {'workers': args.workers, 'chunk_size': args.chunk_size}}
    return resolve_run_config(command, file_config, merge(shared, overrides))


def _fields_path(directory: str, name: str) -> str:
    return os.path.join(directory, f'{name}.raw')


def cmd_train(args: argparse.Namespace) -> int:
    overrides = {
        'volume': {'path': args.volume, 'dims': args.dims, 'dtype': args.dtype, 'spacing': args.spacing},
        'model': {'variant': args.variant, 'width': args.width, 'blocks': args.blocks, 'decoders': args.decoders,
                  'dropout_rate': args.dropout, 'mc_passes': args.mc_passes},
        'train': {'epochs': args.epochs, 'batch_size': args.batch_size, 'seed': args.seed, 'base_lr': args.lr,
                  'lr_decay': args.lr_decay, 'lr_step': args.lr_step, 'checkpoint_every': args.checkpoint_every,
                  'deterministic': False if args.fast else None},
        'weights': {'lambda1': args.lambda1, 'lambda2': args.lambda2, 'lambda3': args.lambda3,
                    'delta': args.delta},
        'out_dir': args.out,
    }
    run = _run_config(args, 'train', overrides)
    if run.volume is None:
        raise UsageError('train needs --volume and --dims (or a volume section in --config)')

    os.makedirs(run.out_dir, exist_ok=True)
    with open(os.path.join(run.out_dir, CONFIG_SNAPSHOT), 'w', encoding='utf-8') as f:
        f.write(run.to_json())

    volume = run.volume.load()
    if args.resume:
        result = resume(args.resume, volume, run.train, run.out_dir, run.model)
    else:
        result = train(run.model, volume, run.train, run.out_dir)
    if result.log:
        logger.info('final loss %.6e after epoch %d', result.log[-1].total, result.log[-1].epoch)
    print(os.path.join(run.out_dir, FINAL_CHECKPOINT))
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace) -> int:
    run = _run_config(args, 'reconstruct', {'out_dir': args.out})
    checkpoint = load_checkpoint(args.checkpoint)
    net = checkpoint.network
    variant = variant_of(net)

    available = VARIANT_FIELDS[variant]
    requested = tuple(args.fields) if args.fields else available
    missing = [name for name in requested if name not in available]
    if missing:
        raise UsageError(f'{variant} models do not produce {missing}; available fields are {list(available)}')
    if args.dump_nig and variant != 'rev':
        raise UsageError('--dump-nig needs a rev checkpoint')

    train_dims = checkpoint.meta.get('dims')
    if isinstance(args.dims, int) or args.dims is None:
        if train_dims is None:
            raise UsageError('checkpoint does not record training dims; pass --dims nx,ny,nz')
        dims = tuple(int(n) * (args.dims or 1) for n in train_dims)
    else:
        dims = args.dims
    norm = NormParams.from_dict(checkpoint.meta['norm']) if checkpoint.meta.get('norm') else None

    field = reconstruct(net, dims, norm, args.mc_passes, args.seed, run.train.chunk_size, run.train.workers)
    os.makedirs(run.out_dir, exist_ok=True)
    extra = {'seconds': field.seconds, 'variant': variant,
             'run': {key: checkpoint.meta.get(key) for key in ('model', 'train', 'weights')}}
    volumes = {'mean': field.mean, 'au': field.au, 'eu': field.eu}
    for name in requested:
        units = 'data' if name == 'mean' else 'normalized^2'
        write_volume(_fields_path(run.out_dir, name), volumes[name], name, norm, units=units, **extra)
    if args.dump_nig:
        for name, vol in rev_nig_fields(net, dims, run.train.chunk_size, run.train.workers).items():
            write_volume(_fields_path(run.out_dir, f'nig_{name}'), vol, f'nig_{name}', norm, **extra)
    print(f'{field.seconds:.3f}')
    return EXIT_OK


def _read_optional(directory: str, name: str):
    path = _fields_path(directory, name)
    return read_volume(path)[0] if os.path.exists(path) else None


def cmd_evaluate(args: argparse.Namespace) -> int:
    run = _run_config(args, 'evaluate', {
        'eval': {'locvar_window': args.locvar_window, 'interp_factors': args.interp_factors,
                 'error_kind': args.error_kind},
    })
    gt = load_raw(args.volume, args.dims, args.dtype)
    mean, sidecar = read_volume(_fields_path(args.fields, 'mean'))
    norm = NormParams.from_dict(sidecar['norm']) if sidecar.get('norm') else None
    prediction = PredictionField(mean, _read_optional(args.fields, 'au'), _read_optional(args.fields, 'eu'),
                                 float(sidecar.get('seconds', 0.0)))
    report = evaluate(gt, prediction, norm, run.eval, config=sidecar.get('run') or {})

    out = args.out or os.path.join(args.fields, REPORT_NAME)
    with open(out, 'w', encoding='utf-8') as f:
        f.write(report.to_json())
    if args.csv:
        new = not os.path.exists(args.csv)
        with open(args.csv, 'a', encoding='utf-8') as f:
            if new:
                f.write(','.join(EvalReport.csv_header()) + '\n')
            f.write(report.to_csv_row())
    print(report.to_json())

    if args.ablation_against:
        with open(args.ablation_against, 'r', encoding='utf-8') as f:
            other = EvalReport.from_json(f.read())
        result = ablation_compare(report, other)
        with open(os.path.join(os.path.dirname(out) or '.', ABLATION_NAME), 'w', encoding='utf-8') as f:
            json.dump(result._asdict(), f, indent=2, sort_keys=True)
        print(json.dumps(result._asdict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_lcp(args: argparse.Namespace) -> int:
    mean, sidecar = read_volume(_fields_path(args.fields, 'mean'))
    var_path = _fields_path(args.fields, args.variance)
    if not os.path.exists(var_path):
        raise UsageError(f'no field of kind {args.variance!r} at {var_path}')
    var, var_sidecar = read_volume(var_path)
    if var_sidecar.get('field_kind') != args.variance:
        raise UsageError(f'{var_path} holds field_kind {var_sidecar.get("field_kind")!r}, expected {args.variance!r}')

    norm = NormParams.from_dict(sidecar['norm']) if sidecar.get('norm') else None
    result = lcp_field(gaussian_field_in_data_units(mean, var, norm), args.isovalue)
    write_volume(args.out, result.values, 'lcp', isovalue=result.isovalue, variance=args.variance)
    if args.mask:
        write_volume(args.mask, mean_crossing_mask(mean, args.isovalue), 'mean_crossing', isovalue=args.isovalue)
    logger.info('mean LCP %.6f over %d cells', float(result.values.values.mean()), result.values.size)
    print(args.out)
    return EXIT_OK


def cmd_derive_fields(args: argparse.Namespace) -> int:
    run = _run_config(args, 'derive-fields', {
        'eval': {'locvar_window': args.locvar_window, 'interp_factors': args.interp_factors},
    })
    vol = load_raw(args.volume, args.dims, args.dtype)
    os.makedirs(args.out, exist_ok=True)
    normalized, norm = normalize(vol)
    write_volume(_fields_path(args.out, 'normalized'), normalized, 'normalized', norm)
    write_volume(_fields_path(args.out, 'gradient'), gradient_magnitude(vol), 'gradient_magnitude')
    write_volume(_fields_path(args.out, 'locvar'), local_variance(vol, run.eval.locvar_window), 'local_variance',
                 window=list(run.eval.locvar_window))
    write_volume(_fields_path(args.out, 'interp_error'), interpolation_error_field(vol, run.eval.interp_factors),
                 'interpolation_error', factors=list(run.eval.interp_factors))
    print(args.out)
    return EXIT_OK


def cmd_info(args: argparse.Namespace) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    net = checkpoint.network
    info = {
        'variant': variant_of(net),
        'descriptor': net.descriptor,
        'parameter_count': parameter_count(net),
        'size_bytes': model_size_bytes(net),
        'size_kb': model_size_bytes(net) / 1000.0,
        'epoch': checkpoint.meta.get('epoch'),
    }
    dims = args.dims or checkpoint.meta.get('dims')
    if dims is not None:
        volume_bytes = int(np.prod(dims)) * np.dtype(DTYPES[args.dtype]).itemsize
        info['volume_bytes'] = volume_bytes
        info['compression_ratio'] = compression_ratio(volume_bytes, net)
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0, help='-v for INFO, -vv for DEBUG')
    common.add_argument('--config', help='JSON config file; flags override its values')
    common.add_argument('--workers', type=int, help='worker threads for chunked computation')
    common.add_argument('--chunk-size', type=int, help='points per chunk')

    parser = argparse.ArgumentParser(prog='pyrevinr', description='Uncertainty-aware implicit neural '
                                                                  'representations of volumetric data')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', parents=[common], help='train a model on a raw volume')
    p.add_argument('--variant', choices=('det', 'rev', 'mcd', 'rmd'))
    p.add_argument('--volume')
    p.add_argument('--dims', type=parse_triple)
    p.add_argument('--dtype', choices=sorted(DTYPES))
    p.add_argument('--spacing', type=lambda s: parse_triple(s, float))
    p.add_argument('--width', type=int)
    p.add_argument('--blocks', type=int)
    p.add_argument('--decoders', type=int)
    p.add_argument('--dropout', type=float)
    p.add_argument('--mc-passes', type=int)
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch-size', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--lr', type=float)
    p.add_argument('--lr-decay', type=float)
    p.add_argument('--lr-step', type=int)
    p.add_argument('--lambda1', type=float)
    p.add_argument('--lambda2', type=float)
    p.add_argument('--lambda3', type=float)
    p.add_argument('--delta', type=float)
    p.add_argument('--checkpoint-every', type=int)
    p.add_argument('--fast', action='store_true', help='allow unordered gradient reduction')
    p.add_argument('--resume', help='checkpoint to continue from')
    p.add_argument('--out')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('reconstruct', parents=[common], help='evaluate a trained model on a grid')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--dims', type=parse_dims_or_scale, help='nx,ny,nz or a scale such as 2x')
    p.add_argument('--fields', nargs='+', choices=('mean', 'au', 'eu'))
    p.add_argument('--mc-passes', type=int)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--dump-nig', action='store_true', help='also write the four evidential parameter fields')
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser('evaluate', parents=[common], help='score reconstructed fields against ground truth')
    p.add_argument('--volume', required=True)
    p.add_argument('--dims', type=parse_triple, required=True)
    p.add_argument('--dtype', choices=sorted(DTYPES), default='f32le')
    p.add_argument('--fields', required=True, help='directory written by reconstruct')
    p.add_argument('--out')
    p.add_argument('--csv', help='append a CSV row to this file')
    p.add_argument('--locvar-window', type=parse_triple)
    p.add_argument('--interp-factors', type=parse_triple)
    p.add_argument('--error-kind', choices=('abs', 'squared'))
    p.add_argument('--ablation-against', help='report of the unregularized run')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('lcp', parents=[common], help='level-crossing probability field')
    p.add_argument('--fields', required=True, help='directory written by reconstruct')
    p.add_argument('--isovalue', type=float, required=True)
    p.add_argument('--variance', choices=('eu', 'au'), default='eu')
    p.add_argument('--out', required=True)
    p.add_argument('--mask', help='also write the mean-surface crossing mask here')
    p.set_defaults(func=cmd_lcp)

    p = sub.add_parser('derive-fields', parents=[common], help='write gradient, local variance and '
                                                               'interpolation error fields')
    p.add_argument('--volume', required=True)
    p.add_argument('--dims', type=parse_triple, required=True)
    p.add_argument('--dtype', choices=sorted(DTYPES), default='f32le')
    p.add_argument('--out', required=True)
    p.add_argument('--locvar-window', type=parse_triple)
    p.add_argument('--interp-factors', type=parse_triple)
    p.set_defaults(func=cmd_derive_fields)

    p = sub.add_parser('info', parents=[common], help='describe a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--dims', type=parse_triple)
    p.add_argument('--dtype', choices=sorted(DTYPES), default='f32le')
    p.set_defaults(func=cmd_info)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except (PyrevinrError, OSError) as e:
        logger.error('%s: %s', type(e).__name__, e)
        print(f'error: {e}', file=sys.stderr)
        return exit_code_for(e)


if __name__ == '__main__':
    sys.exit(main())
