import contextlib
import io
import json
import os
import tempfile
import unittest

import numpy as np

import pyrevinr as pri
from pyrevinr.cli import main, parse_dims_or_scale

__author__ = 'willmcginnis'

DIMS = '8,8,8'


def run(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(io.StringIO()):
        code = main(list(argv))
    return code, out.getvalue()


class TestParsing(unittest.TestCase):
    """
    """

    def test_dims_or_scale(self):
        self.assertEqual(parse_dims_or_scale('2x'), 2)
        self.assertEqual(parse_dims_or_scale('4,5,6'), (4, 5, 6))

    def test_bad_flag_exits_with_usage_code(self):
        with self.assertRaises(SystemExit) as ctx, contextlib.redirect_stderr(io.StringIO()):
            main(['train', '--dims', '4,4'])
        self.assertEqual(ctx.exception.code, 2)


class TestCli(unittest.TestCase):
    """
    """

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = cls.tmp.name
        cls.volume = pri.gaussian_blobs((8, 8, 8), n_blobs=4, rng=np.random.default_rng(0))
        cls.volume_path = os.path.join(cls.root, 'blobs.raw')
        pri.save_raw(cls.volume_path, cls.volume)
        cls.rev_dir = os.path.join(cls.root, 'rev')
        code, _ = run('train', '--variant', 'rev', '--volume', cls.volume_path, '--dims', DIMS, '--width', '8',
                      '--blocks', '1', '--epochs', '2', '--batch-size', '128', '--out', cls.rev_dir)
        assert code == 0

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def _path(self, *parts):
        return os.path.join(self.root, *parts)

    def _train(self, out, *extra):
        return run('train', '--volume', self.volume_path, '--dims', DIMS, '--width', '8', '--blocks', '1',
                   '--epochs', '2', '--batch-size', '128', '--out', out, *extra)

    def test_train_outputs(self):
        for name in ('model.ckpt', 'model.ckpt.json', 'train_log.jsonl', 'config.json'):
            self.assertTrue(os.path.exists(os.path.join(self.rev_dir, name)), name)
        with open(os.path.join(self.rev_dir, 'config.json'), encoding='utf-8') as f:
            snapshot = pri.RunConfig.from_dict(json.load(f))
        self.assertEqual(snapshot.model.variant, 'rev')
        self.assertEqual(snapshot.train.epochs, 2)
        self.assertEqual(snapshot.volume.dims, (8, 8, 8))

    def test_pipeline(self):
        fields = self._path('rev_fields')
        code, stdout = run('reconstruct', '--checkpoint', os.path.join(self.rev_dir, 'model.ckpt'), '--out', fields)
        self.assertEqual(code, 0)
        self.assertGreaterEqual(float(stdout.strip()), 0.0)
        for kind in ('mean', 'au', 'eu'):
            vol, sidecar = pri.read_volume(os.path.join(fields, f'{kind}.raw'))
            self.assertEqual(vol.dims, (8, 8, 8))
            self.assertEqual(sidecar['field_kind'], kind)
            self.assertEqual(sidecar['variant'], 'rev')

        csv_path = self._path('reports.csv')
        code, stdout = run('evaluate', '--volume', self.volume_path, '--dims', DIMS, '--fields', fields,
                           '--csv', csv_path)
        self.assertEqual(code, 0)
        with open(os.path.join(fields, 'report.json'), encoding='utf-8') as f:
            report = pri.EvalReport.from_json(f.read())
        self.assertIsNotNone(report.corr_eu_error)
        self.assertEqual(report.config['model']['variant'], 'rev')
        with open(csv_path, encoding='utf-8') as f:
            self.assertEqual(len(f.read().splitlines()), 2)

        iso = float(np.median(self.volume.values))
        lcp_path = self._path('lcp.raw')
        mask_path = self._path('mask.raw')
        code, _ = run('lcp', '--fields', fields, '--isovalue', str(iso), '--out', lcp_path, '--mask', mask_path)
        self.assertEqual(code, 0)
        lcp, sidecar = pri.read_volume(lcp_path)
        self.assertEqual(lcp.dims, (7, 7, 7))
        self.assertEqual(sidecar['field_kind'], 'lcp')
        self.assertTrue(np.all((lcp.values >= 0) & (lcp.values <= 1)))
        self.assertEqual(pri.read_volume(mask_path)[0].dims, (7, 7, 7))

    def test_upscaled_reconstruction_and_nig(self):
        fields = self._path('rev_2x')
        code, _ = run('reconstruct', '--checkpoint', os.path.join(self.rev_dir, 'model.ckpt'), '--out', fields,
                      '--dims', '2x', '--fields', 'mean', '--dump-nig')
        self.assertEqual(code, 0)
        self.assertEqual(pri.read_volume(os.path.join(fields, 'mean.raw'))[0].dims, (16, 16, 16))
        self.assertFalse(os.path.exists(os.path.join(fields, 'eu.raw')))
        alpha, _ = pri.read_volume(os.path.join(fields, 'nig_alpha.raw'))
        self.assertTrue(np.all(alpha.values > 1.0))

    def test_info(self):
        code, stdout = run('info', '--checkpoint', os.path.join(self.rev_dir, 'model.ckpt'))
        self.assertEqual(code, 0)
        info = json.loads(stdout)
        self.assertEqual(info['variant'], 'rev')
        self.assertEqual(info['epoch'], 1)
        self.assertEqual(info['volume_bytes'], 8 ** 3 * 4)
        self.assertEqual(info['size_bytes'], 4 * info['parameter_count'])

    def test_det_has_no_uncertainty_fields(self):
        out = self._path('det')
        self.assertEqual(self._train(out, '--variant', 'det')[0], 0)
        ckpt = os.path.join(out, 'model.ckpt')
        fields = self._path('det_fields')
        self.assertEqual(run('reconstruct', '--checkpoint', ckpt, '--out', fields, '--fields', 'eu')[0], 2)
        self.assertEqual(run('reconstruct', '--checkpoint', ckpt, '--out', fields, '--dump-nig')[0], 2)
        self.assertEqual(run('reconstruct', '--checkpoint', ckpt, '--out', fields)[0], 0)
        self.assertFalse(os.path.exists(os.path.join(fields, 'au.raw')))
        code, _ = run('lcp', '--fields', fields, '--isovalue', '0.5', '--out', self._path('det_lcp.raw'))
        self.assertEqual(code, 2)

    def test_ablation(self):
        out = self._path('rev_unreg')
        self.assertEqual(self._train(out, '--variant', 'rev', '--lambda2', '0', '--lambda3', '0')[0], 0)
        reports = {}
        for name, directory in (('reg', self.rev_dir), ('unreg', out)):
            fields = self._path(f'{name}_ablation_fields')
            run('reconstruct', '--checkpoint', os.path.join(directory, 'model.ckpt'), '--out', fields)
            reports[name] = fields
        run('evaluate', '--volume', self.volume_path, '--dims', DIMS, '--fields', reports['unreg'])
        code, _ = run('evaluate', '--volume', self.volume_path, '--dims', DIMS, '--fields', reports['reg'],
                      '--ablation-against', os.path.join(reports['unreg'], 'report.json'))
        self.assertEqual(code, 0)
        with open(os.path.join(reports['reg'], 'ablation.json'), encoding='utf-8') as f:
            result = json.load(f)
        self.assertIn('corr_eu_error', result['deltas'])

    def test_derive_fields(self):
        out = self._path('derived')
        code, _ = run('derive-fields', '--volume', self.volume_path, '--dims', DIMS, '--out', out,
                      '--interp-factors', '2,2,2')
        self.assertEqual(code, 0)
        for name in ('normalized', 'gradient', 'locvar', 'interp_error'):
            vol, _ = pri.read_volume(os.path.join(out, f'{name}.raw'))
            self.assertEqual(vol.dims, (8, 8, 8))
        _, sidecar = pri.read_volume(os.path.join(out, 'interp_error.raw'))
        self.assertEqual(sidecar['factors'], [2, 2, 2])

    def test_resume_with_other_architecture(self):
        code, _ = self._train(self._path('resumed'), '--variant', 'rev', '--width', '16', '--epochs', '3',
                              '--resume', os.path.join(self.rev_dir, 'model.ckpt'))
        self.assertEqual(code, 5)

    def test_exit_codes(self):
        self.assertEqual(run('train', '--volume', self._path('missing.raw'), '--dims', DIMS,
                             '--out', self._path('x'))[0], 3)
        self.assertEqual(self._train(self._path('y'), '--epochs', '0')[0], 2)
        self.assertEqual(run('train', '--out', self._path('z'))[0], 2)

        bad_config = self._path('bad.json')
        with open(bad_config, 'w', encoding='utf-8') as f:
            f.write('{not json')
        self.assertEqual(self._train(self._path('w'), '--config', bad_config)[0], 2)

        short = self._path('short.raw')
        np.zeros(10, dtype='<f4').tofile(short)
        self.assertEqual(run('train', '--volume', short, '--dims', DIMS, '--epochs', '1',
                             '--out', self._path('v'))[0], 5)

        garbage = self._path('garbage.ckpt')
        with open(garbage, 'wb') as f:
            f.write(b'not a checkpoint at all')
        self.assertEqual(run('info', '--checkpoint', garbage)[0], 5)


if __name__ == '__main__':
    unittest.main()
