import os
import tempfile
import unittest

import numpy as np

import pyrevinr as pri
from pyrevinr.nn import (
    CHECKPOINT_MAGIC,
    DropoutSite,
    architecture,
    check_architecture,
    network_from_architecture,
)

__author__ = 'willmcginnis'

H = 1e-5


def small_network(seed, width=6, blocks=2, heads=(((3, 'linear'),),), dropout=None, first_omega=30.0):
    rng = np.random.default_rng(seed)
    return pri.build_network(width, blocks, [list(h) for h in heads], rng, first_omega=first_omega,
                             dropout=dropout, dtype=np.float64, descriptor={'variant': 'test', 'width': width})


def projected_loss(net, points, weights, seed):
    rng = np.random.default_rng(seed) if net.dropout is not None else None
    outputs = pri.forward(net, points, 'train', rng).outputs
    return sum(float(np.sum(o * w)) for o, w in zip(outputs, weights))


def check_gradients(test, net, points, seed, entries=4):
    rng = np.random.default_rng(seed + 1000)
    fwd_rng = np.random.default_rng(seed) if net.dropout is not None else None
    result = pri.forward(net, points, 'train', fwd_rng)
    weights = [rng.normal(size=o.shape) for o in result.outputs]
    grads = pri.backward(net, result.cache, weights)
    params = net.parameters()
    test.assertEqual(len(grads), len(params))
    for p, g in zip(params, grads):
        test.assertEqual(p.shape, g.shape)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in rng.choice(flat.size, size=min(entries, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + H
            up = projected_loss(net, points, weights, seed)
            flat[i] = old - H
            down = projected_loss(net, points, weights, seed)
            flat[i] = old
            numeric = (up - down) / (2 * H)
            scale = max(abs(numeric), abs(gflat[i]), 1e-3)
            test.assertLess(abs(numeric - gflat[i]) / scale, 1e-4)


class TestForward(unittest.TestCase):
    """
    """

    def test_shapes(self):
        net = small_network(0, heads=(((4, 'linear'),), ((5, 'sine'), (2, 'linear'))))
        points = np.random.default_rng(1).uniform(-1, 1, (7, 3))
        result = pri.forward(net, points)
        self.assertEqual([o.shape for o in result.outputs], [(7, 4), (7, 2)])
        self.assertIsNone(result.cache)

    def test_eval_is_pure(self):
        net = small_network(2, dropout=DropoutSite(1, 0.5))
        points = np.random.default_rng(3).uniform(-1, 1, (9, 3))
        a = pri.forward(net, points).outputs[0]
        b = pri.forward(net, points).outputs[0]
        np.testing.assert_array_equal(a, b)

    def test_zero_rate_train_equals_eval(self):
        net = small_network(4, dropout=DropoutSite(1, 0.0))
        points = np.random.default_rng(5).uniform(-1, 1, (9, 3))
        train = pri.forward(net, points, 'train').outputs[0]
        np.testing.assert_array_equal(train, pri.forward(net, points).outputs[0])

    def test_bad_mode(self):
        with self.assertRaises(pri.UsageError):
            pri.forward(small_network(0), np.zeros((1, 3)), 'predict')

    def test_dropout_needs_rng(self):
        with self.assertRaises(pri.UsageError):
            pri.forward(small_network(0, dropout=DropoutSite(0, 0.2)), np.zeros((2, 3)), 'train')

    def test_backward_needs_cache(self):
        net = small_network(0)
        result = pri.forward(net, np.zeros((2, 3)))
        with self.assertRaises(pri.UsageError):
            pri.backward(net, result.cache, [np.zeros((2, 3))])

    def test_non_finite_activation(self):
        net = small_network(0)
        net.input_layer.weights[:] = np.inf
        with self.assertRaises(pri.NumericError) as ctx:
            pri.forward(net, np.ones((2, 3)))
        self.assertEqual(ctx.exception.layer, 0)

    def test_dropout_mask(self):
        net = small_network(6, width=100, blocks=1, dropout=DropoutSite(0, 0.1))
        points = np.random.default_rng(7).uniform(-1, 1, (1000, 3))
        mask = pri.forward(net, points, 'train', np.random.default_rng(8)).cache.mask
        self.assertAlmostEqual(float(np.mean(mask == 0)), 0.1, delta=0.005)
        np.testing.assert_allclose(np.unique(mask), [0.0, 1.0 / 0.9])


class TestGradients(unittest.TestCase):
    """
    Reverse mode against central differences in 64-bit.
    """

    def test_random_configurations(self):
        rng = np.random.default_rng(42)
        for seed in range(100):
            width = int(rng.integers(2, 8))
            blocks = int(rng.integers(1, 4))
            kind = seed % 4
            if kind == 0:
                heads = (((1, 'linear'),),)
            elif kind == 1:
                heads = (((4, 'linear'),),)
            else:
                heads = tuple(((int(rng.integers(2, 6)), 'sine'), (2, 'linear')) for _ in range(kind))
            dropout = DropoutSite(blocks - 1, 0.3) if seed % 5 == 0 else None
            net = small_network(seed, width, blocks, heads, dropout, first_omega=float(rng.choice([1.0, 30.0])))
            points = rng.uniform(-1, 1, (int(rng.integers(2, 6)), 3))
            with self.subTest(seed=seed):
                check_gradients(self, net, points, seed)


class TestAdam(unittest.TestCase):
    """
    """

    def test_matches_reference(self):
        rng = np.random.default_rng(0)
        params = [rng.normal(size=(3, 2)), rng.normal(size=3)]
        expected = [p.copy() for p in params]
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        state = pri.adam_init(params)
        for t in range(1, 4):
            grads = [rng.normal(size=p.shape) for p in params]
            for e, g, mi, vi in zip(expected, grads, m, v):
                mi[:] = 0.9 * mi + 0.1 * g
                vi[:] = 0.999 * vi + 0.001 * g * g
                e -= 1e-3 * (mi / (1 - 0.9 ** t)) / (np.sqrt(vi / (1 - 0.999 ** t)) + 1e-8)
            params, state = pri.adam_step(params, grads, state, 1e-3)
        self.assertEqual(state.t, 3)
        for p, e in zip(params, expected):
            np.testing.assert_allclose(p, e, rtol=1e-12)

    def test_first_step_is_lr_sign(self):
        params = [np.zeros(4)]
        grads = [np.array([2.0, -3.0, 0.5, -0.1])]
        params, _ = pri.adam_step(params, grads, pri.adam_init(params), 0.01)
        np.testing.assert_allclose(params[0], [-0.01, 0.01, -0.01, 0.01], rtol=1e-6)

    def test_shape_mismatch(self):
        params = [np.zeros(3)]
        with self.assertRaises(pri.UsageError):
            pri.adam_step(params, [np.zeros(4)], pri.adam_init(params), 0.1)


class TestSchedule(unittest.TestCase):
    """
    """

    def test_step_decay(self):
        s = pri.LrSchedule(5e-5, 0.8, 15)
        self.assertEqual(pri.lr_at(s, 0), 5e-5)
        self.assertEqual(pri.lr_at(s, 14), 5e-5)
        self.assertEqual(pri.lr_at(s, 15), 5e-5 * 0.8)
        self.assertEqual(pri.lr_at(s, 30), 5e-5 * 0.8 ** 2)
        self.assertEqual(pri.lr_at(s, 299), 5e-5 * 0.8 ** 19)

    def test_plateaus(self):
        s = pri.LrSchedule(5e-5, 0.8, 15)
        self.assertEqual(len({pri.lr_at(s, e) for e in range(300)}), 20)


class TestCheckpoint(unittest.TestCase):
    """
    """

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = os.path.join(self.tmp.name, 'net.ckpt')

    def _trained(self):
        net = pri.build_network(5, 2, [[(4, 'sine'), (2, 'linear')], [(4, 'sine'), (2, 'linear')]],
                                np.random.default_rng(0), dropout=DropoutSite(1, 0.1),
                                descriptor={'variant': 'rmd', 'width': 5})
        state = pri.adam_init(net.parameters())
        rng = np.random.default_rng(1)
        for _ in range(2):
            grads = [rng.normal(size=p.shape).astype(p.dtype) for p in net.parameters()]
            _, state = pri.adam_step(net.parameters(), grads, state, 1e-3)
        return net, state

    def test_round_trip(self):
        net, state = self._trained()
        pri.save_checkpoint(self.path, net, state, {'epoch': 3})
        self.assertTrue(os.path.exists(self.path + '.json'))
        loaded = pri.load_checkpoint(self.path)
        self.assertEqual(loaded.meta, {'epoch': 3})
        self.assertEqual(loaded.network.descriptor, net.descriptor)
        self.assertEqual(loaded.network.dropout, net.dropout)
        self.assertEqual(loaded.adam.t, 2)
        for a, b in zip(loaded.network.parameters(), net.parameters()):
            self.assertEqual(a.dtype, b.dtype)
            np.testing.assert_array_equal(a, b)
        for a, b in zip(loaded.adam.m + loaded.adam.v, state.m + state.v):
            np.testing.assert_array_equal(a, b)
        points = np.random.default_rng(2).uniform(-1, 1, (5, 3))
        for a, b in zip(pri.forward(loaded.network, points).outputs, pri.forward(net, points).outputs):
            np.testing.assert_array_equal(a, b)

    def test_without_optimizer(self):
        net, _ = self._trained()
        pri.save_checkpoint(self.path, net)
        self.assertIsNone(pri.load_checkpoint(self.path).adam)

    def test_bad_magic(self):
        with open(self.path, 'wb') as f:
            f.write(b'NOTACKPT' + bytes(16))
        with self.assertRaises(pri.ContractError):
            pri.load_checkpoint(self.path)

    def test_trailing_bytes(self):
        net, state = self._trained()
        pri.save_checkpoint(self.path, net, state)
        with open(self.path, 'ab') as f:
            f.write(b'\x00' * 4)
        with self.assertRaises(pri.ContractError):
            pri.load_checkpoint(self.path)

    def test_magic_prefix(self):
        net, _ = self._trained()
        pri.save_checkpoint(self.path, net)
        with open(self.path, 'rb') as f:
            self.assertEqual(f.read(len(CHECKPOINT_MAGIC)), CHECKPOINT_MAGIC)

    def test_architecture_round_trip(self):
        net, _ = self._trained()
        rebuilt = network_from_architecture(architecture(net))
        self.assertEqual(architecture(rebuilt), architecture(net))

    def test_architecture_mismatch(self):
        net, _ = self._trained()
        with self.assertRaises(pri.ArchitectureMismatchError) as ctx:
            check_architecture(net, {'variant': 'rmd', 'width': 7})
        self.assertEqual(ctx.exception.expected['width'], 7)
        self.assertEqual(ctx.exception.actual['width'], 5)
        self.assertIn('width', str(ctx.exception))


class TestSize(unittest.TestCase):
    """
    """

    def test_size(self):
        net = pri.build_network(4, 1, [[(1, 'linear')]], np.random.default_rng(0))
        count = (3 * 4 + 4) + 2 * (4 * 4 + 4) + (4 + 1)
        self.assertEqual(pri.parameter_count(net), count)
        self.assertEqual(pri.model_size_bytes(net), 4 * count)
        self.assertEqual(pri.compression_ratio(8 * count, net), 2.0)


if __name__ == '__main__':
    unittest.main()
