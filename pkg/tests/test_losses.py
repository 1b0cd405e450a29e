import math
import unittest

import numpy as np

import pyrevinr as pri
from pyrevinr.evidential import RawEvidentialOutput, link, predictive_moments
from pyrevinr.losses import (
    PHASE_EVIDENTIAL,
    PHASE_FIT,
    au_corr_loss,
    eu_corr_loss,
    evidential_phase,
    gauss_nll,
    gauss_nll_grad,
    mse,
    mse_grad,
    normalized_kl,
    normalized_kl_grad,
    pearson,
    pearson_grad,
    rev_total,
    rmd_kl_weight,
    rmd_total,
)

__author__ = 'willmcginnis'

H = 1e-5
CONFIGS = 100


def numeric_grad(f, x):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + H
        up = f(x)
        flat[i] = old - H
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * H)
    return grad


def assert_grad_close(test, analytic, numeric):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    test.assertLess(float(np.max(np.abs(analytic - numeric) / scale)), 1e-4)


class TestBasicLosses(unittest.TestCase):
    """
    """

    def test_mse(self):
        self.assertEqual(mse([1.0, 2.0], [1.0, 4.0]), 2.0)
        rng = np.random.default_rng(0)
        for _ in range(CONFIGS):
            pred, y = rng.normal(size=(2, 7))
            assert_grad_close(self, mse_grad(pred, y), numeric_grad(lambda p: mse(p, y), pred))

    def test_gauss_nll(self):
        self.assertAlmostEqual(gauss_nll([0.0], [1.0 / (2 * math.pi)], [0.0]), 0.0, places=12)
        rng = np.random.default_rng(1)
        for _ in range(CONFIGS):
            mu, y = rng.normal(size=(2, 6))
            var = rng.uniform(0.1, 2.0, 6)
            d_mu, d_var = gauss_nll_grad(mu, var, y)
            assert_grad_close(self, d_mu, numeric_grad(lambda m: gauss_nll(m, var, y), mu))
            assert_grad_close(self, d_var, numeric_grad(lambda v: gauss_nll(mu, v, y), var))

    def test_gauss_nll_needs_positive_variance(self):
        with self.assertRaises(pri.InvariantError):
            gauss_nll([0.0], [0.0], [0.0])

    def test_length_mismatch(self):
        with self.assertRaises(pri.UsageError):
            mse([1.0, 2.0], [1.0])


class TestPearson(unittest.TestCase):
    """
    """

    def test_properties(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(2, 50))
        self.assertAlmostEqual(pearson(a, a), 1.0, places=12)
        self.assertAlmostEqual(pearson(a, -a), -1.0, places=12)
        self.assertAlmostEqual(pearson(a, b), pearson(b, a), places=12)
        self.assertAlmostEqual(pearson(3 * a + 1, b), pearson(a, b), places=12)

    def test_degenerate(self):
        a = np.full(5, 2.0)
        b = np.arange(5.0)
        self.assertEqual(pearson(a, b), 0.0)
        self.assertEqual(pearson(b, a), 0.0)
        np.testing.assert_array_equal(pearson_grad(a, b), 0.0)

    def test_needs_two_samples(self):
        with self.assertRaises(pri.UsageError):
            pearson([1.0], [2.0])

    def test_gradient(self):
        rng = np.random.default_rng(3)
        for _ in range(CONFIGS):
            a, b = rng.normal(size=(2, 8))
            assert_grad_close(self, pearson_grad(a, b), numeric_grad(lambda x: pearson(x, b), a))

    def test_correlation_loss_gradients(self):
        rng = np.random.default_rng(11)
        for _ in range(CONFIGS):
            eu = rng.uniform(0.01, 2.0, 8)
            xi = np.abs(rng.normal(size=8))
            au = rng.uniform(0.01, 2.0, 8)
            g = rng.uniform(0.0, 3.0, 8)
            assert_grad_close(self, -pearson_grad(eu, xi), numeric_grad(lambda x: eu_corr_loss(x, xi), eu))
            assert_grad_close(self, -pearson_grad(au, g), numeric_grad(lambda x: au_corr_loss(x, g), au))

    def test_correlation_loss_range(self):
        rng = np.random.default_rng(12)
        a = rng.uniform(0.1, 1.0, 20)
        self.assertAlmostEqual(eu_corr_loss(a, 2 * a), 0.0, places=12)
        self.assertAlmostEqual(au_corr_loss(a, -a), 2.0, places=12)

    def test_independent_fields_are_uncorrelated(self):
        rng = np.random.default_rng(13)
        au = rng.uniform(0.0, 1.0, 10000)
        g = rng.uniform(0.0, 1.0, 10000)
        self.assertAlmostEqual(au_corr_loss(au, g), 1.0, delta=0.05)


class TestNormalizedKL(unittest.TestCase):
    """
    """

    def test_identical(self):
        a = np.array([0.5, 1.0, 2.0])
        self.assertAlmostEqual(normalized_kl(a, a), 0.0, places=12)
        self.assertAlmostEqual(normalized_kl(a, 4 * a), 0.0, places=6)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(CONFIGS):
            a, b = rng.normal(size=(2, 10))
            self.assertGreaterEqual(normalized_kl(a, b), -1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        for _ in range(CONFIGS):
            a = rng.uniform(0.1, 2.0, 9)
            b = rng.uniform(0.1, 2.0, 9)
            assert_grad_close(self, normalized_kl_grad(a, b), numeric_grad(lambda x: normalized_kl(x, b), a))


class TestSchedules(unittest.TestCase):
    """
    """

    def test_rmd_weight(self):
        self.assertAlmostEqual(rmd_kl_weight(299, 300, 0.01), 0.01, places=15)
        self.assertAlmostEqual(rmd_kl_weight(0, 300, 0.01), 0.01 * math.exp(5.0 * (1.0 / 300 - 1.0)), places=15)
        self.assertLess(rmd_kl_weight(298, 300, 0.01), 0.01)
        weights = [rmd_kl_weight(e, 300, 0.01) for e in range(300)]
        self.assertTrue(all(b > a for a, b in zip(weights, weights[1:])))

    def test_phase_boundary(self):
        self.assertFalse(evidential_phase(149, 300))
        self.assertTrue(evidential_phase(150, 300))
        self.assertFalse(evidential_phase(2, 5))
        self.assertTrue(evidential_phase(2, 4))

    def test_default_weights(self):
        self.assertEqual(pri.default_weights('rev'), pri.LossWeights(0.01, 0.1, 0.1, 0.1))
        self.assertEqual(pri.default_weights('mcd').lambda1, 0.001)
        self.assertEqual(pri.default_weights('rmd').lambda2, 0.01)
        self.assertEqual(pri.default_weights('det').lambda1, 0.0)

    def test_weights_validation(self):
        with self.assertRaises(pri.ConfigError):
            pri.LossWeights(lambda1=-1.0).validate()
        with self.assertRaises(pri.ConfigError):
            pri.LossWeights(target_alpha=0.5).validate()
        with self.assertRaises(pri.ConfigError):
            pri.LossWeights.from_dict({'lambda4': 1.0})
        w = pri.LossWeights(lambda2=0.0)
        self.assertEqual(pri.LossWeights.from_dict(w.to_dict()), w)


class TestRevObjective(unittest.TestCase):
    """
    """

    def setUp(self):
        rng = np.random.default_rng(6)
        self.raw = rng.normal(size=(8, 4))
        self.y = rng.normal(size=8)
        self.g = rng.uniform(0, 2, 8)

    def test_fit_phase_is_mse(self):
        report = rev_total(self.raw, self.y, self.g, pri.LossWeights(), 4, 10)
        self.assertEqual(report.phase, PHASE_FIT)
        self.assertEqual(report.total, mse(self.raw[:, 0], self.y))
        np.testing.assert_array_equal(report.grads['raw'][:, 1:], 0.0)

    def test_components(self):
        report = rev_total(self.raw, self.y, self.g, pri.LossWeights(), 5, 10)
        self.assertEqual(report.phase, PHASE_EVIDENTIAL)
        self.assertEqual(set(report.components), {'mse', 'kl', 'reg', 'eu_corr', 'au_corr'})
        self.assertAlmostEqual(report.total, report.weighted_sum(), delta=1e-10)
        self.assertAlmostEqual(report.weights['reg'], 0.01 * 0.1, places=15)
        for name in ('eu_corr', 'au_corr'):
            self.assertGreaterEqual(report.components[name], 0.0)
            self.assertLessEqual(report.components[name], 2.0)

    def test_gradient_without_eu_term(self):
        rng = np.random.default_rng(14)
        for case in range(CONFIGS):
            raw = rng.normal(size=(8, 4))
            y = rng.normal(size=8)
            g = rng.uniform(0, 2, 8)
            weights = pri.LossWeights(lambda1=float(rng.uniform(0.001, 0.1)), lambda2=0.0,
                                      lambda3=float(rng.uniform(0.0, 0.5)))
            epoch = int(rng.integers(5, 10))
            report = rev_total(raw, y, g, weights, epoch, 10)
            self.assertEqual(report.phase, PHASE_EVIDENTIAL)
            self.assertGreater(report.weights['kl'], 0.0)
            self.assertGreater(report.weights['reg'], 0.0)
            numeric = numeric_grad(lambda r: rev_total(r, y, g, weights, epoch, 10).total, raw)
            with self.subTest(case=case):
                assert_grad_close(self, report.grads['raw'], numeric)

    def test_eu_term_treats_error_as_constant(self):
        rng = np.random.default_rng(15)
        for case in range(CONFIGS):
            raw = rng.normal(size=(8, 4))
            y = rng.normal(size=8)
            g = rng.uniform(0, 2, 8)
            lam2 = float(rng.uniform(0.01, 0.5))
            with_eu = rev_total(raw, y, g, pri.LossWeights(lambda2=lam2), 5, 10).grads['raw']
            without = rev_total(raw, y, g, pri.LossWeights(lambda2=0.0), 5, 10).grads['raw']
            xi = np.abs(y - raw[:, 0])

            def eu_loss(r):
                eu = predictive_moments(link(RawEvidentialOutput(r[:, 0], r[:, 1], r[:, 2], r[:, 3]))).eu
                return lam2 * eu_corr_loss(eu, xi)

            with self.subTest(case=case):
                assert_grad_close(self, with_eu - without, numeric_grad(eu_loss, raw))


class TestBaselineObjectives(unittest.TestCase):
    """
    """

    def test_det(self):
        rng = np.random.default_rng(7)
        w = pri.default_weights('det')
        for _ in range(CONFIGS):
            out = rng.normal(size=(6, 1))
            y = rng.normal(size=6)
            report, grads = pri.objective('det', [out], y, None, w, 0, 10)
            self.assertEqual(report.total, mse(out[:, 0], y))
            assert_grad_close(self, grads[0], numeric_grad(
                lambda o: pri.objective('det', [o], y, None, w, 0, 10)[0].total, out))

    def test_mcd(self):
        rng = np.random.default_rng(8)
        w = pri.default_weights('mcd')
        for _ in range(CONFIGS):
            out = rng.normal(size=(6, 2))
            y = rng.normal(size=6)
            report, grads = pri.objective('mcd', [out], y, None, w, 0, 10)
            self.assertEqual(set(report.components), {'mse', 'nll'})
            self.assertAlmostEqual(report.total, report.weighted_sum(), delta=1e-10)
            assert_grad_close(self, grads[0], numeric_grad(
                lambda o: pri.objective('mcd', [o], y, None, w, 0, 10)[0].total, out))

    def test_rmd_without_kl(self):
        rng = np.random.default_rng(9)
        w = pri.LossWeights(lambda1=0.5, lambda2=0.0)
        for case in range(CONFIGS):
            outs = rng.normal(size=(3, 6, 2))
            y = rng.normal(size=6)

            def total(o):
                return pri.objective('rmd', list(o), y, None, w, 3, 10)[0].total

            report, grads = pri.objective('rmd', list(outs), y, None, w, 3, 10)
            self.assertEqual(set(report.components), {'mse', 'nll', 'rmd_kl'})
            with self.subTest(case=case):
                assert_grad_close(self, np.stack(grads), numeric_grad(total, outs))

    def test_rmd_kl_term_treats_error_as_constant(self):
        rng = np.random.default_rng(10)
        w = pri.LossWeights(lambda1=0.001, lambda2=0.01)
        for case in range(CONFIGS):
            mus = rng.normal(size=(4, 7))
            variances = rng.uniform(0.1, 1.0, (4, 7))
            y = rng.normal(size=7)
            epoch = int(rng.integers(0, 10))
            with_kl = rmd_total(mus, variances, y, w, epoch, 10)
            without = rmd_total(mus, variances, y, w._replace(lambda2=0.0), epoch, 10)
            lam2 = rmd_kl_weight(epoch, 10, 0.01)
            self.assertAlmostEqual(with_kl.weights['rmd_kl'], lam2, places=15)
            xi = np.abs(y - mus.mean(axis=0))
            numeric = numeric_grad(lambda m: lam2 * normalized_kl(m.var(axis=0), xi), mus)
            with self.subTest(case=case):
                assert_grad_close(self, with_kl.grads['mu'] - without.grads['mu'], numeric)
                np.testing.assert_allclose(with_kl.grads['var'], without.grads['var'])

    def test_rmd_needs_two_decoders(self):
        with self.assertRaises(pri.UsageError):
            rmd_total(np.zeros((1, 3)), np.ones((1, 3)), np.zeros(3), pri.LossWeights(), 0, 10)

    def test_unknown_variant(self):
        with self.assertRaises(pri.UsageError):
            pri.objective('gp', [np.zeros((2, 1))], np.zeros(2), None, pri.LossWeights(), 0, 10)


if __name__ == '__main__':
    unittest.main()
