"""
.. module:: losses
   :platform: Unix, Windows
   :synopsis: Training objectives for the four INR variants, each with its analytic gradient

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


Every ``*_total`` function returns a :class:`BatchLossReport` whose ``grads`` map holds the gradient of
``total`` with respect to the function's array inputs. Losses are accumulated in 64-bit.
"""

import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from pyrevinr.errors import ConfigError, InvariantError, UsageError
from pyrevinr.evidential import (
    RawEvidentialOutput,
    TARGET_ALPHA,
    TARGET_BETA,
    TARGET_GAMMA,
    evidence_penalty,
    evidence_penalty_grad,
    link,
    link_backward,
    nig_kl,
    nig_kl_grad,
    positive_link,
    positive_link_grad,
    predictive_moments,
    predictive_moments_backward,
    target_nig,
)

__author__ = 'Will McGinnis'

DEGENERATE_VARIANCE = 1e-12
KL_EPS = 1e-8

PHASE_FIT = 'fit'
PHASE_EVIDENTIAL = 'evidential'
PHASE_SINGLE = 'single'


class LossWeights(NamedTuple):
    """
    ``lambda1`` weighs the evidential (rev) or Gaussian NLL (mcd, rmd) term, ``lambda2`` the EU
    regularizer (rev) or the maximum RMD KL weight, ``lambda3`` the AU regularizer and ``delta`` the
    evidence penalty inside the evidential term.
    """
    lambda1: float = 0.01
    lambda2: float = 0.1
    lambda3: float = 0.1
    delta: float = 0.1
    rmd_k: float = 5.0
    target_gamma: float = TARGET_GAMMA
    target_alpha: float = TARGET_ALPHA
    target_beta: float = TARGET_BETA

    def validate(self) -> None:
        for name in ('lambda1', 'lambda2', 'lambda3', 'delta', 'rmd_k'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f'loss weight {name} must be finite and >= 0, got {value}')
        target_nig(0.0, self.target_gamma, self.target_alpha, self.target_beta)

    def to_dict(self) -> Dict[str, float]:
        return dict(self._asdict())

    @classmethod
    def from_dict(cls, d: Dict[str, float]) -> 'LossWeights':
        unknown = set(d) - set(cls._fields)
        if unknown:
            raise ConfigError(f'unknown loss weight keys: {sorted(unknown)}')
        return cls(**{k: float(v) for k, v in d.items()})


def default_weights(variant: str) -> LossWeights:
    if variant == 'mcd':
        return LossWeights(lambda1=0.001, lambda2=0.0, lambda3=0.0)
    if variant == 'rmd':
        return LossWeights(lambda1=0.001, lambda2=0.01, lambda3=0.0)
    if variant == 'det':
        return LossWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0)
    return LossWeights()


class BatchLossReport(NamedTuple):
    total: float
    components: Dict[str, float]
    weights: Dict[str, float]
    phase: str
    grads: Optional[Dict[str, np.ndarray]] = None

    def weighted_sum(self) -> float:
        return sum(self.weights[name] * value for name, value in self.components.items())

    def to_record(self) -> Dict[str, object]:
        return {'total': self.total, 'components': dict(self.components), 'weights': dict(self.weights),
                'phase': self.phase}


def _as_batch(*arrays: np.ndarray, min_length: int = 1) -> List[np.ndarray]:
    out = [np.asarray(a, dtype=np.float64) for a in arrays]
    n = out[0].shape[-1] if out[0].ndim else 0
    for a in out:
        if a.shape[-1:] != (n,):
            raise UsageError(f'batch length mismatch: {[b.shape for b in out]}')
    if n < min_length:
        raise UsageError(f'batch needs at least {min_length} items, got {n}')
    return out


def mse(pred: np.ndarray, y: np.ndarray) -> float:
    pred, y = _as_batch(pred, y)
    r = pred - y
    return float(np.mean(r * r))


def mse_grad(pred: np.ndarray, y: np.ndarray) -> np.ndarray:
    pred, y = _as_batch(pred, y)
    return 2.0 * (pred - y) / len(y)


def gauss_nll(mu: np.ndarray, var: np.ndarray, y: np.ndarray) -> float:
    """
    Batch mean of ``0.5 ln(2 pi var) + (y - mu)^2 / (2 var)``.
    """
    mu, var, y = _as_batch(mu, var, y)
    if np.any(var <= 0):
        raise InvariantError('Gaussian NLL needs var > 0')
    r = y - mu
    return float(np.mean(0.5 * np.log(2.0 * math.pi * var) + r * r / (2.0 * var)))


def gauss_nll_grad(mu: np.ndarray, var: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu, var, y = _as_batch(mu, var, y)
    n = len(y)
    r = y - mu
    return -r / var / n, (0.5 / var - r * r / (2.0 * var * var)) / n


def _centered(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, float, bool]:
    a, b = _as_batch(a, b, min_length=2)
    ac = a - a.mean()
    bc = b - b.mean()
    sa = float(np.dot(ac, ac))
    sb = float(np.dot(bc, bc))
    n = len(a)
    degenerate = sa / n < DEGENERATE_VARIANCE or sb / n < DEGENERATE_VARIANCE
    return ac, bc, sa, sb, degenerate


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """
    Sample Pearson correlation; 0 when either input is (nearly) constant.
    """
    ac, bc, sa, sb, degenerate = _centered(a, b)
    if degenerate:
        return 0.0
    return float(np.clip(np.dot(ac, bc) / math.sqrt(sa * sb), -1.0, 1.0))


def pearson_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Gradient of :func:`pearson` with respect to ``a``.
    """
    ac, bc, sa, sb, degenerate = _centered(a, b)
    if degenerate:
        return np.zeros_like(ac)
    root = math.sqrt(sa * sb)
    r = np.dot(ac, bc) / root
    return bc / root - r * ac / sa


def eu_corr_loss(eu: np.ndarray, xi: np.ndarray) -> float:
    return 1.0 - pearson(eu, xi)


def au_corr_loss(au: np.ndarray, g: np.ndarray) -> float:
    return 1.0 - pearson(au, g)


def _to_distribution(a: np.ndarray) -> Tuple[np.ndarray, float]:
    shift = max(0.0, -float(a.min()))
    u = a + shift + KL_EPS
    total = float(u.sum())
    return u / total, total


def normalized_kl(a: np.ndarray, b: np.ndarray) -> float:
    """
    Discrete ``KL(P || Q)`` between the batch vectors shifted to be nonnegative and normalized to sum 1.
    """
    a, b = _as_batch(a, b)
    p, _ = _to_distribution(a)
    q, _ = _to_distribution(b)
    return float(np.sum(p * np.log(p / q)))


def normalized_kl_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Gradient of :func:`normalized_kl` with respect to ``a`` (the shift is held constant).
    """
    a, b = _as_batch(a, b)
    p, total = _to_distribution(a)
    q, _ = _to_distribution(b)
    log_ratio = np.log(p / q)
    return (log_ratio - np.sum(p * log_ratio)) / total


def rmd_kl_weight(epoch: int, n_epochs: int, lambda2_max: float, k: float = 5.0) -> float:
    """
    Exponential growth schedule over completed epochs. Epochs are 0-indexed, so the last epoch
    (``n_epochs - 1``) trains at ``lambda2_max``.
    """
    return lambda2_max * math.exp(k * ((epoch + 1) / n_epochs - 1.0))


def evidential_phase(epoch: int, n_epochs: int) -> bool:
    return epoch >= n_epochs // 2


def det_total(pred: np.ndarray, y: np.ndarray) -> BatchLossReport:
    m = mse(pred, y)
    return BatchLossReport(m, {'mse': m}, {'mse': 1.0}, PHASE_SINGLE, {'pred': mse_grad(pred, y)})


def rev_total(raw: np.ndarray, y: np.ndarray, g: np.ndarray, weights: LossWeights, epoch: int,
              n_epochs: int) -> BatchLossReport:
    """
    Two-phase evidential objective on raw (N, 4) head outputs: plain MSE before ``n_epochs // 2``, then
    MSE plus the evidential KL with evidence penalty and the EU/AU correlation regularizers.
    """
    raw = np.asarray(raw, dtype=np.float64)
    y, g = _as_batch(y, g)
    r = RawEvidentialOutput(raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3])
    nig = link(r)
    n = len(y)

    m = mse(nig.v, y)
    d_v = mse_grad(nig.v, y)
    if not evidential_phase(epoch, n_epochs):
        grad = np.zeros_like(raw)
        grad[:, 0] = d_v
        return BatchLossReport(m, {'mse': m}, {'mse': 1.0}, PHASE_FIT, {'raw': grad})

    target = target_nig(y, weights.target_gamma, weights.target_alpha, weights.target_beta)
    kl = float(np.mean(nig_kl(nig, target)))
    reg = float(np.mean(evidence_penalty(y, nig)))
    moments = predictive_moments(nig)
    xi = np.abs(y - nig.v)
    eu_loss = eu_corr_loss(moments.eu, xi)
    au_loss = au_corr_loss(moments.au, g)

    components = {'mse': m, 'kl': kl, 'reg': reg, 'eu_corr': eu_loss, 'au_corr': au_loss}
    w = {'mse': 1.0, 'kl': weights.lambda1, 'reg': weights.lambda1 * weights.delta,
         'eu_corr': weights.lambda2, 'au_corr': weights.lambda3}
    total = sum(w[name] * value for name, value in components.items())

    d_kl = nig_kl_grad(nig, target)
    d_reg = evidence_penalty_grad(y, nig)
    d_mom = predictive_moments_backward(nig, -weights.lambda3 * pearson_grad(moments.au, g),
                                        -weights.lambda2 * pearson_grad(moments.eu, xi))
    c_kl = w['kl'] / n
    c_reg = w['reg'] / n
    d_nig = type(nig)(*(c_kl * a + c_reg * b + c for a, b, c in zip(d_kl, d_reg, d_mom)))
    d_nig = d_nig._replace(v=d_nig.v + d_v)
    d_raw = link_backward(r, d_nig)
    return BatchLossReport(total, components, w, PHASE_EVIDENTIAL, {'raw': np.stack(d_raw, axis=1)})


def mcd_total(mu: np.ndarray, var: np.ndarray, y: np.ndarray, weights: LossWeights) -> BatchLossReport:
    """
    ``mse + lambda1 * gauss_nll``.
    """
    m = mse(mu, y)
    nll = gauss_nll(mu, var, y)
    w = {'mse': 1.0, 'nll': weights.lambda1}
    d_mu, d_var = gauss_nll_grad(mu, var, y)
    grads = {'mu': mse_grad(mu, y) + weights.lambda1 * d_mu, 'var': weights.lambda1 * d_var}
    return BatchLossReport(m + weights.lambda1 * nll, {'mse': m, 'nll': nll}, w, PHASE_SINGLE, grads)


def rmd_total(mus: np.ndarray, variances: np.ndarray, y: np.ndarray, weights: LossWeights, epoch: int,
              n_epochs: int) -> BatchLossReport:
    """
    Multi-decoder objective on (D, N) per-decoder means and variances: MSE of the decoder-mean prediction,
    the decoder-averaged Gaussian NLL, and the scheduled KL between the EU and error distributions.
    """
    mus = np.asarray(mus, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mus.ndim != 2 or mus.shape[0] < 2 or mus.shape != variances.shape or mus.shape[1] != len(y):
        raise UsageError(f'rmd_total needs (D >= 2, N) decoder outputs matching N targets, got {mus.shape}')
    n_dec = mus.shape[0]

    mean = mus.mean(axis=0)
    m = mse(mean, y)
    d_mus = np.broadcast_to(mse_grad(mean, y) / n_dec, mus.shape).copy()

    nll = 0.0
    d_vars = np.empty_like(variances)
    for d in range(n_dec):
        nll += gauss_nll(mus[d], variances[d], y) / n_dec
        d_mu, d_var = gauss_nll_grad(mus[d], variances[d], y)
        d_mus[d] += weights.lambda1 * d_mu / n_dec
        d_vars[d] = weights.lambda1 * d_var / n_dec

    eu = mus.var(axis=0)
    xi = np.abs(y - mean)
    kl = normalized_kl(eu, xi)
    lam2 = rmd_kl_weight(epoch, n_epochs, weights.lambda2, weights.rmd_k)
    d_mus += lam2 * normalized_kl_grad(eu, xi) * 2.0 * (mus - mean) / n_dec

    components = {'mse': m, 'nll': nll, 'rmd_kl': kl}
    w = {'mse': 1.0, 'nll': weights.lambda1, 'rmd_kl': lam2}
    total = sum(w[name] * value for name, value in components.items())
    return BatchLossReport(total, components, w, PHASE_SINGLE, {'mu': d_mus, 'var': d_vars})


def objective(variant: str, outputs: Sequence[np.ndarray], y: np.ndarray, g: Optional[np.ndarray],
              weights: LossWeights, epoch: int, n_epochs: int) -> Tuple[BatchLossReport, List[np.ndarray]]:
    """
    Evaluates the variant's loss on raw head outputs and returns the report with dLoss/d(head output).
    """
    if variant == 'det':
        pred = np.asarray(outputs[0], dtype=np.float64)
        report = det_total(pred[:, 0], y)
        return report, [report.grads['pred'][:, None]]

    if variant == 'rev':
        report = rev_total(outputs[0], y, g, weights, epoch, n_epochs)
        return report, [report.grads['raw']]

    if variant == 'mcd':
        raw = np.asarray(outputs[0], dtype=np.float64)
        report = mcd_total(raw[:, 0], positive_link(raw[:, 1]), y, weights)
        grad = np.stack([report.grads['mu'], report.grads['var'] * positive_link_grad(raw[:, 1])], axis=1)
        return report, [grad]

    if variant == 'rmd':
        raw = np.stack([np.asarray(o, dtype=np.float64) for o in outputs])
        report = rmd_total(raw[:, :, 0], positive_link(raw[:, :, 1]), y, weights, epoch, n_epochs)
        d_var = report.grads['var'] * positive_link_grad(raw[:, :, 1])
        return report, [np.stack([report.grads['mu'][d], d_var[d]], axis=1) for d in range(len(outputs))]

    raise UsageError(f'unknown variant {variant!r}')


def first_non_finite(report: BatchLossReport) -> Optional[str]:
    """
    Name of the first non-finite loss component, ``'total'`` if only the total is, else None.
    """
    for name, value in report.components.items():
        if not math.isfinite(value):
            return name
    return None if math.isfinite(report.total) else 'total'
