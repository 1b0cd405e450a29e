"""
.. module:: evidential
   :platform: Unix, Windows
   :synopsis: Normal-Inverse-Gamma evidential math: link, predictive moments, density, KL and evidence penalty

.. moduleauthor:: Will McGinnis <will@pedalwrencher.com>


All functions accept scalars or equally shaped numpy arrays for every NIG field.
"""

import math
from typing import NamedTuple, Union

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma

from pyrevinr.errors import ConfigError, DomainError, InvariantError

__author__ = 'Will McGinnis'

EPS = 1e-6

TARGET_GAMMA = 10.0
TARGET_ALPHA = 5.0
TARGET_BETA = 0.01

Scalar = Union[float, np.ndarray]


class NIGParams(NamedTuple):
    v: Scalar
    gamma: Scalar
    alpha: Scalar
    beta: Scalar


class RawEvidentialOutput(NamedTuple):
    rv: Scalar
    rgamma: Scalar
    ralpha: Scalar
    rbeta: Scalar


class Moments(NamedTuple):
    mean: Scalar
    au: Scalar
    eu: Scalar


def softplus(x: Scalar) -> Scalar:
    return np.logaddexp(0.0, x)


def positive_link(x: Scalar) -> Scalar:
    """
    ``softplus(x) + EPS``, the positivity link shared by evidential and variance heads.
    """
    return softplus(x) + EPS


def positive_link_grad(x: Scalar) -> Scalar:
    return expit(x)


def validate_nig(nig: NIGParams) -> None:
    if not (np.all(np.isfinite(nig.v)) and np.all(np.isfinite(nig.gamma))
            and np.all(np.isfinite(nig.alpha)) and np.all(np.isfinite(nig.beta))):
        raise InvariantError('NIG parameters must be finite')
    if np.any(np.asarray(nig.gamma) <= 0):
        raise InvariantError('NIG requires gamma > 0')
    if np.any(np.asarray(nig.alpha) <= 1):
        raise InvariantError('NIG requires alpha > 1')
    if np.any(np.asarray(nig.beta) <= 0):
        raise InvariantError('NIG requires beta > 0')


def link(raw: RawEvidentialOutput) -> NIGParams:
    """
    Maps unconstrained head outputs onto the NIG constraint set.
    """
    return NIGParams(
        raw.rv,
        positive_link(raw.rgamma),
        positive_link(raw.ralpha) + 1.0,
        positive_link(raw.rbeta),
    )


def link_backward(raw: RawEvidentialOutput, grad: NIGParams) -> RawEvidentialOutput:
    return RawEvidentialOutput(
        grad.v,
        grad.gamma * positive_link_grad(raw.rgamma),
        grad.alpha * positive_link_grad(raw.ralpha),
        grad.beta * positive_link_grad(raw.rbeta),
    )


def predictive_moments(nig: NIGParams) -> Moments:
    """
    Closed-form mean ``v``, aleatoric ``beta/(alpha-1)`` and epistemic ``beta/(gamma(alpha-1))`` uncertainty.
    """
    validate_nig(nig)
    au = nig.beta / (nig.alpha - 1.0)
    return Moments(nig.v, au, au / nig.gamma)


def predictive_moments_backward(nig: NIGParams, d_au: Scalar, d_eu: Scalar) -> NIGParams:
    """
    Gradient with respect to the NIG fields given upstream gradients on AU and EU.
    """
    am1 = nig.alpha - 1.0
    au = nig.beta / am1
    eu = au / nig.gamma
    return NIGParams(
        np.zeros_like(np.asarray(nig.v, dtype=np.float64)),
        -d_eu * eu / nig.gamma,
        -(d_au * au + d_eu * eu) / am1,
        (d_au + d_eu / nig.gamma) / am1,
    )


def nig_log_pdf(mu: Scalar, sigma2: Scalar, nig: NIGParams) -> Scalar:
    if np.any(np.asarray(sigma2) <= 0):
        raise DomainError('NIG density needs sigma2 > 0')
    log_sigma2 = np.log(sigma2)
    return (nig.alpha * np.log(nig.beta) + 0.5 * np.log(nig.gamma) - gammaln(nig.alpha)
            - 0.5 * (math.log(2.0 * math.pi) + log_sigma2)
            - (nig.alpha + 1.0) * log_sigma2
            - (2.0 * nig.beta + nig.gamma * (nig.v - mu) ** 2) / (2.0 * sigma2))


def nig_pdf(mu: Scalar, sigma2: Scalar, nig: NIGParams) -> Scalar:
    """
    Joint density of (mu, sigma2) under the NIG, evaluated in log space.
    """
    return np.exp(nig_log_pdf(mu, sigma2, nig))


def nig_kl(p: NIGParams, q: NIGParams) -> Scalar:
    """
    ``KL(p || q)``: the expected Normal KL given sigma2 (under p's Inverse-Gamma) plus the Inverse-Gamma KL.
    """
    validate_nig(p)
    validate_nig(q)
    ratio = q.gamma / p.gamma
    normal = 0.5 * (ratio - 1.0 - np.log(ratio) + q.gamma * (p.v - q.v) ** 2 * p.alpha / p.beta)
    inv_gamma = ((p.alpha - q.alpha) * digamma(p.alpha) - gammaln(p.alpha) + gammaln(q.alpha)
                 + q.alpha * (np.log(p.beta) - np.log(q.beta)) + p.alpha * (q.beta - p.beta) / p.beta)
    return normal + inv_gamma


def nig_kl_grad(p: NIGParams, q: NIGParams) -> NIGParams:
    """
    Gradient of :func:`nig_kl` with respect to the fields of ``p``; ``q`` is a constant.
    """
    d = p.v - q.v
    return NIGParams(
        q.gamma * d * p.alpha / p.beta,
        0.5 * (1.0 / p.gamma - q.gamma / p.gamma ** 2),
        0.5 * q.gamma * d * d / p.beta + (p.alpha - q.alpha) * polygamma(1, p.alpha) + (q.beta - p.beta) / p.beta,
        -0.5 * q.gamma * d * d * p.alpha / p.beta ** 2 + q.alpha / p.beta - p.alpha * q.beta / p.beta ** 2,
    )


def evidence_penalty(y: Scalar, nig: NIGParams) -> Scalar:
    """
    ``|y - v| * (2 gamma + alpha)``: evidence spent on a wrong prediction.
    """
    return np.abs(y - nig.v) * (2.0 * nig.gamma + nig.alpha)


def evidence_penalty_grad(y: Scalar, nig: NIGParams) -> NIGParams:
    err = np.abs(y - nig.v)
    return NIGParams(
        -np.sign(y - nig.v) * (2.0 * nig.gamma + nig.alpha),
        2.0 * err,
        err,
        np.zeros_like(err),
    )


def target_nig(y: Scalar, gamma_t: float = TARGET_GAMMA, alpha_t: float = TARGET_ALPHA,
               beta_t: float = TARGET_BETA) -> NIGParams:
    """
    Low-uncertainty NIG centred on the ground truth. Treated as a constant by the losses.
    """
    if not (gamma_t > 0 and alpha_t > 1 and beta_t > 0):
        raise ConfigError(f'target NIG needs gamma > 0, alpha > 1, beta > 0, got ({gamma_t}, {alpha_t}, {beta_t})')
    y = np.asarray(y, dtype=np.float64)
    return NIGParams(y, np.full_like(y, gamma_t), np.full_like(y, alpha_t), np.full_like(y, beta_t))
