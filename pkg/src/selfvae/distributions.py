"""Densities used by the model: diagonal Gaussians, discretized logistic
mixtures over 8-bit pixels, a standard-normal base and a Gaussian mixture
prior.

All log-densities return one value per batch element, summed over every
non-batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .tensor import Tensor

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_SCALE_MIN = -7.0
NUM_LEVELS = 256


def _sum_per_sample(t: Tensor) -> Tensor:
    if t.ndim == 1:
        return t
    return t.sum(axis=tuple(range(1, t.ndim)))


@dataclass
class DiagGaussianParams:
    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise ShapeError(f"mu {self.mu.shape} vs log_sigma {self.log_sigma.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)


@dataclass
class MixtureLogisticParams:
    """Per-subpixel mixture of ``I`` logistics; component axis is last."""

    logit_pi: Tensor
    mu: Tensor
    log_s: Tensor
    num_levels: int = NUM_LEVELS

    def __post_init__(self):
        if not (self.logit_pi.shape == self.mu.shape == self.log_s.shape):
            raise ShapeError("mixture parameter shapes differ")

    @property
    def num_components(self) -> int:
        return self.mu.shape[-1]

    @property
    def event_shape(self) -> tuple[int, ...]:
        return self.mu.shape[:-1]


@dataclass
class MoGPriorParams:
    means: Tensor  # [K, D]
    log_sigmas: Tensor  # [K, D]
    logit_weights: Tensor  # [K]

    @property
    def num_components(self) -> int:
        return self.means.shape[0]


def gaussian_log_prob(params: DiagGaussianParams, x) -> Tensor:
    x = T.as_tensor(x)
    if x.shape != params.shape:
        raise ShapeError(f"x {x.shape} does not match mu {params.shape}")
    z = (x - params.mu) * T.exp(-params.log_sigma)
    return _sum_per_sample(-HALF_LOG_2PI - params.log_sigma - 0.5 * z * z)


def standard_normal_log_prob(x) -> Tensor:
    x = T.as_tensor(x)
    return _sum_per_sample(-HALF_LOG_2PI - 0.5 * x * x)


def reparameterize(params: DiagGaussianParams, eps) -> Tensor:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != params.shape:
        raise ShapeError(f"eps {eps.shape} does not match mu {params.shape}")
    return params.mu + T.exp(params.log_sigma) * eps


def gaussian_kl(q: DiagGaussianParams, p: DiagGaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over non-batch axes."""
    if q.shape != p.shape:
        raise ShapeError(f"q {q.shape} vs p {p.shape}")
    diff = q.mu - p.mu
    ratio = T.exp(2.0 * (q.log_sigma - p.log_sigma))
    kl = p.log_sigma - q.log_sigma + 0.5 * (ratio + diff * diff * T.exp(-2.0 * p.log_sigma)) - 0.5
    return _sum_per_sample(kl)


def pixels_to_unit(x: np.ndarray) -> np.ndarray:
    """Map {0..255} to [-1, 1]."""
    return np.asarray(x, dtype=np.float64) / 127.5 - 1.0


def _check_pixels(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.floating) and not np.all(np.floor(x) == x):
        raise DomainError("pixel values must be integers")
    if x.size and (x.min() < 0 or x.max() > NUM_LEVELS - 1):
        raise DomainError("pixel values must lie in {0..255}")
    return x


def dlogistic_component_log_probs(params: MixtureLogisticParams, x) -> Tensor:
    """log P(bin x | component i) for every component, shape [..., I]."""
    x = _check_pixels(x)
    if x.shape != params.event_shape:
        raise ShapeError(f"x {x.shape} does not match {params.event_shape}")
    half = 1.0 / (params.num_levels - 1)
    xt = pixels_to_unit(x)[..., None]
    log_s = T.clamp(params.log_s, lo=LOG_SCALE_MIN)
    inv_s = T.exp(-log_s)
    centered = xt - params.mu
    plus = inv_s * (centered + half)
    minus = inv_s * (centered - half)
    # log(sigmoid(a) - sigmoid(b)) = b + log(expm1(a - b)) - softplus(a) - softplus(b)
    width = (2.0 * half) * inv_s
    log_mid = minus + T.log(T.expm1(width)) - T.softplus(plus) - T.softplus(minus)
    log_left = plus - T.softplus(plus)
    log_right = -T.softplus(minus)
    xb = np.broadcast_to(x[..., None], params.mu.shape)
    out = T.where(xb == 0, log_left, log_mid)
    return T.where(xb == params.num_levels - 1, log_right, out)


def dlogistic_log_prob(params: MixtureLogisticParams, x) -> Tensor:
    """Per-sample log-likelihood of integer pixels ``x`` under the mixture."""
    comp = dlogistic_component_log_probs(params, x)
    mixed = T.logsumexp(comp + T.log_softmax(params.logit_pi, axis=-1), axis=-1)
    return _sum_per_sample(mixed)


def dlogistic_sample(
    params: MixtureLogisticParams, rng: np.random.Generator, mode: bool = False
) -> np.ndarray:
    """Draw integer pixels. ``mode=True`` decodes the most likely component's
    location deterministically instead of sampling."""
    logits = params.logit_pi.data
    mu = params.mu.data
    log_s = np.maximum(params.log_s.data, LOG_SCALE_MIN)
    if mode:
        k = logits.argmax(axis=-1)[..., None]
        loc = np.take_along_axis(mu, k, axis=-1)[..., 0]
    else:
        gumbel = -np.log(-np.log(rng.uniform(1e-10, 1.0 - 1e-10, size=logits.shape)))
        k = (logits + gumbel).argmax(axis=-1)[..., None]
        m = np.take_along_axis(mu, k, axis=-1)[..., 0]
        s = np.exp(np.take_along_axis(log_s, k, axis=-1)[..., 0])
        u = rng.uniform(1e-5, 1.0 - 1e-5, size=m.shape)
        loc = m + s * (np.log(u) - np.log1p(-u))
    loc = np.clip(loc, -1.0, 1.0)
    pix = np.floor((loc + 1.0) * 127.5 + 0.5)
    return np.clip(pix, 0, params.num_levels - 1).astype(np.uint8)


def mog_log_prob(params: MoGPriorParams, z) -> Tensor:
    """log sum_k w_k N(z | m_k, s_k) with z flattened to [N, D]."""
    z = T.as_tensor(z)
    z = z.reshape(z.shape[0], -1)
    k, d = params.means.shape
    if z.shape[1] != d:
        raise ShapeError(f"latent dim {z.shape[1]} vs prior dim {d}")
    zz = z.reshape(z.shape[0], 1, d)
    std = (zz - params.means) * T.exp(-params.log_sigmas)
    comp = (-HALF_LOG_2PI - params.log_sigmas - 0.5 * std * std).sum(axis=-1)  # [N, K]
    log_w = T.log_softmax(params.logit_weights, axis=-1)
    return T.logsumexp(comp + log_w, axis=-1)


def mog_sample(params: MoGPriorParams, rng: np.random.Generator, n: int) -> np.ndarray:
    w = np.exp(T.log_softmax(params.logit_weights.detach()).data)
    k = rng.choice(params.num_components, size=n, p=w / w.sum())
    eps = rng.standard_normal((n, params.means.shape[1]))
    return params.means.data[k] + np.exp(params.log_sigmas.data[k]) * eps
