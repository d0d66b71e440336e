"""Lower bounds on log p(x) for the plain VAE and the selfVAE hierarchy.

All estimates use one reparameterized sample per latent. Standard-normal
noise is drawn from ``rng`` in a fixed order (u first, then z_1, ..., z_K),
so two calls with equally seeded generators see identical draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import distributions as D
from .errors import ContractError
from .models import VAE, LatentHierarchy
from .networks import images_to_tensor
from .tensor import Tensor


@dataclass
class ElboTerms:
    """Per-sample terms in nats; ``total`` is the bound (to be maximized)."""

    re_x: Tensor
    re_y: list[Tensor]
    kl_z: list[Tensor]
    kl_u: Tensor
    total: Tensor
    aux: dict = field(default_factory=dict, repr=False)

    def recombined(self) -> np.ndarray:
        out = self.re_x.data.copy()
        for t in self.re_y:
            out = out + t.data
        for t in self.kl_z:
            out = out - t.data
        return out - self.kl_u.data

    def summary(self) -> dict[str, float]:
        """Batch means of each term, with levels summed."""
        return {
            "re_x": float(self.re_x.data.mean()),
            "re_y": float(sum(t.data.mean() for t in self.re_y)) if self.re_y else 0.0,
            "kl_z": float(sum(t.data.mean() for t in self.kl_z)) if self.kl_z else 0.0,
            "kl_u": float(self.kl_u.data.mean()),
            "elbo": float(self.total.data.mean()),
        }


def _pixels_chw(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).transpose(0, 3, 1, 2)


def _unit_chw(x: np.ndarray) -> np.ndarray:
    return D.pixels_to_unit(_pixels_chw(x))


def _sample(q: D.DiagGaussianParams, rng: np.random.Generator) -> Tensor:
    return D.reparameterize(q, rng.standard_normal(q.shape))


def _latent_kl(q, p, z, analytic: bool) -> Tensor:
    if analytic:
        return D.gaussian_kl(q, p)
    return D.gaussian_log_prob(q, z) - D.gaussian_log_prob(p, z)


def vae_elbo(x: np.ndarray, model: VAE, rng: np.random.Generator) -> ElboTerms:
    """Bound with a learned prior: E_q[log p(x|z) - log q(z|x) + log p(z)].

    The prior term goes through ``model.prior.log_prob``, which for a flow is
    the base density of f^{-1}(z) plus the inverse log-determinant.
    """
    q = model.encoder(images_to_tensor(x))
    z = _sample(q, rng)
    kl = D.gaussian_log_prob(q, z) - model.prior.log_prob(z)
    re_x = D.dlogistic_log_prob(model.decoder(z), _pixels_chw(x))
    zero = Tensor(np.zeros(re_x.shape))
    return ElboTerms(re_x, [], [kl], zero, re_x - kl, aux={"q_z": q, "z": z})


def selfvae_elbo(
    x: np.ndarray, model: LatentHierarchy, rng: np.random.Generator, analytic_kl: bool = True
) -> ElboTerms:
    """Two-level bound RE_x + RE_y - KL_z - KL_u with y = d(x).

    KL_z is the closed-form Gaussian KL unless ``analytic_kl`` is False, in
    which case it is the single-sample estimate log q(z|x) - log p(z|y,u).
    KL_u is always a single-sample estimate against the prior.
    """
    if model.K != 1:
        raise ContractError(f"selfvae_elbo needs K == 1, model has K = {model.K}")
    y, x = model.levels(x)
    y_unit = _unit_chw(y)
    q_u = model.u_encoder(Tensor(y_unit))
    u = _sample(q_u, rng)
    p_y = model.u_decoder(u)
    re_y = D.dlogistic_log_prob(p_y, _pixels_chw(y))
    log_q_u = D.gaussian_log_prob(q_u, u)
    log_p_u = model.prior.log_prob(u)
    kl_u = log_q_u - log_p_u

    q_z = model.z_encoders[0](images_to_tensor(x))
    z = _sample(q_z, rng)
    p_z = model.z_priors[0](u, cond_image=y_unit)
    kl_z = _latent_kl(q_z, p_z, z, analytic_kl)
    p_x = model.y_decoders[0](z, cond_image=y_unit)
    re_x = D.dlogistic_log_prob(p_x, _pixels_chw(x))

    total = re_x + re_y - kl_z - kl_u
    aux = {
        "y": y,
        "q_u": q_u,
        "u": u,
        "log_q_u": log_q_u,
        "log_p_u": log_p_u,
        "q_z": q_z,
        "z": z,
        "p_z": p_z,
        "p_y": p_y,
        "p_x": p_x,
    }
    return ElboTerms(re_x, [re_y], [kl_z], kl_u, total, aux=aux)


def hierarchical_elbo(
    x: np.ndarray, model: LatentHierarchy, rng: np.random.Generator, analytic_kl: bool = True
) -> ElboTerms:
    """K-level bound with z_0 = u and y_{K+1} = x.

    Includes the k = 1 latent KL, KL(q(z_1|y_2) || p(z_1|y_1, u)), so that
    K = 1 coincides with :func:`selfvae_elbo`.
    """
    ys = model.levels(x)
    units = [_unit_chw(y) for y in ys]
    q_u = model.u_encoder(Tensor(units[0]))
    u = _sample(q_u, rng)
    re_top = D.dlogistic_log_prob(model.u_decoder(u), _pixels_chw(ys[0]))
    kl_u = D.gaussian_log_prob(q_u, u) - model.prior.log_prob(u)

    re_levels, kl_levels, zs = [], [], []
    prev = u
    for k in range(1, model.K + 1):
        q_z = model.z_encoders[k - 1](Tensor(units[k]))
        z = _sample(q_z, rng)
        p_z = model.z_priors[k - 1](prev, cond_image=units[k - 1])
        kl_levels.append(_latent_kl(q_z, p_z, z, analytic_kl))
        p_next = model.y_decoders[k - 1](z, cond_image=units[k - 1])
        re_levels.append(D.dlogistic_log_prob(p_next, _pixels_chw(ys[k])))
        zs.append(z)
        prev = z

    re_x = re_levels[-1]
    re_y = [re_top] + re_levels[:-1]
    total = re_x
    for t in re_y:
        total = total + t
    for t in kl_levels:
        total = total - t
    total = total - kl_u
    return ElboTerms(re_x, re_y, kl_levels, kl_u, total, aux={"u": u, "z": zs, "levels": ys})


def elbo(model, x: np.ndarray, rng: np.random.Generator, analytic_kl: bool = True) -> ElboTerms:
    """Dispatch on the model type."""
    if isinstance(model, VAE):
        return vae_elbo(x, model, rng)
    return hierarchical_elbo(x, model, rng, analytic_kl=analytic_kl)


def loss_for_optimizer(terms: ElboTerms) -> Tensor:
    """Negative bound averaged over the batch."""
    return -terms.total.mean()


def nats_to_bpd(nats, dims: int):
    return np.asarray(nats) / (dims * math.log(2.0))
