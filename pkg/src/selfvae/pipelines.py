"""Sampling, reconstruction and likelihood evaluation.

Nothing here records on a tape. Pixel outputs are uint8 batches
(N, H, W, C). Options shared by the decoding functions:

``mode_decode``
    decode pixels deterministically (most likely component's location)
    instead of sampling the mixture.
``temperature``
    multiplies the standard-normal noise of every Gaussian draw.
``posterior_mean``
    infer latents as the mean of q instead of sampling it.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from . import distributions as D
from .errors import ContractError
from .flow import FlowStack
from .models import VAE, LatentHierarchy
from .networks import images_to_tensor
from .objectives import elbo
from .tensor import Tensor

LATENT_BYTES = 4
PIXEL_BYTES = 1


class ReconMode(Enum):
    GENERATION = "gen"
    CONDITIONAL_GENERATION = "cond-gen"
    CONDITIONAL_RECONSTRUCTION = "cond-recon"
    RECONSTRUCTION_1 = "recon1"
    RECONSTRUCTION_2 = "recon2"

    @property
    def inferred(self) -> tuple[str, ...]:
        """Variables taken from the input image; each must be transmitted."""
        return {
            ReconMode.GENERATION: (),
            ReconMode.CONDITIONAL_GENERATION: ("y", "z"),
            ReconMode.CONDITIONAL_RECONSTRUCTION: ("y", "u"),
            ReconMode.RECONSTRUCTION_1: ("u",),
            ReconMode.RECONSTRUCTION_2: ("u", "z"),
        }[self]


def sent_bytes(model, mode: ReconMode) -> int:
    """Raw storage per image of the variables ``mode`` infers: transformed
    images at one byte per pixel, latents as 32-bit floats."""
    lat = int(np.prod(model.cfg.latent_shape)) * LATENT_BYTES
    if isinstance(model, VAE):
        return lat if mode is ReconMode.RECONSTRUCTION_1 else 0
    y_finest = int(np.prod(model.y_shapes[model.K - 1])) * PIXEL_BYTES
    total = 0
    for var in mode.inferred:
        if var == "y":
            total += y_finest
        elif var == "u":
            total += lat
        elif mode is ReconMode.CONDITIONAL_GENERATION:
            total += lat
        else:
            total += lat * model.K
    return total


def _to_hwc(pix: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(pix.transpose(0, 2, 3, 1))


def _unit(y: np.ndarray) -> np.ndarray:
    return D.pixels_to_unit(np.asarray(y).transpose(0, 3, 1, 2))


def _gaussian(q: D.DiagGaussianParams, rng, temperature: float, mean: bool = False) -> Tensor:
    if mean:
        return Tensor(q.mu.data)
    eps = rng.standard_normal(q.shape) * temperature
    return Tensor(q.mu.data + q.sigma * eps)


def _pixels(params, rng, mode: bool) -> np.ndarray:
    return _to_hwc(D.dlogistic_sample(params, rng, mode=mode))


def _infer_u(model: LatentHierarchy, y1: np.ndarray, rng, temperature, posterior_mean) -> Tensor:
    return _gaussian(model.u_encoder(Tensor(_unit(y1))), rng, temperature, posterior_mean)


def _run_chain(
    model: LatentHierarchy,
    u: Tensor,
    rng: np.random.Generator,
    fixed_ys: list[np.ndarray] | None = None,
    fixed_zs: dict[int, Tensor] | None = None,
    mode_y: bool = False,
    mode_x: bool = False,
    temperature: float = 1.0,
) -> np.ndarray:
    """Decode downwards from u. ``fixed_ys`` supplies ground-truth y_1..y_K;
    ``fixed_zs`` maps level k to an inferred z_k; everything else is drawn."""
    fixed_zs = fixed_zs or {}
    y = fixed_ys[0] if fixed_ys else _pixels(model.u_decoder(u), rng, mode_y)
    prev = u
    for k in range(1, model.K + 1):
        cond = _unit(y)
        if k in fixed_zs:
            z = fixed_zs[k]
        else:
            z = _gaussian(model.z_priors[k - 1](prev, cond_image=cond), rng, temperature)
        last = k == model.K
        if fixed_ys and not last:
            y = fixed_ys[k]
        else:
            y = _pixels(model.y_decoders[k - 1](z, cond_image=cond), rng, mode_x if last else mode_y)
        prev = z
    return y


def generate(
    model,
    rng: np.random.Generator,
    n: int,
    mode_decode: bool = False,
    temperature: float = 1.0,
) -> np.ndarray:
    """Ancestral sampling: u ~ p(u), then every y_k and z_k down to x."""
    if isinstance(model, VAE):
        z = Tensor(model.prior.sample(rng, n))
        return _pixels(model.decoder(z), rng, mode_decode)
    u = Tensor(model.prior.sample(rng, n))
    return _run_chain(model, u, rng, mode_y=mode_decode, mode_x=mode_decode, temperature=temperature)


def reconstruct(
    model,
    x_star: np.ndarray,
    mode: ReconMode,
    rng: np.random.Generator,
    mode_decode: bool = False,
    temperature: float = 1.0,
    posterior_mean: bool = False,
) -> tuple[np.ndarray, int]:
    """Run one of the five generation/reconstruction schemes on a batch.

    Returns the decoded images and the per-image byte count of the inferred
    variables.
    """
    mode = ReconMode(mode)
    x_star = np.asarray(x_star, dtype=np.uint8)
    n = x_star.shape[0]
    opts = dict(mode_y=mode_decode, mode_x=mode_decode, temperature=temperature)
    if mode is ReconMode.GENERATION:
        return generate(model, rng, n, mode_decode, temperature), 0

    if isinstance(model, VAE):
        if mode is not ReconMode.RECONSTRUCTION_1:
            raise ContractError(f"a plain VAE supports only gen and recon1, not {mode.value}")
        q = model.encoder(images_to_tensor(x_star))
        z = _gaussian(q, rng, temperature, posterior_mean)
        return _pixels(model.decoder(z), rng, mode_decode), sent_bytes(model, mode)

    levels = model.levels(x_star)  # [y_1, ..., y_K, x]
    K = model.K
    if mode is ReconMode.CONDITIONAL_GENERATION:
        y_k = levels[K - 1]
        q = model.z_encoders[K - 1](Tensor(_unit(x_star)))
        z = _gaussian(q, rng, temperature, posterior_mean)
        p_x = model.y_decoders[K - 1](z, cond_image=_unit(y_k))
        out = _pixels(p_x, rng, mode_decode)
    elif mode is ReconMode.CONDITIONAL_RECONSTRUCTION:
        u = _infer_u(model, levels[0], rng, temperature, posterior_mean)
        out = _run_chain(model, u, rng, fixed_ys=levels[:K], **opts)
    elif mode is ReconMode.RECONSTRUCTION_1:
        u = _infer_u(model, levels[0], rng, temperature, posterior_mean)
        out = _run_chain(model, u, rng, **opts)
    else:
        u = _infer_u(model, levels[0], rng, temperature, posterior_mean)
        zs = {}
        for k in range(1, K + 1):
            q = model.z_encoders[k - 1](Tensor(_unit(levels[k])))
            zs[k] = _gaussian(q, rng, temperature, posterior_mean)
        out = _run_chain(model, u, rng, fixed_zs=zs, **opts)
    return out, sent_bytes(model, mode)


def conditional_generation(model, x_star: np.ndarray, rng: np.random.Generator, **kwargs) -> np.ndarray:
    """Keep y = d(x*), take z from q(z|x*) and decode x."""
    return reconstruct(model, x_star, ReconMode.CONDITIONAL_GENERATION, rng, **kwargs)[0]


def interpolation_codes(model: LatentHierarchy, x_a: np.ndarray, x_b: np.ndarray, steps: int):
    """Posterior-mean codes of both images, interpolated linearly in the
    flow's base space. Returns (v_path, u_path), each (steps, *latent)."""
    if steps < 2:
        raise ContractError("interpolation needs steps >= 2")
    if isinstance(model, VAE):
        raise ContractError("u-interpolation needs a selfVAE")
    pair = np.stack([np.asarray(x_a, np.uint8), np.asarray(x_b, np.uint8)])
    u = model.u_encoder(Tensor(_unit(model.levels(pair)[0]))).mu.data
    flow = model.prior if isinstance(model.prior, FlowStack) else None
    v = flow.inverse(Tensor(u))[0].data if flow else u
    t = np.linspace(0.0, 1.0, steps).reshape(-1, *([1] * (u.ndim - 1)))
    v_path = (1.0 - t) * v[0] + t * v[1]
    u_path = flow.forward(Tensor(v_path))[0].data.copy() if flow else v_path.copy()
    u_path[0], u_path[-1] = u[0], u[1]
    return v_path, u_path


def interpolate_u(
    model: LatentHierarchy,
    x_a: np.ndarray,
    x_b: np.ndarray,
    steps: int,
    seed: int = 0,
    mode_decode: bool = False,
) -> np.ndarray:
    """Frames decoded from u codes between two images (everything below u is
    generated). Each frame uses a fresh generator seeded with ``seed``, so the
    endpoints equal posterior-mean Reconstruction-1 of the inputs."""
    _, u_path = interpolation_codes(model, x_a, x_b, steps)
    frames = [
        _run_chain(
            model,
            Tensor(u_path[i : i + 1]),
            np.random.default_rng(seed),
            mode_y=mode_decode,
            mode_x=mode_decode,
        )[0]
        for i in range(steps)
    ]
    return np.stack(frames)


def resample_z_keep_u(
    model: LatentHierarchy,
    x_star: np.ndarray,
    n: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    mode_decode: bool = False,
) -> np.ndarray:
    """Fix u at its posterior mean for ``x_star`` (one image) and redraw all
    z levels ``n`` times. Intermediate y levels are mode-decoded; the final
    image follows ``mode_decode``."""
    x_star = np.asarray(x_star, dtype=np.uint8)
    if x_star.ndim == 3:
        x_star = x_star[None]
    u = model.u_encoder(Tensor(_unit(model.levels(x_star)[0]))).mu.data
    u = Tensor(np.repeat(u[:1], n, axis=0))
    return _run_chain(model, u, rng, mode_y=True, mode_x=mode_decode, temperature=temperature)


def iwae_log_likelihood(
    model,
    x: np.ndarray,
    num_samples: int,
    rng: np.random.Generator,
    max_batch: int = 256,
) -> np.ndarray:
    """Per-image importance-weighted estimate of log p(x) in nats:
    log (1/S) sum_s w_s with log w_s a full single-sample bound."""
    if num_samples < 1:
        raise ContractError("num_samples must be >= 1")
    x = np.asarray(x, dtype=np.uint8)
    n = x.shape[0]
    per_chunk = max(1, min(num_samples, max_batch // max(n, 1)))
    log_w = []
    done = 0
    while done < num_samples:
        c = min(per_chunk, num_samples - done)
        tiled = np.concatenate([x] * c) if c > 1 else x
        total = elbo(model, tiled, rng, analytic_kl=False).total.data
        log_w.append(total.reshape(c, n))
        done += c
    log_w = np.concatenate(log_w, axis=0)
    m = log_w.max(axis=0)
    return m + np.log(np.exp(log_w - m).sum(axis=0)) - math.log(num_samples)


def bits_per_dim(nll_nats, dims: int):
    return np.asarray(nll_nats) / (dims * math.log(2.0))


def iwae_nll(
    model,
    x: np.ndarray,
    num_samples: int,
    rng: np.random.Generator | None = None,
    batch_size: int = 64,
) -> float:
    """Mean importance-weighted negative log-likelihood in bits per dimension."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.asarray(x, dtype=np.uint8)
    lls = [
        iwae_log_likelihood(model, x[i : i + batch_size], num_samples, rng)
        for i in range(0, x.shape[0], batch_size)
    ]
    return float(bits_per_dim(-np.concatenate(lls).mean(), model.data_dim))
