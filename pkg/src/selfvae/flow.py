"""RealNVP prior over latent codes, plus the fixed and mixture priors it is
compared against.

Every prior exposes ``log_prob(z) -> [N]`` for latents of shape
``(N, *latent_shape)`` and ``sample(rng, n) -> ndarray``.
"""

from __future__ import annotations

import numpy as np

from . import distributions as D
from . import tensor as T
from .errors import ConfigError, ShapeError
from .module import Linear, Module, parameter
from .tensor import Tensor


def checkerboard_mask(latent_shape: tuple[int, ...], parity: int) -> np.ndarray:
    """Flat binary mask; 1 marks the conditioning (unchanged) dimensions.

    Spatial latents (c, h, w) alternate over h + w; anything else alternates
    over the flat index.
    """
    if len(latent_shape) == 3 and latent_shape[1] * latent_shape[2] > 1:
        c, h, w = latent_shape
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        grid = np.broadcast_to((ii + jj) % 2, (c, h, w))
    else:
        grid = np.arange(int(np.prod(latent_shape))) % 2
    return (grid.reshape(-1) == parity).astype(np.float64)


class MLP(Module):
    """Two ELU hidden layers; the output layer starts at zero."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: np.random.Generator):
        self.layers = [
            Linear(n_in, hidden, rng),
            Linear(hidden, hidden, rng),
            Linear(hidden, n_out, rng, zero=True),
        ]

    def __call__(self, x: Tensor) -> Tensor:
        h = T.elu(self.layers[0](x))
        h = T.elu(self.layers[1](h))
        return self.layers[2](h)


class CouplingLayer(Module):
    def __init__(self, dim: int, mask: np.ndarray, hidden: int, rng: np.random.Generator):
        if mask.shape != (dim,):
            raise ShapeError("mask must cover every latent dimension")
        self.mask = mask
        self.free = 1.0 - mask
        self.scale_net = MLP(dim, hidden, dim, rng)
        self.translate_net = MLP(dim, hidden, dim, rng)
        self.scale_bound = parameter(np.ones(dim))

    def _scale_shift(self, fixed: Tensor) -> tuple[Tensor, Tensor]:
        s = self.scale_bound * T.tanh(self.scale_net(fixed)) * self.free
        t = self.translate_net(fixed) * self.free
        return s, t

    def forward(self, v: Tensor) -> tuple[Tensor, Tensor]:
        s, t = self._scale_shift(v * self.mask)
        return v * T.exp(s) + t, s.sum(axis=-1)

    def inverse(self, z: Tensor) -> tuple[Tensor, Tensor]:
        s, t = self._scale_shift(z * self.mask)
        return (z - t) * T.exp(-s), -s.sum(axis=-1)


class FlowStack(Module):
    """f = f_L o ... o f_1 mapping base samples v to latents z."""

    def __init__(
        self,
        latent_shape: tuple[int, ...],
        rng: np.random.Generator,
        num_layers: int = 6,
        hidden: int = 256,
    ):
        if num_layers < 1:
            raise ConfigError("flow needs at least one coupling layer")
        self.latent_shape = tuple(latent_shape)
        self.dim = int(np.prod(latent_shape))
        self.layers = [
            CouplingLayer(self.dim, checkerboard_mask(self.latent_shape, i % 2), hidden, rng)
            for i in range(num_layers)
        ]

    def _flatten(self, x) -> Tensor:
        x = T.as_tensor(x)
        if tuple(x.shape[1:]) != self.latent_shape:
            raise ShapeError(f"latent {x.shape[1:]} vs flow {self.latent_shape}")
        return x.reshape(x.shape[0], self.dim)

    def forward(self, v) -> tuple[Tensor, Tensor]:
        h = self._flatten(v)
        log_det = Tensor(np.zeros(h.shape[0]))
        for layer in self.layers:
            h, ld = layer.forward(h)
            log_det = log_det + ld
        return h.reshape(h.shape[0], *self.latent_shape), log_det

    def inverse(self, z) -> tuple[Tensor, Tensor]:
        h = self._flatten(z)
        log_det = Tensor(np.zeros(h.shape[0]))
        for layer in reversed(self.layers):
            h, ld = layer.inverse(h)
            log_det = log_det + ld
        return h.reshape(h.shape[0], *self.latent_shape), log_det

    def log_prob(self, z) -> Tensor:
        v, log_det = self.inverse(z)
        return D.standard_normal_log_prob(v) + log_det

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.standard_normal((n, *self.latent_shape))
        return self.forward(Tensor(v))[0].data


class StandardNormalPrior(Module):
    def __init__(self, latent_shape: tuple[int, ...]):
        self.latent_shape = tuple(latent_shape)

    def log_prob(self, z) -> Tensor:
        z = T.as_tensor(z)
        if tuple(z.shape[1:]) != self.latent_shape:
            raise ShapeError(f"latent {z.shape[1:]} vs prior {self.latent_shape}")
        return D.standard_normal_log_prob(z)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, *self.latent_shape))


class MixturePrior(Module):
    """Learnable mixture of diagonal Gaussians over the flattened latent."""

    def __init__(self, latent_shape: tuple[int, ...], rng: np.random.Generator, components: int = 10):
        self.latent_shape = tuple(latent_shape)
        dim = int(np.prod(latent_shape))
        self.means = parameter(rng.normal(0.0, 1.0, (components, dim)))
        self.log_sigmas = parameter(np.zeros((components, dim)))
        self.logit_weights = parameter(np.zeros(components))

    @property
    def params(self) -> D.MoGPriorParams:
        return D.MoGPriorParams(self.means, self.log_sigmas, self.logit_weights)

    def log_prob(self, z) -> Tensor:
        return D.mog_log_prob(self.params, z)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return D.mog_sample(self.params, rng, n).reshape(n, *self.latent_shape)


PRIOR_KINDS = ("fixed", "mog", "realnvp")


def make_prior(kind: str, latent_shape, rng: np.random.Generator, **flow_kwargs) -> Module:
    if kind == "fixed":
        return StandardNormalPrior(latent_shape)
    if kind == "mog":
        return MixturePrior(latent_shape, rng)
    if kind == "realnvp":
        return FlowStack(latent_shape, rng, **flow_kwargs)
    raise ConfigError(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")


def flow_forward(stack: FlowStack, v):
    return stack.forward(v)


def flow_inverse(stack: FlowStack, z):
    return stack.inverse(z)


def prior_log_prob(stack: FlowStack, z) -> Tensor:
    return stack.log_prob(z)


def prior_sample(stack: FlowStack, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    return stack.sample(rng, n)

