"""Convolutional encoder/decoder blocks.

Every convolution is weight normalized (w = g * v / ||v|| per output
channel) and can be initialized from a data batch: inside
:func:`data_dependent_init`, each layer rescales g and b so its
pre-activation has zero mean and unit variance per channel on the batch it
sees.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distributions import DiagGaussianParams, MixtureLogisticParams, pixels_to_unit
from .errors import ConfigError, ShapeError
from .module import Module, parameter
from .tensor import Tensor

_init_state = threading.local()


@contextlib.contextmanager
def data_dependent_init():
    """Within this context, weight-normalized layers initialize themselves."""
    _init_state.active = True
    try:
        yield
    finally:
        _init_state.active = False


def _initializing() -> bool:
    return getattr(_init_state, "active", False)


@dataclass
class NetConfig:
    growth_rate: int = 8
    blocks_per_stage: int = 2
    stages: int = 2
    latent_shape: tuple[int, int, int] = (8, 4, 4)  # (channels, height, width)
    width: int = 16
    reduction: int = 4
    mixture_components: int = 10

    def __post_init__(self):
        self.latent_shape = tuple(int(s) for s in self.latent_shape)
        if len(self.latent_shape) != 3 or min(self.latent_shape) < 1:
            raise ConfigError(f"latent_shape must be (c, h, w), got {self.latent_shape}")
        if self.growth_rate < 0 or self.blocks_per_stage < 0 or self.stages < 0:
            raise ConfigError("growth_rate, blocks_per_stage and stages must be >= 0")
        if self.width < 1 or self.reduction < 1 or self.mixture_components < 1:
            raise ConfigError("width, reduction and mixture_components must be >= 1")

    @property
    def latent_size(self) -> int:
        return int(np.prod(self.latent_shape))


def _set_from_stats(layer, t: np.ndarray, axes: tuple[int, ...]) -> None:
    m = t.mean(axis=axes)
    s = t.std(axis=axes)
    degenerate = s < 1e-8
    scale = np.where(degenerate, 1.0, layer.init_scale / np.where(degenerate, 1.0, s))
    layer.g.data = scale
    layer.b.data = -m * scale


class WNConv2d(Module):
    def __init__(
        self,
        n_in: int,
        n_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int | None = None,
        init_scale: float = 1.0,
    ):
        self.stride = stride
        self.padding = (kernel - 1) // 2 if padding is None else padding
        self.init_scale = init_scale
        v = rng.normal(0.0, 0.05, (n_out, n_in, kernel, kernel))
        self.v = parameter(v)
        self.g = parameter(np.sqrt((v * v).sum(axis=(1, 2, 3))))
        self.b = parameter(np.zeros(n_out))

    def weight(self) -> Tensor:
        norm = (self.v * self.v).sum(axis=(1, 2, 3), keepdims=True) ** 0.5
        return self.v * (self.g.reshape(-1, 1, 1, 1) / norm)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.v.shape[1]:
            raise ShapeError(f"expected {self.v.shape[1]} channels, got {x.shape[1]}")
        if _initializing():
            d = self.v.data / np.sqrt((self.v.data**2).sum(axis=(1, 2, 3), keepdims=True))
            t = T._conv(x.data, d, self.stride, self.padding)
            _set_from_stats(self, t, (0, 2, 3))
        out = T.conv2d(x, self.weight(), self.stride, self.padding)
        return out + self.b.reshape(1, -1, 1, 1)


class WNConvTranspose2d(Module):
    """Transposed conv doubling resolution (kernel 4, stride 2, pad 1)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init_scale: float = 1.0):
        self.init_scale = init_scale
        v = rng.normal(0.0, 0.05, (n_in, n_out, 4, 4))
        self.v = parameter(v)
        self.g = parameter(np.sqrt((v * v).sum(axis=(0, 2, 3))))
        self.b = parameter(np.zeros(n_out))

    def weight(self) -> Tensor:
        norm = (self.v * self.v).sum(axis=(0, 2, 3), keepdims=True) ** 0.5
        return self.v * (self.g.reshape(1, -1, 1, 1) / norm)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.v.shape[0]:
            raise ShapeError(f"expected {self.v.shape[0]} channels, got {x.shape[1]}")
        size = (2 * x.shape[2], 2 * x.shape[3])
        if _initializing():
            d = self.v.data / np.sqrt((self.v.data**2).sum(axis=(0, 2, 3), keepdims=True))
            t = T._conv_input_grad(x.data, d, (x.shape[0], d.shape[1], *size), 2, 1)
            _set_from_stats(self, t, (0, 2, 3))
        out = T.conv2d_transpose(x, self.weight(), 2, 1, size)
        return out + self.b.reshape(1, -1, 1, 1)


class DenseBlock(Module):
    """Each layer sees the concatenation of the block input and all earlier
    layer outputs; the block returns that full concatenation."""

    def __init__(self, n_in: int, growth_rate: int, num_layers: int, rng: np.random.Generator):
        self.n_in = n_in
        self.layers = []
        if growth_rate > 0:
            self.layers = [
                WNConv2d(n_in + i * growth_rate, growth_rate, 3, rng) for i in range(num_layers)
            ]
        self.n_out = n_in + len(self.layers) * growth_rate

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.n_in:
            raise ShapeError(f"dense block expects {self.n_in} channels, got {x.shape[1]}")
        feats = x
        for conv in self.layers:
            feats = T.concat([feats, conv(T.elu(feats))], axis=1)
        return feats


class ChannelAttention(Module):
    """Squeeze (global average pool) and excite with a sigmoid gate per channel."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        hidden = max(1, channels // reduction)
        self.squeeze = WNConv2d(channels, hidden, 1, rng)
        self.excite = WNConv2d(hidden, channels, 1, rng)

    def gate(self, x: Tensor) -> Tensor:
        s = T.global_average_pool(x)
        return T.sigmoid(self.excite(T.elu(self.squeeze(s))))

    def __call__(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class DenseStage(Module):
    """Dense block, channel attention, then a 1x1 transition to ``n_out``."""

    def __init__(self, n_in: int, n_out: int, cfg: NetConfig, rng: np.random.Generator):
        self.block = DenseBlock(n_in, cfg.growth_rate, cfg.blocks_per_stage, rng)
        self.attention = ChannelAttention(self.block.n_out, cfg.reduction, rng)
        self.transition = WNConv2d(self.block.n_out, n_out, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.transition(T.elu(self.attention(self.block(x))))


def _num_halvings(big: int, small: int) -> int:
    ratio = big / small
    n = int(round(math.log2(ratio))) if ratio >= 1 else -1
    if n < 0 or 2**n * small != big:
        raise ConfigError(f"resolution {big} is not a power-of-two multiple of {small}")
    return n


def upsample_nearest(img: np.ndarray, size: int) -> np.ndarray:
    """Repeat pixels of an NCHW array up to ``size`` (integer factor)."""
    f = size // img.shape[2]
    if f * img.shape[2] != size:
        raise ConfigError(f"cannot upsample {img.shape[2]} to {size}")
    return img.repeat(f, axis=2).repeat(f, axis=3) if f > 1 else img


def images_to_tensor(x: np.ndarray) -> Tensor:
    """uint8 (N, H, W, C) -> float (N, C, H, W) in [-1, 1]."""
    return Tensor(pixels_to_unit(np.asarray(x).transpose(0, 3, 1, 2)))


class Encoder(Module):
    """Image (or latent) -> diagonal Gaussian over a latent of ``latent_shape``.

    Downsamples with stride-2 convolutions, one dense stage per resolution.
    """

    def __init__(
        self,
        in_shape: tuple[int, int, int],
        latent_shape: tuple[int, int, int],
        cfg: NetConfig,
        rng: np.random.Generator,
    ):
        c_in, h_in, w_in = in_shape
        c, h, w = latent_shape
        self.in_shape = tuple(in_shape)
        self.latent_shape = tuple(latent_shape)
        n_down = _num_halvings(h_in, h)
        if _num_halvings(w_in, w) != n_down:
            raise ConfigError("encoder needs equal height/width scaling")
        width = cfg.width
        self.stem = WNConv2d(c_in, width, 3, rng)
        self.stages = [DenseStage(width, width, cfg, rng) for _ in range(n_down + 1)]
        self.downs = [WNConv2d(width, width, 4, rng, stride=2, padding=1) for _ in range(n_down)]
        self.head = WNConv2d(width, 2 * c, 3, rng, init_scale=0.1)

    def __call__(self, x: Tensor) -> DiagGaussianParams:
        if tuple(x.shape[1:]) != self.in_shape:
            raise ShapeError(f"encoder expects {self.in_shape}, got {x.shape[1:]}")
        h = self.stem(x)
        for i, down in enumerate(self.downs):
            h = down(T.elu(self.stages[i](h)))
        h = self.head(T.elu(self.stages[-1](h)))
        c = self.latent_shape[0]
        return DiagGaussianParams(h[:, :c], h[:, c:])


class ImageEmbed(Module):
    """Bring a conditioning image to a target resolution with convolutions."""

    def __init__(self, in_shape, size: int, width: int, rng: np.random.Generator):
        c_in, h_in, _ = in_shape
        self.size = size
        self.upsampled = max(h_in, size)
        self.stem = WNConv2d(c_in, width, 3, rng)
        n_down = _num_halvings(self.upsampled, size)
        self.downs = [WNConv2d(width, width, 4, rng, stride=2, padding=1) for _ in range(n_down)]

    def __call__(self, img: np.ndarray) -> Tensor:
        h = self.stem(Tensor(upsample_nearest(img, self.upsampled)))
        for down in self.downs:
            h = down(T.elu(h))
        return h


class Decoder(Module):
    """Latent (plus optional conditioning) -> distribution parameters.

    ``cond_image_shape`` adds an image input (C, H, W) embedded to the latent
    resolution and, for image outputs, re-injected at full resolution.
    ``cond_latent`` adds a second latent of the same shape, concatenated with
    the first. ``head`` is ``"mixture"`` (8-bit image) or ``"gaussian"``.
    """

    def __init__(
        self,
        latent_shape: tuple[int, int, int],
        out_shape: tuple[int, int, int],
        cfg: NetConfig,
        rng: np.random.Generator,
        cond_image_shape: tuple[int, int, int] | None = None,
        cond_latent: bool = False,
        head: str = "mixture",
    ):
        if head not in ("mixture", "gaussian"):
            raise ConfigError(f"unknown head {head!r}")
        c, h, w = latent_shape
        c_out, h_out, w_out = out_shape
        self.latent_shape = tuple(latent_shape)
        self.out_shape = tuple(out_shape)
        self.cond_image_shape = tuple(cond_image_shape) if cond_image_shape else None
        self.cond_latent = cond_latent
        self.head_kind = head
        self.components = cfg.mixture_components
        n_up = _num_halvings(h_out, h)
        if head == "gaussian" and n_up:
            raise ConfigError("gaussian heads stay at latent resolution")
        width = cfg.width
        n_in = c * (2 if cond_latent else 1)
        self.embed = None
        if self.cond_image_shape is not None:
            self.embed = ImageEmbed(self.cond_image_shape, h, width, rng)
            n_in += width
        # the conditioning image is re-injected before the full-resolution stage
        self.inject = self.cond_image_shape is not None and head == "mixture" and n_up > 0
        self.stem = WNConv2d(n_in, width, 3, rng)
        self.ups = [WNConvTranspose2d(width, width, rng) for _ in range(n_up)]
        self.stages = [DenseStage(width, width, cfg, rng) for _ in range(n_up)]
        last_in = width + (self.cond_image_shape[0] if self.inject else 0)
        self.stages.append(DenseStage(last_in, width, cfg, rng))
        n_head = 3 * c_out * self.components if head == "mixture" else 2 * c_out
        self.head = WNConv2d(width, n_head, 1, rng, init_scale=0.1)

    def __call__(self, z: Tensor, cond_image: np.ndarray | None = None, cond_latent: Tensor | None = None):
        if tuple(z.shape[1:]) != self.latent_shape:
            raise ShapeError(f"decoder expects latent {self.latent_shape}, got {z.shape[1:]}")
        if (cond_image is None) != (self.cond_image_shape is None):
            raise ShapeError("conditioning image presence does not match decoder config")
        if (cond_latent is None) == self.cond_latent:
            raise ShapeError("conditioning latent presence does not match decoder config")
        parts = [z]
        if cond_latent is not None:
            parts.append(cond_latent)
        if cond_image is not None:
            cond_image = np.asarray(cond_image, dtype=np.float64)
            if tuple(cond_image.shape[1:]) != self.cond_image_shape:
                raise ShapeError(f"conditioning image {cond_image.shape[1:]} vs {self.cond_image_shape}")
            parts.append(self.embed(cond_image))
        h = self.stem(T.concat(parts, axis=1) if len(parts) > 1 else parts[0])
        for up, stage in zip(self.ups, self.stages):
            h = up(T.elu(stage(h)))
        if self.inject:
            img = Tensor(upsample_nearest(cond_image, self.out_shape[1]))
            h = T.concat([h, img], axis=1)
        h = self.stages[-1](h)
        out = self.head(T.elu(h))
        if self.head_kind == "gaussian":
            c = self.out_shape[0]
            return DiagGaussianParams(out[:, :c], out[:, c:])
        n = out.shape[0]
        c_out, h_out, w_out = self.out_shape
        k = self.components
        # (N, 3*C*K, H, W) -> (N, C, H, W, 3, K)
        out = out.reshape(n, c_out, 3, k, h_out, w_out).transpose(0, 1, 4, 5, 2, 3)
        return MixtureLogisticParams(out[..., 0, :], out[..., 1, :], out[..., 2, :])


def build_encoder(cfg: NetConfig, image_shape, rng: np.random.Generator) -> Encoder:
    """q(z|x) for images of shape (C, H, W) at ``cfg.stages`` halvings."""
    c, h, w = image_shape
    if h // 2**cfg.stages != cfg.latent_shape[1] or h % 2**cfg.stages:
        raise ConfigError(
            f"{h}px input with {cfg.stages} stages does not reach latent {cfg.latent_shape}"
        )
    return Encoder(image_shape, cfg.latent_shape, cfg, rng)


def build_decoder(cfg: NetConfig, image_shape, rng: np.random.Generator, **kwargs) -> Decoder:
    return Decoder(cfg.latent_shape, image_shape, cfg, rng, **kwargs)


def weightnorm_init(forward, *args, **kwargs):
    """Run ``forward(*args)`` once with data-dependent initialization on."""
    with data_dependent_init():
        return forward(*args, **kwargs)
