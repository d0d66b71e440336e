"""Model containers: a plain VAE and the K-level self-supervised hierarchy."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .flow import make_prior
from .module import Module
from .networks import Decoder, Encoder, NetConfig, build_encoder
from .transforms import TransformSpec


def _chw(shape_hwc) -> tuple[int, int, int]:
    h, w, c = shape_hwc
    return (c, h, w)


class VAE(Module):
    """q(z|x), p(x|z) and a prior p(z)."""

    def __init__(
        self,
        image_shape: tuple[int, int, int],
        cfg: NetConfig,
        rng: np.random.Generator,
        prior: str = "realnvp",
        flow_layers: int = 6,
        flow_hidden: int = 256,
    ):
        self.image_shape = tuple(image_shape)
        self.cfg = cfg
        self.prior_kind = prior
        self.encoder = build_encoder(cfg, _chw(image_shape), rng)
        self.decoder = Decoder(cfg.latent_shape, _chw(image_shape), cfg, rng)
        kwargs = {"num_layers": flow_layers, "hidden": flow_hidden} if prior == "realnvp" else {}
        self.prior = make_prior(prior, cfg.latent_shape, rng, **kwargs)

    @classmethod
    def from_parts(cls, encoder, decoder, prior, image_shape, cfg: NetConfig) -> "VAE":
        """Wrap existing networks without copying them."""
        model = cls.__new__(cls)
        model.image_shape = tuple(image_shape)
        model.cfg = cfg
        model.prior_kind = type(prior).__name__
        model.encoder, model.decoder, model.prior = encoder, decoder, prior
        return model

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.image_shape))


class LatentHierarchy(Module):
    """selfVAE with K deterministic transforms.

    One-based level names: ``y_shapes[0]`` is y_1 (coarsest), ``y_shapes[K]``
    is x. ``transforms`` are listed in application order starting from x, so
    transforms[0] produces y_K.

    Networks per level k = 1..K (list index k - 1):
      z_encoders  q(z_k | y_{k+1})
      z_priors    p(z_k | y_k, z_{k-1}), with z_0 = u
      y_decoders  p(y_{k+1} | y_k, z_k)
    plus u_encoder q(u | y_1), u_decoder p(y_1 | u) and the prior p(u).
    """

    def __init__(
        self,
        image_shape: tuple[int, int, int],
        transforms: list[TransformSpec],
        cfg: NetConfig,
        rng: np.random.Generator,
        prior: str = "realnvp",
        flow_layers: int = 6,
        flow_hidden: int = 256,
    ):
        if not transforms:
            raise ConfigError("a hierarchy needs at least one transform")
        self.image_shape = tuple(image_shape)
        self.transforms = list(transforms)
        self.cfg = cfg
        self.prior_kind = prior
        chain = [self.image_shape]
        for spec in self.transforms:
            h, w, c = chain[-1]
            if spec.kind == "downscale" and (h % spec.factor or w % spec.factor):
                raise ConfigError(f"{h}x{w} not divisible by downscale factor {spec.factor}")
            chain.append(spec.output_shape(chain[-1]))
        self.y_shapes = list(reversed(chain))
        lat = cfg.latent_shape
        ys = [_chw(s) for s in self.y_shapes]
        self.u_encoder = Encoder(ys[0], lat, cfg, rng)
        self.u_decoder = Decoder(lat, ys[0], cfg, rng)
        self.z_encoders = []
        self.z_priors = []
        self.y_decoders = []
        for k in range(1, self.K + 1):
            self.z_encoders.append(Encoder(ys[k], lat, cfg, rng))
            self.z_priors.append(
                Decoder(lat, lat, cfg, rng, cond_image_shape=ys[k - 1], head="gaussian")
            )
            self.y_decoders.append(Decoder(lat, ys[k], cfg, rng, cond_image_shape=ys[k - 1]))
        kwargs = {"num_layers": flow_layers, "hidden": flow_hidden} if prior == "realnvp" else {}
        self.prior = make_prior(prior, lat, rng, **kwargs)

    @property
    def K(self) -> int:
        return len(self.transforms)

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.image_shape))

    def levels(self, x: np.ndarray) -> list[np.ndarray]:
        """[y_1, ..., y_K, x] for a uint8 batch (N, H, W, C)."""
        chain = [np.asarray(x, dtype=np.uint8)]
        for spec in self.transforms:
            chain.append(spec(chain[-1]))
        return list(reversed(chain))


MODEL_KINDS = ("vae", "selfvae", "selfvae-3lvl", "selfvae-sketch")


def build_model(
    kind: str,
    image_shape,
    cfg: NetConfig,
    rng: np.random.Generator,
    prior: str = "realnvp",
    transforms: list[TransformSpec] | None = None,
    **flow_kwargs,
):
    """``selfvae`` is one factor-2 downscale, ``selfvae-3lvl`` two of them;
    an explicit ``transforms`` list overrides either."""
    if kind == "vae":
        return VAE(image_shape, cfg, rng, prior=prior, **flow_kwargs)
    if transforms is None:
        defaults = {
            "selfvae": [TransformSpec("downscale", 2)],
            "selfvae-3lvl": [TransformSpec("downscale", 2), TransformSpec("downscale", 2)],
            "selfvae-sketch": [TransformSpec("sketch")],
        }
        if kind not in defaults:
            raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
        transforms = defaults[kind]
    return LatentHierarchy(image_shape, transforms, cfg, rng, prior=prior, **flow_kwargs)
