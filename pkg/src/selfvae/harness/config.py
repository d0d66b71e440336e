"""Run configuration, stored as INI-style ``key = value`` text."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..flow import PRIOR_KINDS
from ..models import MODEL_KINDS
from ..networks import NetConfig
from ..transforms import TransformSpec


def parse_transforms(text: str) -> list[TransformSpec]:
    """``downscale:2, sketch:3.0, grayscale`` -> specs; empty means model default."""
    specs = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        kind, _, arg = item.partition(":")
        kind = kind.strip()
        try:
            if kind == "downscale":
                specs.append(TransformSpec(kind, factor=int(arg or 2)))
            elif kind == "sketch":
                specs.append(TransformSpec(kind, blur_sigma=float(arg or 3.0)))
            else:
                specs.append(TransformSpec(kind))
        except ValueError as exc:
            raise ConfigError(f"bad transform {item!r}: {exc}") from exc
    return specs


def format_transforms(specs) -> str:
    parts = []
    for s in specs:
        if s.kind == "downscale":
            parts.append(f"downscale:{s.factor}")
        elif s.kind == "sketch":
            parts.append(f"sketch:{s.blur_sigma!r}")
        else:
            parts.append(s.kind)
    return ", ".join(parts)


@dataclass
class RunConfig:
    model: str = "selfvae"
    prior: str = "realnvp"
    transforms: str = ""
    flow_layers: int = 6
    flow_hidden: int = 256
    net: NetConfig = field(default_factory=NetConfig)

    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0

    data_dir: str = ""
    synthetic: int = 1000
    image_size: int = 16
    channels: int = 3
    split_fraction: float = 0.15
    crop: str = "none"
    augment: bool = False

    iw_samples: int = 1
    eval_limit: int = 256
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.prior not in PRIOR_KINDS:
            raise ConfigError(f"prior must be one of {PRIOR_KINDS}, got {self.prior!r}")
        if self.crop not in ("none", "celeba"):
            raise ConfigError(f"crop must be none or celeba, got {self.crop!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.batch_size < 1 or self.epochs < 0 or self.iw_samples < 1:
            raise ConfigError("batch_size and iw_samples must be positive, epochs non-negative")
        parse_transforms(self.transforms)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, self.channels)

    def transform_specs(self) -> list[TransformSpec] | None:
        return parse_transforms(self.transforms) or None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        sections = {"model": {}, "net": {}, "optim": {}, "data": {}, "eval": {}}
        for key, value in _flat_items(self):
            sections[_SECTION[key]][key] = _fmt(value)
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_dict(sections)
        lines = []
        for name in sections:
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in parser[name].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        kwargs, net = {}, {}
        for section in parser.sections():
            for key, raw in parser[section].items():
                if key not in _SECTION:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                target = net if _SECTION[key] == "net" else kwargs
                target[key] = _parse(key, raw)
        if net:
            kwargs["net"] = NetConfig(**net)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


_NET_FIELDS = {f.name: f for f in dataclasses.fields(NetConfig)}
_RUN_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "net"}
_SECTION = {
    **{k: "model" for k in ("model", "prior", "transforms", "flow_layers", "flow_hidden", "seed")},
    **{k: "net" for k in _NET_FIELDS},
    **{k: "optim" for k in ("lr", "beta1", "beta2", "batch_size", "epochs")},
    **{
        k: "data"
        for k in ("data_dir", "synthetic", "image_size", "channels", "split_fraction", "crop", "augment")
    },
    **{k: "eval" for k in ("iw_samples", "eval_limit", "checkpoint_every")},
}


def _flat_items(cfg: RunConfig):
    for name in _RUN_FIELDS:
        yield name, getattr(cfg, name)
    for name in _NET_FIELDS:
        yield name, getattr(cfg.net, name)


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return "x".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, raw: str):
    raw = raw.strip()
    default = _NET_FIELDS[key].default if key in _NET_FIELDS else _RUN_FIELDS[key].default
    try:
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.lower().split("x"))
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw
