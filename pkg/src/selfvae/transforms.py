"""Deterministic discrete image transformations producing the
self-supervised variables y = d(x).

Images are uint8 arrays laid out (H, W, C); a leading batch axis is
accepted everywhere. All rounding is half-up.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

KINDS = ("downscale", "grayscale", "sketch")


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    factor: int = 2
    blur_sigma: float = 3.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown transform {self.kind!r}")
        if self.kind == "downscale" and self.factor < 2:
            raise DomainError("downscale factor must be >= 2")
        if self.kind == "sketch" and self.blur_sigma <= 0:
            raise DomainError("blur_sigma must be positive")

    def output_shape(self, shape: tuple[int, int, int]) -> tuple[int, int, int]:
        h, w, c = shape
        if self.kind == "downscale":
            return (h // self.factor, w // self.factor, c)
        return (h, w, 1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "downscale":
            return downscale(x, self.factor)
        if self.kind == "grayscale":
            return grayscale(x)
        return sketch(x, self.blur_sigma)


def _as_image(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim < 3:
        raise DomainError(f"expected (H, W, C) image, got shape {x.shape}")
    if x.dtype != np.uint8:
        if x.size and (x.min() < 0 or x.max() > 255 or not np.all(np.floor(x) == x)):
            raise DomainError("pixels must be integers in {0..255}")
        x = x.astype(np.uint8)
    return x


def downscale(x, factor: int) -> np.ndarray:
    """Block-average over factor x factor windows per channel."""
    x = _as_image(x)
    *lead, h, w, c = x.shape
    if h % factor or w % factor:
        raise DomainError(f"{h}x{w} image is not divisible by factor {factor}")
    blocks = x.astype(np.int64).reshape(*lead, h // factor, factor, w // factor, factor, c)
    total = blocks.sum(axis=(-4, -2))
    area = factor * factor
    return ((2 * total + area) // (2 * area)).astype(np.uint8)


def grayscale(x) -> np.ndarray:
    """ITU-R 601 luma; single-channel input passes through."""
    x = _as_image(x)
    if x.shape[-1] == 1:
        return x.copy()
    if x.shape[-1] != 3:
        raise DomainError(f"grayscale needs 1 or 3 channels, got {x.shape[-1]}")
    rgb = x.astype(np.int64)
    luma = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
    return ((luma + 500) // 1000).astype(np.uint8)[..., None]


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable blur over the two axes before the channel axis, reflected
    borders, kernel truncated at 3 sigma. Returns float64."""
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    out = np.asarray(img, dtype=np.float64)
    for axis in (-3, -2):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, weight in enumerate(k):
            acc += weight * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def sketch(x, blur_sigma: float = 3.0) -> np.ndarray:
    """Pencil sketch: dodge-blend the grayscale image with its blurred inverse.

    The blurred inverse is rounded to 8 bits before blending so constant
    images map exactly to white.
    """
    g = grayscale(x).astype(np.float64)
    inv = 255.0 - g
    b = np.floor(gaussian_blur(inv, blur_sigma) + 0.5)
    denom = 255.0 - b
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, g * 255.0 / np.where(denom > 0, denom, 1.0), 255.0)
    return np.clip(np.floor(ratio + 0.5), 0, 255).astype(np.uint8)


def apply_chain(x, specs: list[TransformSpec]) -> list[np.ndarray]:
    """Apply transforms in sequence; returns every stage, coarsest last."""
    out = []
    current = _as_image(x)
    for spec in specs:
        current = spec(current)
        out.append(current)
    return out


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def write_png(path, img) -> None:
    from PIL import Image

    img = _as_image(img)
    if img.ndim != 3 or img.shape[-1] not in (1, 3):
        raise DomainError(f"can only write gray or RGB images, got {img.shape}")
    data = img[..., 0] if img.shape[-1] == 1 else img
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(data)).save(path)


def image_grid(images, cols: int | None = None, pad: int = 1) -> np.ndarray:
    """Tile a batch (N, H, W, C) into one image with ``pad`` pixel gutters."""
    images = _as_image(images)
    n, h, w, c = images.shape
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    grid = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, c), 255, np.uint8)
    for i, img in enumerate(images):
        r, q = divmod(i, cols)
        y0, x0 = pad + r * (h + pad), pad + q * (w + pad)
        grid[y0 : y0 + h, x0 : x0 + w] = img
    return grid
