"""Datasets: PNG folders, a synthetic sprite generator, splits and augmentation."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import LoadError
from ..transforms import read_png, write_png

# 148x148 window whose top-left corner sits 40 rows down and 15 columns in.
CELEBA_BOX = (40, 15, 148)


def celeba_crop(img: np.ndarray) -> np.ndarray:
    top, left, size = CELEBA_BOX
    h, w = img.shape[:2]
    if h < top + size or w < left + size:
        raise ValueError(f"{h}x{w} image is too small for the 148x148 crop")
    return img[top : top + size, left : left + size]


def resize(img: np.ndarray, size: int) -> np.ndarray:
    """Area-style resize to size x size via Pillow."""
    from PIL import Image

    if img.shape[0] == size and img.shape[1] == size:
        return img
    data = img[..., 0] if img.shape[-1] == 1 else img
    out = np.asarray(Image.fromarray(data).resize((size, size), Image.Resampling.BOX), dtype=np.uint8)
    return out[..., None] if out.ndim == 2 else out


def load_folder(directory, crop: str = "none", size: int | None = None) -> np.ndarray:
    """Read every ``*.png`` under ``directory`` (sorted by name)."""
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise LoadError([f"{directory}: no PNG files"])
    images, problems, shape = [], [], None
    for p in paths:
        try:
            img = read_png(p)
            if crop == "celeba":
                img = celeba_crop(img)
            if size:
                img = resize(img, size)
        except Exception as exc:  # noqa: BLE001  collected and reported together
            problems.append(f"{p.name}: {exc}")
            continue
        if shape is None:
            shape = img.shape
        if img.shape != shape:
            problems.append(f"{p.name}: shape {img.shape} differs from {shape}")
            continue
        images.append(img)
    if problems:
        raise LoadError(problems)
    return np.stack(images)


def split(images: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random hold-out of round(fraction * n) images."""
    n = len(images)
    n_test = int(round(fraction * n))
    order = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])
    return images[train_idx], images[test_idx]


def ingest_dataset(
    directory,
    split_fraction: float = 0.15,
    seed: int = 0,
    crop: str = "none",
    size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    return split(load_folder(directory, crop, size), split_fraction, seed)


def make_sprites(n: int, size: int = 16, seed: int = 0) -> np.ndarray:
    """Toy RGB images: a flat background with one or two discs or boxes."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    out = np.empty((n, size, size, 3), dtype=np.uint8)
    for i in range(n):
        img = np.empty((size, size, 3))
        img[:] = rng.integers(0, 96, size=3)
        for _ in range(rng.integers(1, 3)):
            color = rng.integers(96, 256, size=3)
            cy, cx = rng.uniform(0.2, 0.8, size=2) * size
            r = rng.uniform(0.12, 0.3) * size
            if rng.random() < 0.5:
                mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            else:
                mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
            img[mask] = color
        out[i] = img
    return out


def write_folder(directory, images: np.ndarray) -> None:
    for i, img in enumerate(images):
        write_png(Path(directory) / f"{i:06d}.png", img)


def augment(
    batch: np.ndarray,
    rng: np.random.Generator,
    flip_prob: float = 0.5,
    max_rotation: float = 5.0,
    max_translation: float = 0.05,
) -> np.ndarray:
    """Random horizontal flip, then a small rotation and shift about the image
    centre with nearest-neighbour sampling and edge replication. Every image
    consumes four uniforms so the stream does not depend on outcomes."""
    batch = np.asarray(batch, dtype=np.uint8)
    n, h, w, _ = batch.shape
    out = np.empty_like(batch)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    for i in range(n):
        flip, a, ty, tx = rng.random(4)
        img = batch[i, :, ::-1] if flip < flip_prob else batch[i]
        angle = np.deg2rad((2 * a - 1) * max_rotation)
        dy = (2 * ty - 1) * max_translation * h
        dx = (2 * tx - 1) * max_translation * w
        if angle == 0 and dy == 0 and dx == 0:
            out[i] = img
            continue
        c, s = np.cos(angle), np.sin(angle)
        py, px = rows - cy - dy, cols - cx - dx
        src_y = c * py + s * px + cy
        src_x = -s * py + c * px + cx
        iy = np.clip(np.floor(src_y + 0.5), 0, h - 1).astype(np.intp)
        ix = np.clip(np.floor(src_x + 0.5), 0, w - 1).astype(np.intp)
        out[i] = img[iy, ix]
    return out
