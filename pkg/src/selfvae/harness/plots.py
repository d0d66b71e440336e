"""Figures written next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams.update(
    {
        "figure.dpi": 100,
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
    }
)

_PNG_META = {"Software": None}


def training_curves(rows: list[dict], path) -> Path:
    """ELBO terms (left) and test bpd (right) per epoch."""
    epochs = [r["epoch"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
    for key in ("re_x", "re_y", "kl_z", "kl_u", "elbo"):
        ax1.plot(epochs, [r[key] for r in rows], marker="o", ms=3, label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("nats per image")
    ax1.legend(frameon=False, fontsize=7)
    ax2.plot(epochs, [r["test_bpd"] for r in rows], marker="o", ms=3, color="k")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("test bpd")
    fig.tight_layout()
    return _save(fig, path)


def ablation_bars(results: dict[str, list[float]], path) -> Path:
    """Per-seed test bpd for each prior, with the median marked."""
    fig, ax = plt.subplots(figsize=(4, 3))
    for i, (prior, values) in enumerate(results.items()):
        ax.scatter([i] * len(values), values, color="0.4", s=14, zorder=3)
        med = sorted(values)[len(values) // 2]
        ax.hlines(med, i - 0.25, i + 0.25, color="C3", lw=2)
    ax.set_xticks(range(len(results)), list(results))
    ax.set_xlim(-0.6, len(results) - 0.4)
    ax.set_ylabel("test bpd")
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path
