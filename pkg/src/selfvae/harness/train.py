"""Training loop and the prior-ablation driver.

Randomness is split into independent streams derived from the run seed:
model initialization, data order and augmentation, objective noise, and
evaluation. Two priors trained with the same seed therefore share the data
split, the encoder/decoder initialization and the batch order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import tensor as T
from ..errors import ContractError, DivergenceError
from ..models import build_model
from ..networks import weightnorm_init
from ..objectives import elbo, loss_for_optimizer
from ..pipelines import iwae_nll
from . import checkpoint as ckpt_io
from . import plots
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import augment, ingest_dataset, make_sprites, split
from .optim import AdamaxState, adamax_step

METRIC_FIELDS = ("epoch", "re_x", "re_y", "kl_z", "kl_u", "elbo", "test_bpd")
CHECKPOINT_NAME = "checkpoint.ssvae"
METRICS_NAME = "metrics.csv"

STREAM_INIT, STREAM_DATA, STREAM_NOISE, STREAM_EVAL, STREAM_TEST = range(5)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


def load_data(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.data_dir:
        return ingest_dataset(cfg.data_dir, cfg.split_fraction, cfg.seed, cfg.crop, cfg.image_size)
    images = make_sprites(cfg.synthetic, cfg.image_size, cfg.seed)
    if cfg.channels == 1:
        images = images[..., :1]
    return split(images, cfg.split_fraction, cfg.seed)


def build(cfg: RunConfig):
    return build_model(
        cfg.model,
        cfg.image_shape,
        cfg.net,
        stream(cfg.seed, STREAM_INIT),
        prior=cfg.prior,
        transforms=cfg.transform_specs(),
        flow_layers=cfg.flow_layers,
        flow_hidden=cfg.flow_hidden,
    )


def model_from_checkpoint(ckpt: Checkpoint):
    model = build(ckpt.config)
    model.load_state_dict(ckpt.params)
    return model


def snapshot(cfg: RunConfig, model, state: AdamaxState, step: int) -> Checkpoint:
    opt = AdamaxState(
        {k: v.copy() for k, v in state.m.items()},
        {k: v.copy() for k, v in state.u.items()},
        state.t,
    )
    return Checkpoint(cfg, model.state_dict(), opt, step)


def evaluate_terms(model, images: np.ndarray, rng: np.random.Generator, batch_size: int) -> dict:
    """Image-weighted means of the ELBO terms over ``images``."""
    sums = dict.fromkeys(("re_x", "re_y", "kl_z", "kl_u", "elbo"), 0.0)
    for i in range(0, len(images), batch_size):
        xb = images[i : i + batch_size]
        for key, value in elbo(model, xb, rng).summary().items():
            sums[key] += value * len(xb)
    out = {k: v / len(images) for k, v in sums.items()}
    recombined = out["re_x"] + out["re_y"] - out["kl_z"] - out["kl_u"]
    if not math.isclose(recombined, out["elbo"], rel_tol=1e-10, abs_tol=1e-8):
        raise ContractError(f"ELBO terms do not recombine: {recombined} vs {out['elbo']}")
    return out


def bpd_from_elbo(elbo_nats: float, dims: int) -> float:
    return -elbo_nats / (dims * math.log(2.0))


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


@dataclass
class TrainResult:
    model: object
    checkpoint: Checkpoint
    metrics: list[dict] = field(default_factory=list)
    out_dir: Path | None = None

    @property
    def post_init_bpd(self) -> float:
        return self.metrics[0]["train_bpd"]

    @property
    def final(self) -> dict:
        return self.metrics[-1]


def _finite_step(loss: T.Tensor, grads: dict[str, np.ndarray]) -> bool:
    if not np.isfinite(loss.data).all():
        return False
    return all(np.isfinite(g).all() for g in grads.values())


def train(
    cfg: RunConfig,
    out_dir=None,
    data: tuple[np.ndarray, np.ndarray] | None = None,
    callback: Callable[[dict], bool] | None = None,
    log: Callable[[str], None] | None = None,
    plot: bool = True,
) -> TrainResult:
    """Fit ``cfg``'s model with AdaMax.

    After data-dependent initialization on the first batch, each epoch makes
    one shuffled pass. Rows of the metrics log hold ELBO terms on a fixed
    training subset (``eval_limit`` images) and the importance-weighted test
    bpd; row 0 is measured right after initialization. ``callback`` may
    return True to stop after any epoch.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    train_x, test_x = data if data is not None else load_data(cfg)
    if len(train_x) == 0 or len(test_x) == 0:
        raise ContractError("need at least one training and one test image")
    model = build(cfg)
    data_rng = stream(cfg.seed, STREAM_DATA)
    noise_rng = stream(cfg.seed, STREAM_NOISE)
    eval_train = train_x[: cfg.eval_limit]
    eval_test = test_x[: cfg.eval_limit]

    weightnorm_init(elbo, model, train_x[: cfg.batch_size], noise_rng)
    named = dict(model.named_parameters())
    params = {k: p.data for k, p in named.items()}
    state = AdamaxState.zeros(params)
    step = 0
    rows: list[dict] = []

    def record(epoch: int) -> dict:
        terms = evaluate_terms(model, eval_train, stream(cfg.seed, STREAM_EVAL, epoch), cfg.batch_size)
        test_bpd = iwae_nll(
            model, eval_test, cfg.iw_samples, stream(cfg.seed, STREAM_TEST, epoch), cfg.batch_size
        )
        row = {"epoch": epoch, **terms, "test_bpd": test_bpd}
        row["train_bpd"] = bpd_from_elbo(terms["elbo"], model.data_dim)
        rows.append(row)
        if log:
            log(" ".join(f"{k}={row[k]:.6g}" if k != "epoch" else f"epoch={epoch}" for k in row))
        return row

    def persist(final: bool = False) -> Checkpoint:
        snap = snapshot(cfg, model, state, step)
        if out_dir is not None:
            ckpt_io.save(out_dir / CHECKPOINT_NAME, snap)
            write_metrics(out_dir / METRICS_NAME, rows)
            if final and plot:
                plots.training_curves(rows, out_dir / "curves.png")
        return snap

    record(0)
    n = len(train_x)
    for epoch in range(1, cfg.epochs + 1):
        perm = data_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            xb = train_x[perm[start : start + cfg.batch_size]]
            if cfg.augment:
                xb = augment(xb, data_rng)
            with T.Tape():
                loss = loss_for_optimizer(elbo(model, xb, noise_rng))
                T.backward(loss)
            grads = {
                k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()
            }
            model.zero_grad()
            if not _finite_step(loss, grads):
                snap = persist(final=True)
                raise DivergenceError(f"non-finite loss or gradient at step {step + 1}", snap)
            adamax_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2)
            step += 1
        row = record(epoch)
        if callback and callback(row):
            break
        if epoch % cfg.checkpoint_every == 0 and epoch < cfg.epochs:
            persist()
    snap = persist(final=True)
    return TrainResult(model, snap, rows, out_dir)


def ablate_prior(
    cfg: RunConfig,
    out_dir=None,
    seeds=(0, 1, 2),
    priors=("fixed", "realnvp"),
    log: Callable[[str], None] | None = None,
) -> dict[str, list[float]]:
    """Train a plain VAE once per (seed, prior) at equal budget and collect
    the final test bpd. Writes ``ablation.csv`` and ``ablation.png``."""
    out_dir = Path(out_dir) if out_dir is not None else None
    results: dict[str, list[float]] = {p: [] for p in priors}
    lines = []
    for seed in seeds:
        base = cfg.replace(model="vae", seed=seed)
        data = load_data(base)
        for prior in priors:
            run_dir = out_dir / f"{prior}-seed{seed}" if out_dir is not None else None
            res = train(base.replace(prior=prior), run_dir, data=data, plot=False)
            bpd = res.final["test_bpd"]
            results[prior].append(bpd)
            lines.append((seed, prior, bpd))
            if log:
                log(f"seed={seed} prior={prior} test_bpd={bpd:.6f}")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("seed", "prior", "test_bpd"))
            for seed, prior, bpd in lines:
                w.writerow((seed, prior, repr(float(bpd))))
        plots.ablation_bars(results, out_dir / "ablation.png")
    return results
