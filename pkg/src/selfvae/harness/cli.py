"""Command-line entry point: ``selfvae <command> [options]``."""

from __future__ import annotations

import argparse
import statistics
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContractError, DivergenceError, DomainError, LoadError
from ..objectives import elbo
from ..pipelines import (
    ReconMode,
    bits_per_dim,
    generate,
    interpolate_u,
    iwae_log_likelihood,
    reconstruct,
)
from ..transforms import TransformSpec, image_grid, read_png, write_png
from . import checkpoint as ckpt_io
from .config import RunConfig
from .train import CHECKPOINT_NAME, ablate_prior, load_data, model_from_checkpoint, train


def _emit(**pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={v}")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key in ("epochs", "model", "prior"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfg.replace(**overrides) if overrides else cfg


def _checkpoint_path(args) -> Path:
    p = Path(args.checkpoint)
    return p / CHECKPOINT_NAME if p.is_dir() else p


def _seed(args, default: int = 0) -> int:
    return default if args.seed is None else args.seed


def _read_batch(paths) -> np.ndarray:
    return np.stack([read_png(p) for p in paths])


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    res = train(cfg, out, log=print)
    _emit(checkpoint=out / CHECKPOINT_NAME, metrics=out / "metrics.csv", curves=out / "curves.png")
    _emit(post_init_bpd=res.post_init_bpd, final_train_bpd=res.final["train_bpd"])
    return 0


def cmd_eval(args) -> int:
    ckpt = ckpt_io.load(_checkpoint_path(args))
    model = model_from_checkpoint(ckpt)
    _, test = load_data(ckpt.config)
    if args.limit:
        test = test[: args.limit]
    seed = _seed(args, ckpt.config.seed)
    bs = args.batch_size
    lls = np.concatenate(
        [
            iwae_log_likelihood(model, test[i : i + bs], args.iw_samples, np.random.default_rng(seed + i))
            for i in range(0, len(test), bs)
        ]
    )
    bounds = np.concatenate(
        [
            elbo(model, test[i : i + bs], np.random.default_rng(seed + i), analytic_kl=False).total.data
            for i in range(0, len(test), bs)
        ]
    )
    dims = model.data_dim
    _emit(
        images=len(test),
        iw_samples=args.iw_samples,
        bpd=repr(float(bits_per_dim(-lls.mean(), dims))),
        elbo_bpd=repr(float(bits_per_dim(-bounds.mean(), dims))),
    )
    return 0


def cmd_generate(args) -> int:
    model = model_from_checkpoint(ckpt_io.load(_checkpoint_path(args)))
    imgs = generate(model, np.random.default_rng(_seed(args)), args.n, mode_decode=args.mode_decode)
    out = Path(args.out)
    write_png(out, image_grid(imgs))
    _emit(images=len(imgs), output=out)
    return 0


def cmd_reconstruct(args) -> int:
    model = model_from_checkpoint(ckpt_io.load(_checkpoint_path(args)))
    x = _read_batch(args.input)
    imgs, nbytes = reconstruct(
        model,
        x,
        ReconMode(args.mode),
        np.random.default_rng(_seed(args)),
        mode_decode=args.mode_decode,
        posterior_mean=args.posterior_mean,
    )
    out = Path(args.out)
    write_png(out, image_grid(np.concatenate([x, imgs]), cols=len(x)))
    _emit(mode=args.mode, output=out, sent_bytes=nbytes, raw_bytes=int(np.prod(x.shape[1:])))
    return 0


def cmd_transform(args) -> int:
    spec = TransformSpec(args.kind, factor=args.factor, blur_sigma=args.sigma)
    out = spec(read_png(args.input))
    write_png(args.out, out)
    _emit(kind=args.kind, output=args.out, shape="x".join(map(str, out.shape)))
    return 0


def cmd_interpolate(args) -> int:
    model = model_from_checkpoint(ckpt_io.load(_checkpoint_path(args)))
    a, b = read_png(args.a), read_png(args.b)
    frames = interpolate_u(model, a, b, args.steps, seed=_seed(args), mode_decode=args.mode_decode)
    write_png(args.out, image_grid(frames, cols=len(frames)))
    _emit(steps=len(frames), output=args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    priors = [p.strip() for p in args.priors.split(",")]
    results = ablate_prior(cfg, args.out, seeds=seeds, priors=priors, log=print)
    for prior, values in results.items():
        _emit(**{f"median_test_bpd_{prior}": repr(statistics.median(values))})
    _emit(table=Path(args.out) / "ablation.csv", figure=Path(args.out) / "ablation.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", help="output file or directory")

    parser = argparse.ArgumentParser(prog="selfvae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--model", choices=("vae", "selfvae", "selfvae-3lvl", "selfvae-sketch"))
    p.add_argument("--prior", choices=("fixed", "mog", "realnvp"))
    p.set_defaults(func=cmd_train, out="run")

    def with_ckpt(name, func, help_):
        q = sub.add_parser(name, parents=[common], help=help_)
        q.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
        q.set_defaults(func=func)
        return q

    p = with_ckpt("eval", cmd_eval, "importance-weighted test bpd")
    p.add_argument("--iw-samples", type=int, default=512)
    p.add_argument("--limit", type=int, default=0, help="evaluate only the first N test images")
    p.add_argument("--batch-size", type=int, default=16)

    p = with_ckpt("generate", cmd_generate, "sample images")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--mode-decode", action="store_true")
    p.set_defaults(out="samples.png")

    p = with_ckpt("reconstruct", cmd_reconstruct, "generation/reconstruction schemes")
    p.add_argument("--mode", required=True, choices=[m.value for m in ReconMode])
    p.add_argument("--input", nargs="+", required=True, help="PNG images")
    p.add_argument("--mode-decode", action="store_true")
    p.add_argument("--posterior-mean", action="store_true")
    p.set_defaults(out="reconstruction.png")

    p = sub.add_parser("transform", parents=[common], help="apply a deterministic transform")
    p.add_argument("--kind", required=True, choices=("downscale", "grayscale", "sketch"))
    p.add_argument("--input", required=True)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--sigma", type=float, default=3.0)
    p.set_defaults(func=cmd_transform, out="transformed.png")

    p = with_ckpt("interpolate", cmd_interpolate, "interpolate two images through u")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--mode-decode", action="store_true")
    p.set_defaults(out="interpolation.png")

    p = sub.add_parser("ablate-prior", parents=[common], help="VAE prior ablation")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--priors", default="fixed,mog,realnvp")
    p.set_defaults(func=cmd_ablate, out="ablation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DomainError, LoadError, DivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
