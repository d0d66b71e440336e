import dataclasses
import math

import numpy as np
import pytest

from conftest import SMALL, random_images, tiny_model
from selfvae import distributions as D
from selfvae.errors import ContractError
from selfvae.harness.config import RunConfig
from selfvae.harness.train import load_data, train
from selfvae.objectives import elbo
from selfvae.pipelines import (
    ReconMode,
    bits_per_dim,
    conditional_generation,
    generate,
    interpolate_u,
    interpolation_codes,
    iwae_log_likelihood,
    iwae_nll,
    reconstruct,
    resample_z_keep_u,
    sent_bytes,
)
from selfvae.tensor import Tensor
from selfvae.transforms import downscale

MODES = [m.value for m in ReconMode]


@pytest.fixture(scope="module")
def toy():
    """A small 8x8 downscale selfVAE, before and after a short fit."""
    cfg = RunConfig(
        model="selfvae", flow_layers=2, flow_hidden=32, net=SMALL, synthetic=800,
        image_size=8, epochs=15, batch_size=32, eval_limit=64,
    )
    data = load_data(cfg)
    initial = train(cfg.replace(epochs=0), data=data, plot=False).model
    trained = train(cfg, data=data, plot=False).model
    return initial, trained, data[1]


def sq_err(a, b):
    return ((a.astype(float) - b.astype(float)) ** 2).reshape(len(a), -1).mean(axis=1)


def test_sent_bytes_for_32px_rgb():
    model = tiny_model("selfvae", shape=(32, 32, 3), cfg=dataclasses.replace(SMALL, stages=3))
    lat = 4 * 4 * 4 * 4
    y = 16 * 16 * 3
    assert model.y_shapes[0] == (16, 16, 3)
    assert y / (32 * 32 * 3) == 0.25
    assert sent_bytes(model, ReconMode.CONDITIONAL_GENERATION) == y + lat
    assert sent_bytes(model, ReconMode.CONDITIONAL_RECONSTRUCTION) == y + lat
    assert sent_bytes(model, ReconMode.RECONSTRUCTION_1) == lat
    assert sent_bytes(model, ReconMode.RECONSTRUCTION_2) == 2 * lat
    assert sent_bytes(model, ReconMode.GENERATION) == 0


@pytest.mark.parametrize("kind", ["selfvae", "selfvae-3lvl"])
def test_recon2_sends_more_than_recon1(kind):
    model = tiny_model(kind)
    assert sent_bytes(model, ReconMode.RECONSTRUCTION_2) > sent_bytes(model, ReconMode.RECONSTRUCTION_1)


def test_sent_bytes_ignore_pixel_content():
    model = tiny_model("selfvae")
    for mode in MODES:
        a = reconstruct(model, np.zeros((1, 4, 4, 3), np.uint8), mode, np.random.default_rng(0))[1]
        b = reconstruct(model, random_images(1, seed=3), mode, np.random.default_rng(0))[1]
        assert a == b == sent_bytes(model, ReconMode(mode))


def test_mode_variable_sets():
    assert ReconMode.RECONSTRUCTION_1.inferred == ("u",)
    assert set(ReconMode.RECONSTRUCTION_2.inferred) == {"u", "z"}
    assert "y" in ReconMode.CONDITIONAL_RECONSTRUCTION.inferred
    assert ReconMode.GENERATION.inferred == ()


@pytest.mark.parametrize("kind", ["selfvae", "selfvae-3lvl", "selfvae-sketch"])
@pytest.mark.parametrize("mode", MODES)
def test_every_mode_is_seeded_and_valid(kind, mode):
    model = tiny_model(kind)
    x = random_images(3)
    a, _ = reconstruct(model, x, mode, np.random.default_rng(7))
    b, _ = reconstruct(model, x, mode, np.random.default_rng(7))
    assert a.dtype == np.uint8 and a.shape == x.shape
    np.testing.assert_array_equal(a, b)


def test_plain_vae_supports_generation_and_recon1_only():
    model = tiny_model("vae", "fixed")
    x = random_images(2)
    out, nbytes = reconstruct(model, x, "recon1", np.random.default_rng(0))
    assert out.shape == x.shape and nbytes == 4 * 2
    assert generate(model, np.random.default_rng(0), 5).shape == (5, 4, 4, 3)
    for mode in ("cond-gen", "cond-recon", "recon2"):
        with pytest.raises(ContractError):
            reconstruct(model, x, mode, np.random.default_rng(0))
    with pytest.raises(ContractError):
        interpolate_u(model, x[0], x[1], 3)


def test_generation_follows_the_output_mixture():
    """With the final head's gain at zero the pixel distribution no longer
    depends on the latents, so every red subpixel is an independent draw
    from the mixture encoded in the head bias."""
    model = tiny_model("selfvae")
    head = model.y_decoders[-1].head
    k = model.cfg.mixture_components
    head.g.data[:] = 0.0
    bias = np.random.default_rng(1).normal(size=head.b.shape)
    bias[k : 2 * k] = [-0.5, 0.1, 0.6]
    bias[2 * k : 3 * k] = [-2.5, -3.0, -2.0]
    head.b.data[:] = bias
    tile = lambda a: np.broadcast_to(a, (256, k)).copy()  # noqa: E731
    table = D.MixtureLogisticParams(*(Tensor(tile(bias[i * k : (i + 1) * k])) for i in range(3)))
    probs = np.exp(D.dlogistic_log_prob(table, np.arange(256)).data)

    red = generate(model, np.random.default_rng(2), 2500)[..., 0].ravel()
    counts = np.bincount(red, minlength=256)
    expected = probs * red.size
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    stat = ((obs - exp) ** 2 / exp).sum()
    dof = len(obs) - 1
    z = ((stat / dof) ** (1 / 3) - (1 - 2 / (9 * dof))) / math.sqrt(2 / (9 * dof))
    assert 0.5 * math.erfc(z / math.sqrt(2)) > 0.01


def test_interpolation_endpoints_match_u_only_reconstruction():
    model = tiny_model("selfvae")
    x = random_images(2, seed=4)
    frames = interpolate_u(model, x[0], x[1], 5, seed=11)
    assert frames.shape == (5, 4, 4, 3)
    for i, j in ((0, 0), (1, -1)):
        ref, _ = reconstruct(model, x[i : i + 1], "recon1", np.random.default_rng(11), posterior_mean=True)
        np.testing.assert_array_equal(frames[j], ref[0])


def test_two_step_interpolation_is_the_endpoints():
    model = tiny_model("selfvae")
    x = random_images(2, seed=5)
    frames = interpolate_u(model, x[0], x[1], 2, seed=3)
    ends = interpolate_u(model, x[0], x[1], 6, seed=3)
    assert len(frames) == 2
    np.testing.assert_array_equal(frames[0], ends[0])
    np.testing.assert_array_equal(frames[1], ends[-1])
    with pytest.raises(ContractError):
        interpolate_u(model, x[0], x[1], 1)


def test_interpolation_moves_monotonically_in_base_space():
    model = tiny_model("selfvae")
    for _, p in model.prior.named_parameters():
        p.data = p.data + np.random.default_rng(0).normal(0, 0.3, p.shape)
    x = random_images(2, seed=6)
    v, u = interpolation_codes(model, x[0], x[1], 9)
    from_a = np.linalg.norm((v - v[0]).reshape(9, -1), axis=1)
    from_b = np.linalg.norm((v - v[-1]).reshape(9, -1), axis=1)
    assert np.all(np.diff(from_a) > 0) and np.all(np.diff(from_b) < 0)
    np.testing.assert_allclose(model.prior.forward(Tensor(v[[0, -1]]))[0].data, u[[0, -1]], atol=1e-10)


def test_resampling_without_noise_is_the_mean_reconstruction():
    model = tiny_model("selfvae-3lvl")
    x = random_images(1, seed=8)
    a = resample_z_keep_u(model, x[0], 1, np.random.default_rng(0), temperature=0.0, mode_decode=True)
    b, _ = reconstruct(
        model, x, "recon1", np.random.default_rng(1), mode_decode=True, temperature=0.0, posterior_mean=True
    )
    np.testing.assert_array_equal(a, b)
    c = resample_z_keep_u(model, x[0], 4, np.random.default_rng(5))
    np.testing.assert_array_equal(c, resample_z_keep_u(model, x[0], 4, np.random.default_rng(5)))


@pytest.mark.parametrize("kind", ["vae", "selfvae", "selfvae-3lvl"])
def test_single_sample_iwae_is_the_bound(kind):
    model = tiny_model(kind)
    x = random_images(3)
    iw = iwae_log_likelihood(model, x, 1, np.random.default_rng(2))
    bound = elbo(model, x, np.random.default_rng(2), analytic_kl=False).total.data
    assert np.abs(iw - bound).max() < 1e-10


def test_iwae_rejects_zero_samples():
    model = tiny_model("selfvae")
    with pytest.raises(ContractError):
        iwae_log_likelihood(model, random_images(2), 0, np.random.default_rng(0))


def test_bits_per_dim_conversion():
    assert bits_per_dim(48 * math.log(2), 48) == pytest.approx(1.0, rel=1e-15)
    np.testing.assert_allclose(bits_per_dim(np.array([3.0, 7.0]), 5) * 4, bits_per_dim(np.array([12.0, 28.0]), 5))
    model = tiny_model("vae", "fixed")
    x = random_images(4)
    ll = iwae_log_likelihood(model, x, 1, np.random.default_rng(0))
    assert iwae_nll(model, x, 1, np.random.default_rng(0)) == pytest.approx(
        -ll.mean() / (48 * math.log(2)), rel=1e-12
    )


def test_more_importance_samples_do_not_hurt(toy):
    _, model, test = toy
    x = test[:16]
    ll1 = np.stack([iwae_log_likelihood(model, x, 1, np.random.default_rng(s)) for s in range(8)])
    ll64 = iwae_log_likelihood(model, x, 64, np.random.default_rng(100))
    diff = ll64 - ll1.mean(axis=0)
    se = ll1.std(axis=0, ddof=1).mean() / math.sqrt(8) + diff.std(ddof=1) / math.sqrt(len(diff))
    assert diff.mean() > -3 * se


def test_reconstruction_quality_ordering(toy):
    _, model, test = toy
    err = {m: sq_err(reconstruct(model, test, m, np.random.default_rng(1))[0], test) for m in MODES[2:]}
    for worse, better in (("recon1", "recon2"), ("recon2", "cond-recon")):
        d = err[worse] - err[better]
        assert d.mean() > -3 * d.std(ddof=1) / math.sqrt(len(d))
    d = err["recon1"] - err["cond-recon"]
    assert d.mean() > 3 * d.std(ddof=1) / math.sqrt(len(d))


def test_conditional_generation_gap_shrinks_with_training(toy):
    initial, trained, test = toy
    gap = {}
    for name, model in (("initial", initial), ("trained", trained)):
        out = conditional_generation(model, test, np.random.default_rng(2))
        gap[name] = np.abs(downscale(out, 2).astype(float) - downscale(test, 2)).mean()
    assert gap["trained"] < gap["initial"]
    out = conditional_generation(trained, test[:4], np.random.default_rng(9))
    np.testing.assert_array_equal(out, conditional_generation(trained, test[:4], np.random.default_rng(9)))


def test_resampled_details_vary_more_than_the_coarse_image(toy):
    _, model, test = toy
    out = resample_z_keep_u(model, test[0], 200, np.random.default_rng(3)).astype(float)
    coarse = out.reshape(200, 4, 2, 4, 2, 3).mean(axis=(2, 4))
    fine = out - coarse.repeat(2, axis=1).repeat(2, axis=2)
    assert fine.var(axis=0).mean() > coarse.var(axis=0).mean()
