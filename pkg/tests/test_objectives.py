import math

import numpy as np
import pytest

from conftest import random_images, tiny_model
from selfvae import distributions as D
from selfvae.errors import ContractError
from selfvae.models import VAE
from selfvae.networks import images_to_tensor
from selfvae.objectives import (
    elbo,
    hierarchical_elbo,
    loss_for_optimizer,
    nats_to_bpd,
    selfvae_elbo,
    vae_elbo,
)
from selfvae.tensor import Tensor


def chw(x):
    return np.asarray(x).transpose(0, 3, 1, 2)


def two_level_by_hand(model, x, seed):
    """Single-sample bound assembled term by term from the networks, with
    the noise drawn here in the documented order (u, then z)."""
    rng = np.random.default_rng(seed)
    y = model.transforms[0](x)
    y_unit = D.pixels_to_unit(chw(y))
    q_u = model.u_encoder(Tensor(y_unit))
    u = q_u.mu.data + q_u.sigma * rng.standard_normal(q_u.shape)
    q_z = model.z_encoders[0](images_to_tensor(x))
    z = q_z.mu.data + q_z.sigma * rng.standard_normal(q_z.shape)
    p_z = model.z_priors[0](Tensor(u), cond_image=y_unit)
    log_px = D.dlogistic_log_prob(model.y_decoders[0](Tensor(z), cond_image=y_unit), chw(x)).data
    log_pz = D.gaussian_log_prob(p_z, z).data
    log_qz = D.gaussian_log_prob(q_z, z).data
    log_py = D.dlogistic_log_prob(model.u_decoder(Tensor(u)), chw(y)).data
    log_pu = model.prior.log_prob(Tensor(u)).data
    log_qu = D.gaussian_log_prob(q_u, u).data
    log_qy = 0.0  # y = d(x) is deterministic: a point mass with zero entropy
    x_part = log_px + log_pz - log_qz
    y_part = log_py + log_pu - log_qy - log_qu
    return x_part, y_part


@pytest.mark.parametrize("prior", ["fixed", "mog", "realnvp"])
def test_two_level_bound_equals_assembly_by_hand(prior):
    model = tiny_model("selfvae", prior)
    x = random_images(3)
    terms = selfvae_elbo(x, model, np.random.default_rng(5), analytic_kl=False)
    x_part, y_part = two_level_by_hand(model, x, 5)
    np.testing.assert_allclose(terms.total.data, x_part + y_part, rtol=0, atol=1e-8)


def test_analytic_kl_matches_monte_carlo_average():
    model = tiny_model("selfvae")
    x = np.repeat(random_images(1), 4000, axis=0)
    mc = selfvae_elbo(x, model, np.random.default_rng(0), analytic_kl=False).kl_z[0].data
    # same u draws, so the analytic values are the conditional expectations of mc
    exact = selfvae_elbo(x, model, np.random.default_rng(0), analytic_kl=True).kl_z[0].data
    assert abs(mc.mean() - exact.mean()) < 4 * (mc - exact).std() / math.sqrt(len(mc))


def test_self_supervised_part_is_a_vae_on_y():
    model = tiny_model("selfvae")
    x = random_images(4)
    terms = selfvae_elbo(x, model, np.random.default_rng(3))
    y = model.transforms[0](x)
    sub = VAE.from_parts(model.u_encoder, model.u_decoder, model.prior, y.shape[1:], model.cfg)
    ref = vae_elbo(y, sub, np.random.default_rng(3))
    np.testing.assert_allclose(terms.re_y[0].data - terms.kl_u.data, ref.total.data, rtol=0, atol=1e-10)


@pytest.mark.parametrize("analytic", [True, False])
def test_k_level_bound_reduces_to_two_level(analytic):
    model = tiny_model("selfvae")
    x = random_images(3)
    a = selfvae_elbo(x, model, np.random.default_rng(9), analytic_kl=analytic)
    b = hierarchical_elbo(x, model, np.random.default_rng(9), analytic_kl=analytic)
    np.testing.assert_allclose(a.total.data, b.total.data, rtol=0, atol=1e-10)


@pytest.mark.parametrize("kind", ["vae", "selfvae", "selfvae-3lvl"])
def test_terms_recombine_to_total(kind):
    model = tiny_model(kind)
    terms = elbo(model, random_images(3), np.random.default_rng(1))
    np.testing.assert_allclose(terms.recombined(), terms.total.data, rtol=0, atol=1e-10)
    s = terms.summary()
    assert abs(s["re_x"] + s["re_y"] - s["kl_z"] - s["kl_u"] - s["elbo"]) < 1e-9


def test_three_level_term_counts():
    model = tiny_model("selfvae-3lvl")
    terms = hierarchical_elbo(random_images(2), model, np.random.default_rng(0))
    assert model.K == 2
    assert len(terms.re_y) == 2 and len(terms.kl_z) == 2
    assert [y.shape[1:] for y in terms.aux["levels"]] == [(1, 1, 3), (2, 2, 3), (4, 4, 3)]
    with pytest.raises(ContractError):
        selfvae_elbo(random_images(2), model, np.random.default_rng(0))


def test_seeded_bounds_are_reproducible():
    model = tiny_model("selfvae-3lvl")
    x = random_images(2)
    a = elbo(model, x, np.random.default_rng(4)).total.data
    b = elbo(model, x, np.random.default_rng(4)).total.data
    c = elbo(model, x, np.random.default_rng(5)).total.data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bound_is_below_zero_and_loss_is_negated_mean():
    model = tiny_model("vae", "fixed")
    terms = elbo(model, random_images(3), np.random.default_rng(0))
    assert np.all(terms.total.data < 0)
    assert loss_for_optimizer(terms).item() == pytest.approx(-terms.total.data.mean(), rel=1e-15)


def test_bits_per_dim_units():
    assert nats_to_bpd(48 * math.log(2), 48) == pytest.approx(1.0, rel=1e-15)
    np.testing.assert_allclose(nats_to_bpd(np.array([2.0, 4.0]), 3), 2 * nats_to_bpd(np.array([1.0, 2.0]), 3))
