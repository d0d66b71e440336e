import numpy as np
import pytest

from conftest import SMALL, TINY
from selfvae.errors import ConfigError, ShapeError
from selfvae.networks import (
    ChannelAttention,
    Decoder,
    DenseBlock,
    Encoder,
    NetConfig,
    WNConv2d,
    WNConvTranspose2d,
    build_encoder,
    data_dependent_init,
    images_to_tensor,
    upsample_nearest,
)
from selfvae.tensor import Tensor


def test_weight_norm_rows_have_norm_g(rng):
    conv = WNConv2d(3, 5, 3, rng)
    conv.g.data = rng.uniform(0.5, 2.0, 5)
    w = conv.weight().data
    np.testing.assert_allclose(np.sqrt((w**2).sum(axis=(1, 2, 3))), conv.g.data, rtol=1e-12)


@pytest.mark.parametrize("scale", [1.0, 0.1])
def test_data_dependent_init_standardizes_outputs(rng, scale):
    conv = WNConv2d(3, 6, 3, rng, init_scale=scale)
    x = Tensor(rng.normal(2.0, 3.0, (8, 3, 6, 6)))
    with data_dependent_init():
        out = conv(x).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), scale, rtol=1e-10)
    np.testing.assert_array_equal(conv(x).data, out)


def test_init_handles_constant_channels(rng):
    conv = WNConv2d(1, 2, 1, rng)
    with data_dependent_init():
        out = conv(Tensor(np.full((2, 1, 3, 3), 4.0))).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_transposed_conv_doubles_and_initializes(rng):
    up = WNConvTranspose2d(4, 3, rng)
    x = Tensor(rng.normal(size=(5, 4, 3, 3)))
    with data_dependent_init():
        out = up(x).data
    assert out.shape == (5, 3, 6, 6)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, rtol=1e-10)


def test_dense_block_concatenates(rng):
    block = DenseBlock(3, 2, 4, rng)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    out = block(x).data
    assert block.n_out == 11 and out.shape == (2, 11, 4, 4)
    np.testing.assert_array_equal(out[:, :3], x.data)
    assert DenseBlock(3, 0, 4, rng)(x).shape == (2, 3, 4, 4)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 2, 4, 4))))


def test_channel_attention_gate(rng):
    ca = ChannelAttention(8, 4, rng)
    x = Tensor(rng.normal(size=(3, 8, 5, 5)))
    gate = ca.gate(x).data
    assert gate.shape == (3, 8, 1, 1)
    assert np.all((gate > 0) & (gate < 1))
    np.testing.assert_allclose(ca(x).data, x.data * gate)


def test_encoder_and_decoder_shapes(rng):
    enc = build_encoder(SMALL, (3, 8, 8), rng)
    q = enc(images_to_tensor(np.zeros((2, 8, 8, 3), np.uint8)))
    assert q.shape == (2, 4, 4, 4)
    dec = Decoder(SMALL.latent_shape, (3, 8, 8), SMALL, rng)
    p = dec(Tensor(rng.normal(size=(2, 4, 4, 4))))
    assert p.mu.shape == (2, 3, 8, 8, SMALL.mixture_components)
    assert p.event_shape == (2, 3, 8, 8)


def test_conditional_decoders(rng):
    dec = Decoder((4, 4, 4), (3, 8, 8), SMALL, rng, cond_image_shape=(3, 4, 4))
    assert dec.inject
    z = Tensor(rng.normal(size=(2, 4, 4, 4)))
    y = rng.uniform(-1, 1, (2, 3, 4, 4))
    assert dec(z, cond_image=y).mu.shape == (2, 3, 8, 8, 5)
    with pytest.raises(ShapeError):
        dec(z)
    prior = Decoder((4, 4, 4), (4, 4, 4), SMALL, rng, cond_image_shape=(3, 8, 8), head="gaussian")
    out = prior(z, cond_image=rng.uniform(-1, 1, (2, 3, 8, 8)))
    assert out.shape == (2, 4, 4, 4)
    both = Decoder((4, 4, 4), (4, 4, 4), SMALL, rng, cond_latent=True, head="gaussian")
    assert both(z, cond_latent=z).shape == (2, 4, 4, 4)


def test_small_initial_heads(rng):
    enc = Encoder((3, 4, 4), TINY.latent_shape, TINY, rng)
    x = images_to_tensor(rng.integers(0, 256, (16, 4, 4, 3)).astype(np.uint8))
    with data_dependent_init():
        q = enc(x)
    assert np.abs(q.mu.data).max() < 1.0
    assert np.abs(q.log_sigma.data).max() < 1.0


def test_config_validation(rng):
    with pytest.raises(ConfigError):
        build_encoder(NetConfig(stages=3), (3, 16, 16), rng)
    with pytest.raises(ConfigError):
        NetConfig(latent_shape=(0, 4, 4))
    with pytest.raises(ConfigError):
        Decoder((4, 4, 4), (3, 12, 12), SMALL, rng)


def test_pixel_scaling_and_upsampling():
    x = np.array([[[[0, 255, 128]]]], np.uint8)
    t = images_to_tensor(x).data
    np.testing.assert_allclose(t[0, :, 0, 0], [-1.0, 1.0, 128 / 127.5 - 1])
    img = np.arange(4.0).reshape(1, 1, 2, 2)
    up = upsample_nearest(img, 4)
    np.testing.assert_array_equal(up[0, 0, ::2, ::2], img[0, 0])
    np.testing.assert_array_equal(up[0, 0, 1::2, 1::2], img[0, 0])
