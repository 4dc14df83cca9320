import math

import numpy as np
import pytest

from gkt.config.settings import AttentionConfig
from gkt.core.attention import (
    EncoderLayer,
    LatentRep,
    SimpleAttention,
    attention,
    attn_fourier,
    attn_galerkin,
    attn_linear_softmax,
    attn_softmax,
    encoder_layer,
    init_projection,
    project_qkv,
)
from gkt.core.cost_meter import metering
from gkt.core.gradcheck import grad_check
from gkt.core.layers import dropout_stream
from gkt.core.tensor import Tensor, sum_
from gkt.errors import ConfigError, DimensionError


def _t(a):
    return Tensor(np.asarray(a, dtype=float))


def test_init_projection_degenerate_and_bounded():
    np.testing.assert_array_equal(init_projection(5, 0.0, 1.0, seed=3).numpy(), np.eye(5))
    d = 8
    w = init_projection(d, 1e-2, 1e-2, seed=3).numpy()
    bound = 1e-2 * math.sqrt(3.0 / d)
    off = w[~np.eye(d, dtype=bool)]
    assert np.all(np.abs(off) <= bound)
    assert np.all(np.abs(np.diag(w) - 1e-2) <= bound)
    np.testing.assert_array_equal(w, init_projection(d, 1e-2, 1e-2, seed=3).numpy())


def test_project_qkv_identity_and_zero(rng):
    y = _t(rng.standard_normal((6, 3)))
    eye = _t(np.eye(3))
    for out in project_qkv(y, eye, eye, eye):
        np.testing.assert_array_equal(out.numpy(), y.numpy())
    for out in project_qkv(_t(np.zeros((6, 3))), eye, eye, eye):
        np.testing.assert_array_equal(out.numpy(), 0.0)


def test_fourier_hand_examples():
    eye = _t(np.eye(2))
    np.testing.assert_allclose(attn_fourier(eye, eye, eye).numpy(), 0.5 * np.eye(2))
    ones = _t([[1.0], [1.0]])
    np.testing.assert_allclose(attn_fourier(ones, ones, _t([[2.0], [2.0]])).numpy(), [[2.0], [2.0]])


def test_galerkin_orthonormal_keys_return_queries(rng):
    n, d = 16, 3
    basis, _ = np.linalg.qr(rng.standard_normal((n, d)))
    kv = _t(math.sqrt(n) * basis)
    q = rng.standard_normal((n, d))
    np.testing.assert_allclose(attn_galerkin(_t(q), kv, kv).numpy(), q, atol=1e-12)
    np.testing.assert_array_equal(attn_galerkin(_t(q), kv, _t(np.zeros((n, d)))).numpy(), 0.0)


def test_softmax_degenerate_cases(rng):
    v = rng.standard_normal((5, 3))
    z = attn_softmax(_t(rng.standard_normal((5, 3))), _t(np.zeros((5, 3))), _t(v)).numpy()
    np.testing.assert_allclose(z, np.tile(v.mean(axis=0), (5, 1)), atol=1e-14)
    single = rng.standard_normal((1, 3))
    np.testing.assert_allclose(attn_softmax(_t(single), _t(single), _t(single)).numpy(), single)


def test_linear_softmax_scalar_case():
    z = attn_linear_softmax(_t([[0.3]]), _t([[-1.2]]), _t([[2.5]]))
    np.testing.assert_allclose(z.numpy(), [[2.5]])


def test_fourier_and_galerkin_agree_without_normalization():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 257))
        d = int(rng.integers(1, 17))
        q, k, v = (_t(rng.standard_normal((n, d))) for _ in range(3))
        a = attn_fourier(q, k, v).numpy()
        b = attn_galerkin(q, k, v).numpy()
        worst = max(worst, np.linalg.norm(a - b) / np.linalg.norm(a))
    assert worst < 1e-12


@pytest.mark.parametrize("variant", ["fourier", "galerkin", "softmax", "linear-softmax"])
def test_permutation_equivariance(variant, rng):
    n, d = 32, 4
    q, k, v = (rng.standard_normal((n, d)) for _ in range(3))
    perm = rng.permutation(n)
    z = attention(variant, _t(q), _t(k), _t(v), normalize=True).numpy()
    zp = attention(variant, _t(q[perm]), _t(k[perm]), _t(v[perm]), normalize=True).numpy()
    np.testing.assert_allclose(zp, z[perm], rtol=1e-12, atol=1e-13)


def test_attention_shape_and_variant_errors():
    with pytest.raises(DimensionError):
        attn_fourier(_t(np.ones((3, 2))), _t(np.ones((3, 3))), _t(np.ones((3, 2))))
    with pytest.raises(ConfigError):
        attention("cosine", _t(np.ones((2, 2))), _t(np.ones((2, 2))), _t(np.ones((2, 2))))


def test_galerkin_mac_count_and_no_quadratic_buffer(rng):
    n, d = 64, 8
    q, k, v = (_t(rng.standard_normal((n, d))) for _ in range(3))
    with metering() as meter:
        attn_galerkin(q, k, v)
    assert meter.macs["attention"] == 8192
    assert (n, n) not in meter.largest_shape.values()
    assert meter.peak_buffer_bytes < n * n * 8


def test_fourier_mac_count_scales_quadratically(rng):
    counts = []
    for n in (64, 128):
        q, k, v = (_t(rng.standard_normal((n, 8))) for _ in range(3))
        with metering() as meter:
            attn_fourier(q, k, v)
        counts.append(meter.macs["attention"])
    assert counts == [2 * 64 * 64 * 8, 2 * 128 * 128 * 8]
    assert counts[1] / counts[0] == 4.0


def _rep(rng, n, cfg):
    x = np.arange(n, dtype=float) / n
    return LatentRep(_t(rng.standard_normal((n, cfg.d_model))), _t(x[:, None]))


def test_zero_layer_is_pure_residual(rng):
    cfg = AttentionConfig(variant="galerkin", d_model=6, n_head=2)
    layer = EncoderLayer(cfg, rng)
    for p in layer.parameters():
        p.data = np.zeros(p.shape)
    rep = _rep(rng, 10, cfg)
    np.testing.assert_allclose(layer(rep).features.numpy(), rep.features.numpy(), atol=1e-15)


def test_regular_scheme_outputs_normalized_rows(rng):
    cfg = AttentionConfig(variant="fourier", ln_scheme="regular", d_model=6)
    out = EncoderLayer(cfg, rng)(_rep(rng, 12, cfg)).features.numpy()
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=1), 1.0, rtol=1e-3)


def test_attention_rejects_wrong_width(rng):
    cfg = AttentionConfig(d_model=4)
    attn = SimpleAttention(cfg, rng)
    bad = LatentRep(_t(np.ones((5, 3))), _t(np.ones((5, 1))))
    with pytest.raises(DimensionError):
        attn(bad)


def test_encoder_layer_config_mismatch(rng):
    cfg = AttentionConfig(d_model=4)
    layer = EncoderLayer(cfg, rng)
    with pytest.raises(ConfigError):
        encoder_layer(_rep(rng, 5, cfg), AttentionConfig(d_model=4, variant="fourier"), layer)


def test_head_count_must_divide_width():
    with pytest.raises(ConfigError):
        AttentionConfig(d_model=6, n_head=4).validate()


def test_dropout_only_in_training(rng):
    cfg = AttentionConfig(d_model=4, attn_dropout=0.5, ffn_dropout=0.5)
    layer = EncoderLayer(cfg, rng)
    rep = _rep(rng, 8, cfg)
    layer.eval()
    first = layer(rep).features.numpy()
    np.testing.assert_array_equal(first, layer(rep).features.numpy())
    layer.train()
    with dropout_stream(np.random.default_rng(0)):
        noisy = layer(rep).features.numpy()
    assert not np.allclose(noisy, first)


@pytest.mark.parametrize("variant", ["fourier", "galerkin", "softmax", "linear-softmax"])
def test_encoder_layer_input_gradcheck(variant, rng):
    cfg = AttentionConfig(variant=variant, d_model=4, n_head=2, init_eta=0.5, init_delta=0.5)
    layer = EncoderLayer(cfg, rng)
    coords = _t((np.arange(8, dtype=float) / 8)[:, None])
    weights = _t(rng.standard_normal((8, 4)))
    err = grad_check(lambda x: sum_(layer(LatentRep(x, coords)).features * weights),
                     rng.standard_normal((8, 4)))
    assert err < 1e-5
