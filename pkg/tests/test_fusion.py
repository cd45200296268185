import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kfrestore.errors import MissingWeight, ParseError, ShapeMismatch, ZeroMatrix
from kfrestore.fusion import (WeightStore, adain, asff_fuse, conv2d, discriminator_scores,
                              init_weights, multiscale_scores, restore_forward, sft_modulate,
                              spectral_normalize, test_extractor as make_test_extractor, zero_residual)
from kfrestore.fusion.ops import avg_pool, channel_stats, sigmoid, upsample2
from oracles import conv2d_naive, moments

# frozen from scripts/compute_goldens.py (naive-convolution path)
GOLDEN_LEVEL_MEANS = [0.2485028971051264, 0.21083599674247622, 0.23514368351533993, 0.19604511247105438]
GOLDEN_RESIDUAL_LINF = 0.08302972925473646


def golden_inputs(size=32, seed=2024):
    rng = np.random.default_rng(seed)
    return (rng.random((size, size, 3)), rng.random((size, size, 3)),
            (rng.random((size, size, 1)) > 0.9).astype(float))


@pytest.fixture(scope="module")
def weights():
    return init_weights(0)


@pytest.fixture(scope="module")
def extractor():
    return make_test_extractor(0)


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((3, 5, 4))
    k = np.eye(3)[:, :, None, None]
    np.testing.assert_array_equal(conv2d(x, k), x)


def test_conv_all_ones():
    out = conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), bias=[0.5])
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 9.5


@pytest.mark.parametrize("stride,dilation,padding", [(1, 2, 0), (1, 1, 1), (2, 1, 1), (2, 2, 3), (3, 1, 0)])
def test_conv_matches_naive_loops(stride, dilation, padding):
    rng = np.random.default_rng(stride * 10 + dilation)
    x = rng.normal(size=(2, 7, 7))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = conv2d(x, k, b, stride=stride, dilation=dilation, padding=padding)
    expected = conv2d_naive(x, k, b, stride=stride, dilation=dilation, padding=padding)
    assert got.shape == expected.shape
    assert got.shape[1] == (7 + 2 * padding - dilation * 2 - 1) // stride + 1
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        conv2d(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)))
    with pytest.raises(ShapeMismatch):
        conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))
    with pytest.raises(ShapeMismatch):
        conv2d(np.ones((1, 4, 4)), np.ones((2, 1, 3, 3)), bias=[1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_is_affine(seed, a, b):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(2, 2, 6, 6))
    k = rng.normal(size=(2, 2, 3, 3))
    bias = rng.normal(size=2)
    lhs = conv2d(a * X + b * Y, k, bias, padding=1)
    bias_term = conv2d(np.zeros_like(X), np.zeros_like(k), bias, padding=1)
    rhs = a * conv2d(X, k, bias, padding=1) + b * conv2d(Y, k, bias, padding=1) - (a + b - 1) * bias_term
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_upsample_and_pool():
    x = np.arange(8.0).reshape(2, 2, 2)
    up = upsample2(x)
    assert up.shape == (2, 4, 4)
    np.testing.assert_array_equal(avg_pool(up, 2), x)
    assert avg_pool(np.ones((1, 5, 5)), 2).shape == (1, 2, 2)


def test_sigmoid_is_stable():
    s = sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(s)) and s[1] == 0.5 and s[0] == 0.0 and s[2] == 1.0


# ---------------------------------------------------------------- AdaIN / SFT

def test_adain_self_is_identity():
    f = np.random.default_rng(1).normal(size=(4, 5, 5))
    np.testing.assert_allclose(adain(f, f), f, atol=1e-6)


def test_adain_constant_guide():
    guide = np.full((2, 3, 3), 7.0)
    deg = np.random.default_rng(2).normal(size=(2, 3, 3))
    out = adain(guide, deg)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, np.broadcast_to(deg.mean(axis=(1, 2))[:, None, None], out.shape))


def test_adain_hand_example_against_moments_oracle():
    guide = np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 1, 4)
    deg = np.array([10.0, 10.0, 14.0, 14.0]).reshape(1, 1, 4)
    mg, sg = moments(guide.ravel())
    md, sd = moments(deg.ravel())
    assert (md, sd) == (12.0, 2.0)
    assert sg == pytest.approx(1.1180339887, abs=1e-9)
    expected = [sd * (g - mg) / sg + md for g in guide.ravel()]
    out = adain(guide, deg)
    np.testing.assert_allclose(out.ravel(), expected, atol=1e-9)
    assert out.ravel()[0] == pytest.approx(12 - 2 * 1.3416407865, abs=1e-9)
    mo, so = moments(out.ravel())
    assert mo == pytest.approx(12.0, abs=1e-9) and so == pytest.approx(2.0, abs=1e-9)


def test_adain_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adain(np.ones((1, 2, 2)), np.ones((2, 2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_adain_moment_contract(seed):
    rng = np.random.default_rng(seed)
    c, h, w = rng.integers(1, 6), rng.integers(2, 9), rng.integers(2, 9)
    guide = rng.normal(rng.normal(0, 3), rng.uniform(0.1, 5), (c, h, w))
    deg = rng.normal(rng.normal(0, 3), rng.uniform(0.1, 5), (c, h, w))
    mu_o, sd_o = channel_stats(adain(guide, deg))
    mu_d, sd_d = channel_stats(deg)
    np.testing.assert_allclose(mu_o, mu_d, atol=1e-5)
    np.testing.assert_allclose(sd_o, sd_d, atol=1e-5)


def test_sft_examples():
    rng = np.random.default_rng(3)
    r, a, b = rng.normal(size=(3, 2, 3, 3))
    np.testing.assert_array_equal(sft_modulate(r, np.ones_like(r), np.zeros_like(r)), r)
    np.testing.assert_array_equal(sft_modulate(r, np.zeros_like(r), b), b)
    out = sft_modulate(r, a, b)
    for idx in np.ndindex(r.shape):
        assert out[idx] == a[idx] * r[idx] + b[idx]
    with pytest.raises(ShapeMismatch):
        sft_modulate(r, a[:1], b)


# ---------------------------------------------------------------- ASFF

def asff_store(c, w1, b1, w2, b2):
    return WeightStore({"asff0.conv1.weight": w1, "asff0.conv1.bias": b1,
                        "asff0.conv2.weight": w2, "asff0.conv2.bias": b2})


@pytest.mark.parametrize("bias,target", [(20.0, "guide"), (-20.0, "restored")])
def test_asff_saturation(bias, target):
    rng = np.random.default_rng(4)
    r, g, lm = rng.normal(size=(3, 4, 5, 5))
    store = asff_store(4, rng.normal(size=(4, 12, 3, 3)), np.zeros(4),
                       np.zeros((4, 4, 3, 3)), np.full(4, bias))
    out = asff_fuse(r, g, lm, store, 0)
    np.testing.assert_allclose(out, g if target == "guide" else r, atol=1e-6 * max(1, np.abs(r - g).max()))


def test_asff_hand_evaluation():
    r = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    g = np.array([[[0.0, 0.0], [1.0, 1.0]]])
    lm = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    store = asff_store(1, np.array([0.5, -1.0, 2.0]).reshape(1, 3, 1, 1), np.array([0.1]),
                       np.array([1.5]).reshape(1, 1, 1, 1), np.array([-0.2]))
    out = asff_fuse(r, g, lm, store, 0)
    for i in range(2):
        for j in range(2):
            h = 0.5 * r[0, i, j] - 1.0 * g[0, i, j] + 2.0 * lm[0, i, j] + 0.1
            h = h if h >= 0 else 0.2 * h
            m = 1.0 / (1.0 + math.exp(-(1.5 * h - 0.2)))
            assert out[0, i, j] == pytest.approx(g[0, i, j] * m + r[0, i, j] * (1 - m), abs=1e-7)


def test_asff_missing_weight():
    r = np.ones((1, 2, 2))
    with pytest.raises(MissingWeight):
        asff_fuse(r, r, r, WeightStore(), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_asff_convexity(seed):
    weights = init_weights(0, discriminators=False)
    rng = np.random.default_rng(seed)
    r, g, lm = rng.normal(size=(3, 8, 6, 6))
    out = asff_fuse(r, g, lm, weights, 0)
    lo, hi = np.minimum(r, g), np.maximum(r, g)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


# ---------------------------------------------------------------- spectral norm

def test_spectral_norm_diagonal():
    w, sigma = spectral_normalize(np.diag([3.0, 1.0]), power_iters=30)
    assert sigma == pytest.approx(3.0, abs=1e-9)
    np.testing.assert_allclose(w, np.diag([1.0, 1 / 3]), atol=1e-9)


def test_spectral_norm_orthogonal():
    q, _ = np.linalg.qr(np.random.default_rng(5).normal(size=(6, 6)))
    w, sigma = spectral_normalize(q, power_iters=5)
    assert sigma == pytest.approx(1.0, abs=1e-5)
    np.testing.assert_allclose(w, q, atol=1e-5)


def test_spectral_norm_random_vs_svd():
    W = np.random.default_rng(6).normal(size=(8, 5))
    _, sigma = spectral_normalize(W, power_iters=50)
    assert sigma == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], abs=1e-4)


def test_spectral_norm_conv_kernel_and_errors():
    k = np.random.default_rng(7).normal(size=(4, 3, 3, 3))
    w, sigma = spectral_normalize(k, 100)
    assert w.shape == k.shape
    assert np.linalg.svd(w.reshape(4, -1), compute_uv=False)[0] == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ZeroMatrix):
        spectral_normalize(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        spectral_normalize(np.eye(2), 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_spectral_norm_contract(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=tuple(rng.integers(2, 17, 2)))
    w, _ = spectral_normalize(W, power_iters=200)
    assert 1 - 1e-3 <= np.linalg.svd(w, compute_uv=False)[0] <= 1 + 1e-3


# ---------------------------------------------------------------- weight files

def test_weight_file_roundtrip(tmp_path, weights):
    path = tmp_path / "w.kfrw"
    weights.save(path)
    loaded = WeightStore.load(path)
    assert list(loaded) == list(weights)
    for name, arr in weights.items():
        np.testing.assert_array_equal(loaded[name], arr)
    assert loaded.to_bytes() == path.read_bytes()


def test_weight_file_layout():
    store = WeightStore({"a": np.array([[1.0, 2.0]], dtype=np.float32)})
    raw = store.to_bytes()
    expected = (b"KFRW" + (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
                + (1).to_bytes(2, "little") + b"a" + bytes([2])
                + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + np.array([1.0, 2.0], dtype="<f4").tobytes())
    assert raw == expected


def test_weight_file_errors():
    good = WeightStore({"a": np.ones(3)}).to_bytes()
    with pytest.raises(ParseError):
        WeightStore.from_bytes(b"XXXX" + good[4:])
    with pytest.raises(ParseError):
        WeightStore.from_bytes(good[:-2])
    with pytest.raises(ParseError):
        WeightStore.from_bytes(good + b"\0")
    with pytest.raises(ShapeMismatch):
        WeightStore({"a": np.ones(3)}).get("a", (4,))
    with pytest.raises(MissingWeight):
        WeightStore()["nope"]


# ---------------------------------------------------------------- extractor

def test_extractor_levels(extractor):
    pyr = extractor.extract(np.full((32, 32, 3), 0.5))
    assert [lv.shape for lv in pyr.levels] == [(8, 16, 16), (16, 8, 8), (32, 4, 4), (32, 2, 2)]
    assert pyr.factors == (2, 4, 8, 16)


def test_extractor_deterministic():
    img = np.random.default_rng(8).random((32, 48, 3))
    a = make_test_extractor(3).extract(img)
    b = make_test_extractor(3).extract(img)
    for x, y in zip(a.levels, b.levels):
        np.testing.assert_array_equal(x, y)


def test_extractor_golden_level_means(extractor):
    pyr = extractor.extract(np.full((32, 32, 3), 0.5))
    np.testing.assert_allclose([lv.mean() for lv in pyr.levels], GOLDEN_LEVEL_MEANS, rtol=1e-10)


def test_extractor_odd_sizes_round_down(extractor):
    pyr = extractor.extract(np.zeros((37, 50, 1)))
    assert [lv.shape[1:] for lv in pyr.levels] == [(18, 25), (9, 12), (4, 6), (2, 3)]


# ---------------------------------------------------------------- restore_forward

def test_zero_residual_returns_degraded(weights, extractor):
    deg, ref, mask = golden_inputs()
    out = restore_forward(deg, ref, mask, extractor, zero_residual(weights))
    np.testing.assert_array_equal(out, deg)


def test_restore_deterministic(weights, extractor):
    deg, ref, mask = golden_inputs()
    a = restore_forward(deg, ref, mask, extractor, weights)
    b = restore_forward(deg, ref, mask, make_test_extractor(0), init_weights(0))
    assert a.tobytes() == b.tobytes()


def test_restore_golden_residual(weights, extractor):
    deg, ref, mask = golden_inputs()
    out, res = restore_forward(deg, ref, mask, extractor, weights, return_residual=True)
    assert out.shape == (32, 32, 3) and out.min() >= 0 and out.max() <= 1
    assert np.isfinite(res).all()
    assert np.abs(res).max() == pytest.approx(GOLDEN_RESIDUAL_LINF, rel=1e-9)


@pytest.mark.parametrize("h,w", [(16, 16), (32, 48), (64, 32)])
def test_restore_shape_conservation(h, w, weights, extractor):
    rng = np.random.default_rng(h * w)
    out = restore_forward(rng.random((h, w, 3)), rng.random((h, w, 3)), rng.random((h, w, 1)),
                          extractor, weights)
    assert out.shape == (h, w, 3)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_residual_identity_property(seed):
    weights, extractor = init_weights(0, discriminators=False), make_test_extractor(0)
    rng = np.random.default_rng(seed)
    deg = rng.random((16, 32, 3))
    out = restore_forward(deg, rng.random((16, 32, 3)), rng.random((16, 32, 1)), extractor,
                          zero_residual(weights))
    np.testing.assert_array_equal(out, np.clip(deg, 0, 1))


def test_restore_rejects_bad_sizes(weights, extractor):
    x = np.zeros((24, 32, 3))
    with pytest.raises(ShapeMismatch):
        restore_forward(x, x, x[:, :, :1], extractor, weights)
    y = np.zeros((32, 32, 3))
    with pytest.raises(ShapeMismatch):
        restore_forward(y, np.zeros((16, 16, 3)), y[:, :, :1], extractor, weights)


def test_restore_missing_weight(weights, extractor):
    partial = WeightStore({k: v for k, v in weights.items() if not k.startswith("sft1.")})
    x = np.zeros((32, 32, 3))
    with pytest.raises(MissingWeight):
        restore_forward(x, x, x[:, :, :1], extractor, partial)


def test_init_weights_supports_wide_channels():
    store = init_weights(1, channels=(128, 256, 512, 512), discriminators=False, extractor=False)
    assert store["asff3.conv1.weight"].shape == (512, 1536, 3, 3)
    assert store["dec.up0.weight"].shape == (128, 256, 3, 3)


# ---------------------------------------------------------------- discriminators

def test_discriminator_scales(weights):
    img = np.random.default_rng(9).random((64, 64, 3))
    shapes = [s.shape for s in multiscale_scores(img, weights)]
    assert shapes == [(16, 16), (8, 8), (4, 4), (2, 2)]
    np.testing.assert_array_equal(discriminator_scores(img, weights, 2), multiscale_scores(img, weights)[1])
