"""Restoration network forward pass and multi-scale patch discriminators.

Weight naming scheme (``C_k`` = extractor channels at level ``k``, level 0 is
factor 2, level 3 is factor 16)::

    enc.block{i}.conv{1,2}.{weight,bias}     C_3 -> C_3, 3x3, dilation (1,2,4,8)[i]
    dec.up{k}.{weight,bias}                  C_{k+1} -> C_k, 3x3, k = 2..0
    asff{k}.conv{1,2}.{weight,bias}          3C_k -> C_k -> C_k
    sft{k}.{alpha,beta}.conv{1,2}.{weight,bias}   C_k -> C_k -> C_k
    dec.final_up.{weight,bias}               C_0 -> C_0
    out.{weight,bias}                        C_0 -> 3 (the residual head)
    disc.r{r}.conv{i}.{weight,bias}          patch discriminator at scale r
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .extractor import FACTORS, FeatureExtractor, extractor_weights, image_to_chw
from .ops import adain, avg_pool, conv2d, leaky_relu, sft_modulate, sigmoid, spectral_normalize
from .weights import WeightStore

DILATIONS = (1, 2, 4, 8)
DISC_SCALES = (1, 2, 4, 8)
DISC_CHANNELS = (16, 32)
SN_POWER_ITERS = 20


def _conv(x, weights: WeightStore, name: str, dilation: int = 1, stride: int = 1):
    w = weights[f"{name}.weight"]
    b = weights[f"{name}.bias"] if f"{name}.bias" in weights else None
    pad = dilation * (w.shape[-1] // 2)
    return conv2d(x, w, b, stride=stride, dilation=dilation, padding=pad)


def asff_fuse(restored, guide_aligned, landmark_feats, weights: WeightStore, level: int):
    """Attention blend of restored and guidance features driven by landmark features."""
    r = np.asarray(restored, dtype=np.float64)
    g = np.asarray(guide_aligned, dtype=np.float64)
    lm = np.asarray(landmark_feats, dtype=np.float64)
    if r.shape != g.shape or r.shape[1:] != lm.shape[1:]:
        raise ShapeMismatch(f"ASFF inputs differ: {r.shape}, {g.shape}, {lm.shape}")
    h = np.concatenate([r, g, lm], axis=0)
    h = leaky_relu(_conv(h, weights, f"asff{level}.conv1"))
    mask = sigmoid(_conv(h, weights, f"asff{level}.conv2"))
    if mask.shape != r.shape:
        raise ShapeMismatch(f"ASFF mask {mask.shape} does not match features {r.shape}")
    return g * mask + r * (1.0 - mask)


def sft_params(fused, weights: WeightStore, level: int):
    branches = []
    for which in ("alpha", "beta"):
        h = leaky_relu(_conv(fused, weights, f"sft{level}.{which}.conv1"))
        branches.append(_conv(h, weights, f"sft{level}.{which}.conv2"))
    return tuple(branches)


def decode_residual(deg_pyr, ref_pyr, lm_pyr, weights: WeightStore) -> np.ndarray:
    """Decoder output (3, H, W) before the skip connection."""
    top = len(FACTORS) - 1
    x = deg_pyr[top]
    for i, d in enumerate(DILATIONS):
        h = leaky_relu(_conv(x, weights, f"enc.block{i}.conv1", dilation=d))
        x = x + _conv(h, weights, f"enc.block{i}.conv2", dilation=d)
    for k in range(top, -1, -1):
        if k < top:
            x = leaky_relu(_conv(np.repeat(np.repeat(x, 2, 1), 2, 2), weights, f"dec.up{k}"))
        if x.shape != deg_pyr[k].shape:
            raise ShapeMismatch(f"decoder level {k}: {x.shape} vs features {deg_pyr[k].shape}")
        guide = adain(ref_pyr[k], deg_pyr[k])
        fused = asff_fuse(x, guide, lm_pyr[k], weights, k)
        alpha, beta = sft_params(fused, weights, k)
        x = sft_modulate(x, alpha, beta)
    x = leaky_relu(_conv(np.repeat(np.repeat(x, 2, 1), 2, 2), weights, "dec.final_up"))
    return _conv(x, weights, "out")


def restore_forward(degraded, warped_ref, landmark_mask, extractor: FeatureExtractor,
                    weights: WeightStore, return_residual: bool = False):
    """Restore ``degraded`` given the warped reference and the landmark mask.

    Returns ``clip(degraded + residual, 0, 1)`` as an ``(H, W, 3)`` array.
    Height and width must be multiples of 16.
    """
    deg = np.asarray(degraded, dtype=np.float64)
    ref = np.asarray(warped_ref, dtype=np.float64)
    lm = np.asarray(landmark_mask, dtype=np.float64)
    if deg.ndim != 3 or deg.shape[2] != 3:
        raise ShapeMismatch(f"degraded image must be (H, W, 3), got {deg.shape}")
    if ref.shape != deg.shape or lm.shape[:2] != deg.shape[:2]:
        raise ShapeMismatch(f"input sizes differ: {deg.shape}, {ref.shape}, {lm.shape}")
    h, w = deg.shape[:2]
    if h % 16 or w % 16:
        raise ShapeMismatch(f"image size {h}x{w} is not a multiple of 16")
    residual = decode_residual(extractor.extract(deg), extractor.extract(ref),
                               extractor.extract(lm), weights)
    residual = residual.transpose(1, 2, 0)
    out = np.clip(deg + residual, 0.0, 1.0)
    return (out, residual) if return_residual else out


# ----------------------------------------------------------------------------
# discriminators

def discriminator_scores(image, weights: WeightStore, scale: int = 1, power_iters: int = SN_POWER_ITERS):
    """Patch scores of the scale-``scale`` discriminator on ``image`` average-pooled by ``scale``.

    Every conv weight is spectrally normalized before use.
    """
    x = avg_pool(image_to_chw(image), scale)
    n_layers = len(DISC_CHANNELS) + 1
    for i in range(n_layers):
        name = f"disc.r{scale}.conv{i}"
        w_sn, _ = spectral_normalize(weights[f"{name}.weight"], power_iters)
        stride = 2 if i < n_layers - 1 else 1
        x = conv2d(x, w_sn, weights[f"{name}.bias"], stride=stride, padding=1)
        if i < n_layers - 1:
            x = leaky_relu(x)
    return x[0]


def multiscale_scores(image, weights: WeightStore, scales=DISC_SCALES):
    return [discriminator_scores(image, weights, r) for r in scales]


# ----------------------------------------------------------------------------
# initialization

def init_weights(seed: int = 0, channels=None, extractor: bool = True,
                 discriminators: bool = True) -> WeightStore:
    """Seeded weight store covering every name the forward pass reads."""
    from .extractor import TEST_CHANNELS
    channels = tuple(channels or TEST_CHANNELS)
    rng = np.random.default_rng(seed)
    store = extractor_weights(seed, channels) if extractor else WeightStore()

    def conv(name, c_out, c_in, k=3, gain=1.0, bias=0.0):
        std = gain * np.sqrt(2.0 / (c_in * k * k))
        store[f"{name}.weight"] = rng.normal(0.0, std, (c_out, c_in, k, k))
        store[f"{name}.bias"] = np.full(c_out, bias)

    c_top = channels[-1]
    for i in range(len(DILATIONS)):
        conv(f"enc.block{i}.conv1", c_top, c_top, gain=0.5)
        conv(f"enc.block{i}.conv2", c_top, c_top, gain=0.5)
    for k in range(len(channels) - 1, -1, -1):
        if k < len(channels) - 1:
            conv(f"dec.up{k}", channels[k], channels[k + 1])
        c = channels[k]
        conv(f"asff{k}.conv1", c, 3 * c, gain=0.5)
        conv(f"asff{k}.conv2", c, c, gain=0.5)
        conv(f"sft{k}.alpha.conv1", c, c, gain=0.5)
        conv(f"sft{k}.alpha.conv2", c, c, gain=0.1, bias=1.0)
        conv(f"sft{k}.beta.conv1", c, c, gain=0.5)
        conv(f"sft{k}.beta.conv2", c, c, gain=0.1)
    conv("dec.final_up", channels[0], channels[0])
    conv("out", 3, channels[0], gain=0.1)
    if discriminators:
        for r in DISC_SCALES:
            c_in = 3
            for i, c in enumerate(DISC_CHANNELS + (1,)):
                conv(f"disc.r{r}.conv{i}", c, c_in)
                c_in = c
    return store


def zero_residual(weights: WeightStore) -> WeightStore:
    """Copy of ``weights`` whose residual head outputs exactly zero."""
    out = weights.copy()
    out["out.weight"] = np.zeros_like(weights["out.weight"])
    out["out.bias"] = np.zeros_like(weights["out.bias"])
    return out
