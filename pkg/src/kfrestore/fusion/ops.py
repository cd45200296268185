"""Minimal tensor ops on ``(C, H, W)`` feature maps."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, ZeroMatrix

ADAIN_EPS = 1e-5


def _fmap(x, name="input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"{name} must be (C, H, W), got shape {x.shape}")
    return x


def conv2d(x, kernel, bias=None, stride: int = 1, dilation: int = 1, padding: int = 0) -> np.ndarray:
    """Zero-padded 2-D cross-correlation.

    ``kernel`` is ``(C_out, C_in, kh, kw)``. Output size per axis is
    ``floor((H + 2p - d(k-1) - 1) / s) + 1``.
    """
    x = _fmap(x)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 4 or k.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"kernel {k.shape} incompatible with input channels {x.shape[0]}")
    c_out, _, kh, kw = k.shape
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("stride/dilation must be >= 1 and padding >= 0")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    _, hp, wp = x.shape
    oh = (hp - dilation * (kh - 1) - 1) // stride + 1
    ow = (wp - dilation * (kw - 1) - 1) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeMismatch("kernel footprint exceeds padded input")
    out = np.zeros((c_out, oh, ow))
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            patch = x[:, r0:r0 + stride * (oh - 1) + 1:stride, c0:c0 + stride * (ow - 1) + 1:stride]
            out += np.tensordot(k[:, :, i, j], patch, axes=(1, 0))
    if bias is not None:
        b = np.asarray(bias, dtype=np.float64).reshape(-1)
        if b.shape[0] != c_out:
            raise ShapeMismatch(f"bias length {b.shape[0]} != output channels {c_out}")
        out += b[:, None, None]
    return out


def leaky_relu(x, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def relu(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def upsample2(x) -> np.ndarray:
    """Nearest-neighbour x2 upsampling."""
    return np.repeat(np.repeat(_fmap(x), 2, axis=1), 2, axis=2)


def avg_pool(x, factor: int) -> np.ndarray:
    """Non-overlapping ``factor`` x ``factor`` mean pooling over the last two axes (floors odd sizes)."""
    x = np.asarray(x, dtype=np.float64)
    if factor == 1:
        return x.copy()
    h, w = x.shape[-2] // factor, x.shape[-1] // factor
    if h == 0 or w == 0:
        raise ShapeMismatch(f"input {x.shape} too small for pooling factor {factor}")
    x = x[..., : h * factor, : w * factor]
    return x.reshape(*x.shape[:-2], h, factor, w, factor).mean(axis=(-3, -1))


def channel_stats(x):
    """Per-channel population mean and standard deviation over spatial dims."""
    x = _fmap(x)
    mu = x.mean(axis=(1, 2))
    sd = np.sqrt(((x - mu[:, None, None]) ** 2).mean(axis=(1, 2)))
    return mu, sd


def adain(guide, degraded, eps: float = ADAIN_EPS) -> np.ndarray:
    """Re-standardize ``guide`` to the per-channel mean/std of ``degraded``.

    The guide's std is regularized as ``sqrt(var + eps^2)`` so constant
    channels map to the degraded mean instead of NaN.
    """
    g = _fmap(guide, "guide")
    d = _fmap(degraded, "degraded")
    if g.shape != d.shape:
        raise ShapeMismatch(f"guide {g.shape} and degraded {d.shape} differ")
    mu_g, sd_g = channel_stats(g)
    mu_d, sd_d = channel_stats(d)
    sd_g = np.sqrt(sd_g * sd_g + eps * eps)
    return sd_d[:, None, None] * (g - mu_g[:, None, None]) / sd_g[:, None, None] + mu_d[:, None, None]


def sft_modulate(restored, alpha, beta) -> np.ndarray:
    r = _fmap(restored, "restored")
    a = _fmap(alpha, "alpha")
    b = _fmap(beta, "beta")
    if not (r.shape == a.shape == b.shape):
        raise ShapeMismatch(f"SFT operands differ: {r.shape}, {a.shape}, {b.shape}")
    return a * r + b


def spectral_normalize(weight, power_iters: int = 1, seed: int = 0):
    """Divide ``weight`` by its largest singular value estimated by power iteration.

    Tensors of rank > 2 are treated as ``(shape[0], prod(shape[1:]))``
    matrices. Returns ``(normalized, sigma)``.
    """
    w = np.asarray(weight, dtype=np.float64)
    if power_iters < 1:
        raise ValueError("power_iters must be >= 1")
    mat = w.reshape(w.shape[0], -1) if w.ndim != 2 else w
    if not np.any(mat):
        raise ZeroMatrix("cannot spectrally normalize an all-zero matrix")
    v = np.random.default_rng(seed).standard_normal(mat.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(power_iters):
        u = mat @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            # start vector fell into the null space
            v = np.ones(mat.shape[1]) / np.sqrt(mat.shape[1])
            continue
        v = mat.T @ (u / nu)
        v /= np.linalg.norm(v)
    sigma = float(np.linalg.norm(mat @ v))
    if sigma == 0.0:
        raise ZeroMatrix("power iteration collapsed to zero")
    return w / sigma, sigma
