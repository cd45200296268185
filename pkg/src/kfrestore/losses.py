"""Training losses as pure functions: reconstruction, perceptual, style, hinge adversarial."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NonFiniteInput, PyramidMismatch, ScaleCountMismatch, ShapeMismatch
from .fusion.ops import avg_pool

ADV_SCALES = (1, 2, 4, 8)


@dataclass(frozen=True)
class LossWeights:
    mse: float = 300.0
    perc: float = 10.0
    style: float = 1.0
    adv: float = 2.0
    adv_scales: tuple = (4.0, 2.0, 1.0, 1.0)    # for r = 1, 2, 4, 8

    def __post_init__(self):
        vals = (self.mse, self.perc, self.style, self.adv, *self.adv_scales)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if len(self.adv_scales) != len(ADV_SCALES):
            raise ScaleCountMismatch(f"need {len(ADV_SCALES)} per-scale adversarial weights")


@dataclass(frozen=True)
class LossBreakdown:
    mse: float
    perceptual: float
    style: float
    adversarial_g: float
    total: float
    adversarial_per_scale: tuple = field(default=(0.0, 0.0, 0.0, 0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adversarial_per_scale"] = list(self.adversarial_per_scale)
        return d


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse_loss(restored, gt):
    """Mean squared error and its gradient with respect to ``restored``."""
    r, g = _same_shape(restored, gt)
    diff = r - g
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _levels(pyr):
    return list(getattr(pyr, "levels", pyr))


def _paired_levels(a, b):
    la, lb = _levels(a), _levels(b)
    if len(la) != len(lb):
        raise PyramidMismatch(f"pyramids have {len(la)} and {len(lb)} levels")
    out = []
    for k, (x, y) in enumerate(zip(la, lb)):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise PyramidMismatch(f"level {k} shapes differ: {x.shape} vs {y.shape}")
        out.append((x, y))
    return out


def perceptual_loss(restored_pyr, gt_pyr) -> float:
    total = 0.0
    for x, y in _paired_levels(restored_pyr, gt_pyr):
        d = x - y
        total += float(np.sum(d * d)) / d.size
    return total


def gram(fmap) -> np.ndarray:
    """``C x C`` Gram matrix of a ``(C, H, W)`` feature map."""
    f = np.asarray(fmap, dtype=np.float64)
    flat = f.reshape(f.shape[0], -1)
    return flat @ flat.T


def style_loss(restored_pyr, gt_pyr) -> float:
    total = 0.0
    for x, y in _paired_levels(restored_pyr, gt_pyr):
        d = gram(x) - gram(y)
        total += float(np.sum(d * d)) / x.size
    return total


def downsample(image, r: int) -> np.ndarray:
    """``(H, W, C)`` image average-pooled by ``r``."""
    img = np.asarray(image, dtype=np.float64)
    return avg_pool(img.transpose(2, 0, 1), r).transpose(1, 2, 0)


def _check_scales(*score_lists):
    for s in score_lists:
        if len(s) != len(ADV_SCALES):
            raise ScaleCountMismatch(f"expected {len(ADV_SCALES)} scales, got {len(s)}")


def hinge_d_loss(real_scores: Sequence, fake_scores: Sequence) -> float:
    """Discriminator hinge loss summed over the four scales."""
    _check_scales(real_scores, fake_scores)
    total = 0.0
    for real, fake in zip(real_scores, fake_scores):
        total += _hinge_d(real, fake)
    return total


def _hinge_d(real, fake) -> float:
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    return 0.0 - (float(np.mean(np.minimum(0.0, -1.0 + real))) + float(np.mean(np.minimum(0.0, -1.0 - fake))))


def hinge_g_terms(fake_scores: Sequence, weights: LossWeights = LossWeights()) -> tuple:
    """Per-scale generator terms ``-lambda_r * mean(D_r(fake))``."""
    _check_scales(fake_scores)
    return tuple(-lam * float(np.mean(np.asarray(s, dtype=np.float64)))
                 for lam, s in zip(weights.adv_scales, fake_scores))


def hinge_g_loss(fake_scores: Sequence, weights: LossWeights = LossWeights()) -> float:
    return float(sum(hinge_g_terms(fake_scores, weights)))


def hinge_single_scale(real, fake):
    """Single-discriminator hinge losses ``(d_loss, g_loss)``."""
    return _hinge_d(real, fake), -float(np.mean(np.asarray(fake, dtype=np.float64)))


def total_loss(parts: Mapping, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Weighted combination of ``mse``, ``perceptual``, ``style`` and ``adversarial_g`` parts."""
    vals = {k: float(parts.get(k, 0.0)) for k in ("mse", "perceptual", "style", "adversarial_g")}
    per_scale = tuple(float(x) for x in parts.get("adversarial_per_scale", (0.0,) * len(ADV_SCALES)))
    if not all(math.isfinite(v) for v in (*vals.values(), *per_scale)):
        raise NonFiniteInput(f"non-finite loss part in {vals}")
    total = (weights.mse * vals["mse"] + weights.perc * vals["perceptual"]
             + weights.style * vals["style"] + weights.adv * vals["adversarial_g"])
    return LossBreakdown(total=total, adversarial_per_scale=per_scale, **vals)


def evaluate_losses(restored, gt, restored_pyr, gt_pyr, fake_scores,
                    weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Convenience: compute every part and combine."""
    mse, _ = mse_loss(restored, gt)
    terms = hinge_g_terms(fake_scores, weights)
    return total_loss({
        "mse": mse,
        "perceptual": perceptual_loss(restored_pyr, gt_pyr),
        "style": style_loss(restored_pyr, gt_pyr),
        "adversarial_g": sum(terms),
        "adversarial_per_scale": terms,
    }, weights)
