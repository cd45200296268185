"""Synthetic talking-face streams for tests, demos and policy experiments.

Faces are rendered from landmarks (coloured blobs over a skin ellipse), so
every frame has exact ground-truth landmarks. Non-keyframes are degraded with
block averaging plus noise to mimic heavy compression.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import geometry as geo

MOUTH = slice(48, 68)
BROWS = slice(17, 27)


def pose_landmarks(t: float, frame_size: int, rng=None, jitter: float = 0.0,
                   mouth_open: float | None = None) -> np.ndarray:
    """Template face posed at time ``t`` inside a ``frame_size`` square frame."""
    base = geo.load_template(geo.TEMPLATE_FRAME) - geo.TEMPLATE_FRAME / 2.0
    pts = base.copy()
    mouth_open = 0.5 + 0.5 * np.sin(0.9 * t) if mouth_open is None else mouth_open
    mc = pts[MOUTH].mean(axis=0)
    pts[MOUTH, 1] = mc[1] + (pts[MOUTH, 1] - mc[1]) * (1.0 + 1.5 * mouth_open)
    pts[BROWS, 1] -= 12.0 * np.sin(0.37 * t) ** 2
    angle = 0.12 * np.sin(0.23 * t)
    scale = 0.62 * frame_size / geo.TEMPLATE_FRAME * (1.0 + 0.05 * np.sin(0.11 * t))
    c, s = np.cos(angle) * scale, np.sin(angle) * scale
    rot = np.array([[c, s], [-s, c]])
    shift = frame_size / 2.0 + np.array([2.0 * np.sin(0.31 * t), 1.5 * np.cos(0.17 * t)])
    out = pts @ rot + shift
    if jitter and rng is not None:
        out = out + rng.normal(0.0, jitter, out.shape)
    return out


def render_face(lms, size: int) -> np.ndarray:
    """Render a ``size`` x ``size`` RGB face image from 68 landmarks."""
    lms = np.asarray(lms, dtype=np.float64)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((size, size, 3))
    img[..., 0] = 0.25 + 0.2 * xs / size
    img[..., 1] = 0.3 + 0.15 * ys / size
    img[..., 2] = 0.45
    center = lms.mean(axis=0)
    spread = np.maximum(lms.std(axis=0) * 2.1, 1.0)
    skin = np.exp(-(((xs - center[0]) / spread[0]) ** 2 + ((ys - center[1]) / spread[1]) ** 2) ** 2)
    img = img * (1 - skin[..., None]) + np.array([0.85, 0.65, 0.55]) * skin[..., None]
    hue = np.linspace(0.0, 2 * np.pi, len(lms), endpoint=False)
    colors = 0.5 + 0.4 * np.stack([np.cos(hue), np.cos(hue + 2.1), np.cos(hue + 4.2)], axis=1)
    sigma2 = (0.012 * size) ** 2 + 1.0
    d2 = (xs[..., None] - lms[:, 0]) ** 2 + (ys[..., None] - lms[:, 1]) ** 2
    blobs = np.exp(-d2 / (2 * sigma2))                      # (H, W, N)
    weight = np.clip(blobs.sum(axis=-1, keepdims=True), 0.0, 1.0)
    color = (blobs @ colors) / np.maximum(blobs.sum(axis=-1, keepdims=True), 1e-12)
    img = img * (1 - weight) + color * weight
    return np.clip(img, 0.0, 1.0)


def degrade(img, rng, block: int = 8, mix: float = 0.5, noise: float = 0.02) -> np.ndarray:
    """Blocky, noisy version of ``img``."""
    h, w = img.shape[:2]
    hb, wb = -(-h // block) * block, -(-w // block) * block
    padded = np.pad(img, ((0, hb - h), (0, wb - w), (0, 0)), mode="edge")
    means = padded.reshape(hb // block, block, wb // block, block, -1).mean(axis=(1, 3))
    blocky = np.repeat(np.repeat(means, block, axis=0), block, axis=1)[:h, :w]
    out = (1 - mix) * img + mix * blocky + rng.normal(0.0, noise, img.shape)
    return np.clip(out, 0.0, 1.0)


def make_synthetic_stream(out_dir, n_frames: int = 30, keyframes=(0, 10, 20), frame_size: int = 96,
                          seed: int = 0, landmarks=None, with_gt: bool = True) -> Path:
    """Write images, landmark files and ``manifest.jsonl`` for a synthetic stream.

    ``landmarks`` optionally fixes the per-frame landmark sets (a sequence of
    ``(68, 2)`` arrays); otherwise a smoothly moving face is generated.
    Returns the manifest path.
    """
    from .pipeline import FrameRecord, write_image, write_manifest

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    keyset = set(keyframes)
    records = []
    for i in range(n_frames):
        lms = (np.asarray(landmarks[i], dtype=np.float64) if landmarks is not None
               else pose_landmarks(float(i), frame_size, rng, jitter=0.3))
        clean = render_face(lms, frame_size)
        lm_path = out / f"{i:06d}.lm.txt"
        geo.write_landmarks(lm_path, lms)
        img_path = out / f"{i:06d}.png"
        gt_path = None
        if i in keyset:
            write_image(img_path, clean)
        else:
            write_image(img_path, degrade(clean, rng))
            if with_gt:
                gt_path = out / f"{i:06d}.gt.png"
                write_image(gt_path, clean)
        records.append(FrameRecord(i, img_path, lm_path, i in keyset, gt_path))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


def landmark_stream(n_frames: int, keyframe_every: int = 10, frame_size: int = 256, seed: int = 0):
    """In-memory ``FrameRecord`` list with preloaded landmarks (no images)."""
    from .pipeline import FrameRecord

    rng = np.random.default_rng(seed)
    return [FrameRecord(i, None, None, i % keyframe_every == 0, None,
                        pose_landmarks(float(i), frame_size, rng, jitter=0.5))
            for i in range(n_frames)]
