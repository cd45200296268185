"""Regenerate the canonical 68-point template shipped in kfrestore/data.

The layout follows the iBUG 68-point ordering (jaw, brows, nose, eyes, mouth)
inside a 512x512 crop. Coordinates are a synthetic mean face, not fitted to
any dataset.
"""
import math
from pathlib import Path

import numpy as np


def _arc(cx, cy, rx, ry, t0, t1, n):
    ts = np.linspace(t0, t1, n)
    return np.stack([cx + rx * np.cos(ts), cy + ry * np.sin(ts)], axis=1)


def _ring(cx, cy, rx, ry, n, start):
    ts = start + np.arange(n) * 2 * math.pi / n
    return np.stack([cx + rx * np.cos(ts), cy + ry * np.sin(ts)], axis=1)


def mean_face():
    jaw = _arc(256, 236, 168, 196, math.pi, 0.0, 17)
    brow_r = _arc(190, 190, 50, 22, math.pi + 0.2, 2 * math.pi - 0.2, 5)
    brow_l = _arc(322, 190, 50, 22, math.pi + 0.2, 2 * math.pi - 0.2, 5)
    bridge = np.stack([np.full(4, 256.0), np.linspace(222, 300, 4)], axis=1)
    nostrils = np.stack([np.linspace(226, 286, 5), [318, 323, 326, 323, 318]], axis=1)
    # eyes: outer corner first, then upper lid, inner corner, lower lid
    eye_r = _ring(190, 236, 30, 11, 6, math.pi)
    eye_l = _ring(322, 236, 30, 11, 6, math.pi)
    mouth_outer = _ring(256, 380, 58, 28, 12, math.pi)
    mouth_inner = _ring(256, 380, 40, 10, 8, math.pi)
    pts = np.concatenate(
        [jaw, brow_r, brow_l, bridge, nostrils, eye_r, eye_l, mouth_outer, mouth_inner]
    )
    assert pts.shape == (68, 2)
    return pts


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "kfrestore" / "data" / "template_68.txt"
    np.savetxt(out, mean_face(), fmt="%.4f")
    print(f"wrote {out}")
