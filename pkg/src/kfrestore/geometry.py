"""Landmark geometry: MLS deformation, warping, alignment, landmark masks.

Conventions used throughout the package:

* landmark sets are ``(N, 2)`` float arrays of ``(x, y)`` pixel coordinates,
  origin top-left, x rightward, y downward (``N`` is 68 for real faces);
* images are ``(H, W, C)`` float arrays in ``[0, 1]`` with ``C`` in {1, 3};
* pixel ``(x, y)`` has its center at integer coordinates.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DegenerateLandmarks, DimensionMismatch, LengthMismatch, ParseError

N_LANDMARKS = 68
TEMPLATE_FRAME = 512
SNAP_RADIUS = 1e-8
# relative to trace(A)^2; below this the weighted covariance is treated as singular
_SINGULAR_RTOL = 1e-12
_CHUNK = 8192


def as_landmarks(points, n: int | None = N_LANDMARKS) -> np.ndarray:
    """Validate and return landmarks as a float64 ``(N, 2)`` array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise LengthMismatch(f"landmarks must have shape (N, 2), got {pts.shape}")
    if n is not None and pts.shape[0] != n:
        raise LengthMismatch(f"expected {n} landmarks, got {pts.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("landmarks contain non-finite coordinates")
    return pts


def as_image(img) -> np.ndarray:
    """Validate and return an image as a float64 ``(H, W, C)`` array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3) or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionMismatch(f"image must be (H, W, 1|3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image samples must be finite and within [0, 1]")
    return arr


# ----------------------------------------------------------------------------
# landmark files

def read_landmarks(path, n: int | None = N_LANDMARKS) -> np.ndarray:
    """Read a landmark file: one ``x y`` pair per line."""
    text = Path(path).read_text()
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if n is not None and len(rows) != n:
        raise ParseError(f"{path}: expected {n} landmark lines, found {len(rows)}")
    try:
        vals = np.array(" ".join(rows).split(), dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if vals.size != 2 * len(rows):
        for i, ln in enumerate(rows, 1):
            if len(ln.split()) != 2:
                raise ParseError(f"{path}: expected 'x y'", line=i)
    pts = vals.reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ParseError(f"{path}: non-finite coordinate")
    return pts


def write_landmarks(path, points) -> None:
    pts = as_landmarks(points, n=None)
    Path(path).write_text("".join(f"{x!r} {y!r}\n" for x, y in pts.tolist()))


def load_template(size: int = TEMPLATE_FRAME) -> np.ndarray:
    """The canonical mean 68-point face, scaled to a ``size`` x ``size`` crop."""
    ref = resources.files("kfrestore") / "data" / "template_68.txt"
    with resources.as_file(ref) as p:
        pts = read_landmarks(p)
    return pts * (size / TEMPLATE_FRAME)


# ----------------------------------------------------------------------------
# moving least squares (affine variant)

def mls_deform(points, p, q) -> np.ndarray:
    """Evaluate the affine MLS deformation ``f`` at many points at once.

    ``p`` are the source landmarks and ``q`` their targets. Returns an array
    shaped like ``points``. Points closer than ``SNAP_RADIUS`` to a source
    landmark map directly onto the corresponding target.
    """
    p = as_landmarks(p, n=None)
    q = as_landmarks(q, n=None)
    if p.shape != q.shape:
        raise LengthMismatch(f"source/target landmark counts differ: {len(p)} vs {len(q)}")
    if len(p) < 3:
        raise DegenerateLandmarks("affine MLS needs at least 3 landmarks")
    v = np.asarray(points, dtype=np.float64)
    shape = v.shape
    v = v.reshape(-1, 2)
    if len(v) > _CHUNK:
        parts = [_mls_chunk(v[i:i + _CHUNK], p, q) for i in range(0, len(v), _CHUNK)]
        return np.concatenate(parts).reshape(shape)
    return _mls_chunk(v, p, q).reshape(shape)


def _mls_chunk(v, p, q):
    diff = p[None, :, :] - v[:, None, :]                     # (K, N, 2)
    d2 = np.einsum("kni,kni->kn", diff, diff)
    nearest = np.argmin(d2, axis=1)
    snapped = d2[np.arange(len(v)), nearest] < SNAP_RADIUS ** 2
    with np.errstate(divide="ignore"):
        w = 1.0 / np.where(snapped[:, None], 1.0, d2)        # (K, N)

    wsum = w.sum(axis=1, keepdims=True)
    # einsum rather than BLAS matmul: results must not depend on the chunking
    p_star = np.einsum("kn,ni->ki", w, p) / wsum             # (K, 2)
    q_star = np.einsum("kn,ni->ki", w, q) / wsum
    p_hat = p[None] - p_star[:, None]                        # (K, N, 2)
    q_hat = q[None] - q_star[:, None]
    A = np.einsum("kn,kni,knj->kij", w, p_hat, p_hat)        # sum p_hat^T w p_hat
    B = np.einsum("kn,kni,knj->kij", w, p_hat, q_hat)

    det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    tr = A[:, 0, 0] + A[:, 1, 1]
    bad = (np.abs(det) <= _SINGULAR_RTOL * tr * tr) & ~snapped
    if np.any(bad):
        raise DegenerateLandmarks("weighted landmark covariance is singular (collinear landmarks?)")
    det = np.where(snapped, 1.0, det)
    A_inv = np.empty_like(A)
    A_inv[:, 0, 0] = A[:, 1, 1]
    A_inv[:, 1, 1] = A[:, 0, 0]
    A_inv[:, 0, 1] = -A[:, 0, 1]
    A_inv[:, 1, 0] = -A[:, 1, 0]
    A_inv /= det[:, None, None]
    M = np.einsum("kij,kjl->kil", A_inv, B)
    out = np.einsum("ki,kij->kj", v - p_star, M) + q_star
    if np.any(snapped):
        out[snapped] = q[nearest[snapped]]
    return out


def mls_deform_point(v, p, q) -> np.ndarray:
    """``f(v)`` for a single point ``v``; see :func:`mls_deform`."""
    return mls_deform(np.asarray(v, dtype=np.float64).reshape(1, 2), p, q)[0]


@dataclass(frozen=True)
class DeformationField:
    """Backward map: ``offsets[y, x]`` is the source ``(x, y)`` sampled for output pixel ``(x, y)``."""

    width: int
    height: int
    offsets: np.ndarray

    def __post_init__(self):
        if self.offsets.shape != (self.height, self.width, 2):
            raise DimensionMismatch(
                f"offsets shape {self.offsets.shape} != {(self.height, self.width, 2)}"
            )

    @classmethod
    def identity(cls, width: int, height: int) -> "DeformationField":
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(width, height, np.stack([xs, ys], axis=-1))

    @classmethod
    def constant_shift(cls, width: int, height: int, dx: float, dy: float) -> "DeformationField":
        f = cls.identity(width, height)
        return cls(width, height, f.offsets + np.array([dx, dy]))


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("KFR_THREADS", "1")))
    except ValueError:
        return 1


def mls_build_field(p, q, width: int, height: int, grid_step: int = 4) -> DeformationField:
    """Backward-mapping field that warps an image with landmarks ``p`` onto landmarks ``q``.

    Each output pixel ``u`` samples the source at ``f(u)`` where ``f`` is the
    MLS deformation from ``q`` to ``p``. MLS is evaluated on a lattice of
    spacing ``grid_step`` and bilinearly interpolated in between.
    """
    if width <= 0 or height <= 0:
        raise DimensionMismatch("field dimensions must be positive")
    if grid_step < 1:
        raise ValueError("grid_step must be >= 1")
    p = as_landmarks(p, n=None)
    q = as_landmarks(q, n=None)
    if p.shape == q.shape and np.array_equal(p, q):
        # f is the identity exactly; skip the rounding of the closed form
        return DeformationField.identity(width, height)
    # lattice covers the canvas; the last node may sit past the border
    gx = np.arange(-(-(width - 1) // grid_step) + 1, dtype=np.float64) * grid_step
    gy = np.arange(-(-(height - 1) // grid_step) + 1, dtype=np.float64) * grid_step
    nodes = np.stack(np.meshgrid(gx, gy), axis=-1)           # (GH, GW, 2)

    n_threads = min(_thread_count(), len(gy))
    if n_threads > 1:
        chunks = np.array_split(nodes, n_threads, axis=0)
        with ThreadPoolExecutor(n_threads) as pool:
            vals = np.concatenate(list(pool.map(lambda c: mls_deform(c, q, p), chunks)), axis=0)
    else:
        vals = mls_deform(nodes, q, p)

    if grid_step == 1:
        return DeformationField(width, height, vals)

    xs = np.arange(width) / grid_step
    ys = np.arange(height) / grid_step
    x0 = np.minimum(np.floor(xs).astype(int), len(gx) - 2) if len(gx) > 1 else np.zeros(width, int)
    y0 = np.minimum(np.floor(ys).astype(int), len(gy) - 2) if len(gy) > 1 else np.zeros(height, int)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    x1 = np.minimum(x0 + 1, len(gx) - 1)
    y1 = np.minimum(y0 + 1, len(gy) - 1)
    v00 = vals[y0][:, x0]
    v01 = vals[y0][:, x1]
    v10 = vals[y1][:, x0]
    v11 = vals[y1][:, x1]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return DeformationField(width, height, top + fy * (bot - top))


def warp_image(src, field: DeformationField) -> np.ndarray:
    """Bilinearly resample ``src`` at the field's source coordinates, clamping to the border."""
    img = np.asarray(src, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.size == 0:
        raise DimensionMismatch("src must be a non-empty (H, W, C) image")
    if field.offsets.shape != (field.height, field.width, 2):
        raise DimensionMismatch("field offsets do not match its declared size")
    h, w = img.shape[:2]
    x = np.clip(field.offsets[..., 0], 0.0, w - 1)
    y = np.clip(field.offsets[..., 1], 0.0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    out = top + fy * (bot - top)
    # lerp rounding can overshoot by an ulp
    return np.clip(out, img.min(), img.max())


# ----------------------------------------------------------------------------
# distances, alignment, masks

def landmark_distance(a, b) -> float:
    """Euclidean distance between two landmark sets viewed as flat vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"landmark sets differ in shape: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sqrt(np.sum(d * d)))


@dataclass(frozen=True)
class SimilarityTransform:
    """``(x, y) -> (a x - b y + tx, b x + a y + ty)``."""

    a: float
    b: float
    tx: float
    ty: float

    @property
    def scale(self) -> float:
        return float(np.hypot(self.a, self.b))

    @property
    def rotation(self) -> float:
        return float(np.arctan2(self.b, self.a))

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, self.tx, self.ty])

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, -self.b, self.tx], [self.b, self.a, self.ty], [0.0, 0.0, 1.0]])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([self.a * x - self.b * y + self.tx, self.b * x + self.a * y + self.ty], axis=-1)

    def inverse(self) -> "SimilarityTransform":
        s2 = self.a * self.a + self.b * self.b
        ia, ib = self.a / s2, -self.b / s2
        return SimilarityTransform(ia, ib, -(ia * self.tx - ib * self.ty), -(ib * self.tx + ia * self.ty))


def fit_similarity(src, dst) -> SimilarityTransform:
    """Least-squares similarity transform mapping ``src`` points onto ``dst``."""
    src = as_landmarks(src, n=None)
    dst = as_landmarks(dst, n=None)
    if src.shape != dst.shape:
        raise LengthMismatch("point sets differ in length")
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    s = src - sc
    d = dst - dc
    denom = np.sum(s * s)
    if denom <= 1e-12 * max(1.0, np.sum(src * src)):
        raise DegenerateLandmarks("source points coincide")
    # collinear clouds make the rotation ill-determined
    cov = s.T @ s
    if np.linalg.det(cov) <= 1e-12 * np.trace(cov) ** 2:
        raise DegenerateLandmarks("source landmarks are collinear")
    a = np.sum(s[:, 0] * d[:, 0] + s[:, 1] * d[:, 1]) / denom
    b = np.sum(s[:, 0] * d[:, 1] - s[:, 1] * d[:, 0]) / denom
    tx = dc[0] - (a * sc[0] - b * sc[1])
    ty = dc[1] - (b * sc[0] + a * sc[1])
    return SimilarityTransform(float(a), float(b), float(tx), float(ty))


def similarity_crop(img, transform: SimilarityTransform, out_w: int, out_h: int | None = None) -> np.ndarray:
    """Resample ``img`` into an ``out_w`` x ``out_h`` canvas under ``transform`` (source -> canvas)."""
    out_h = out_w if out_h is None else out_h
    ident = DeformationField.identity(out_w, out_h)
    src_coords = transform.inverse().apply(ident.offsets)
    return warp_image(img, DeformationField(out_w, out_h, src_coords))


def align_face(img, lms, template, out_size: int = TEMPLATE_FRAME):
    """Crop and align a face so its landmarks best match ``template``.

    Returns ``(crop, aligned_landmarks)``; ``template`` lives in the
    ``out_size`` x ``out_size`` output frame.
    """
    img = as_image(img)
    lms = as_landmarks(lms, n=None)
    tform = fit_similarity(lms, template)
    return similarity_crop(img, tform, out_size), tform.apply(lms)


def render_landmark_mask(lms, width: int, height: int, radius: float = 1.0) -> np.ndarray:
    """Single-channel binary image, white within ``radius`` of any landmark."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    mask = np.zeros((height, width, 1), dtype=np.float64)
    r2 = radius * radius
    for lx, ly in np.asarray(lms, dtype=np.float64).reshape(-1, 2):
        x_lo, x_hi = max(int(np.ceil(lx - radius)), 0), min(int(np.floor(lx + radius)), width - 1)
        y_lo, y_hi = max(int(np.ceil(ly - radius)), 0), min(int(np.floor(ly + radius)), height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
        inside = (xs - lx) ** 2 + (ys - ly) ** 2 <= r2
        mask[ys[inside], xs[inside], 0] = 1.0
    return mask
