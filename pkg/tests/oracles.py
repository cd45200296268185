"""Independent reference computations used by the test-suite.

These are deliberately slow and literal; none of them call into the
vectorized implementations they check.
"""
import itertools
import math

import numpy as np


def mls_weighted_ls(v, p, q):
    """Affine MLS at ``v`` by solving the 6-parameter weighted LS problem with lstsq."""
    v = np.asarray(v, dtype=float)
    rows, rhs, w = [], [], []
    for (px, py), (qx, qy) in zip(p, q):
        wi = 1.0 / ((px - v[0]) ** 2 + (py - v[1]) ** 2)
        # l(x) = [x y 1] @ T with T a 3x2 matrix, unknowns ordered column-major
        rows.append([px, py, 1.0, 0, 0, 0]); rhs.append(qx); w.append(wi)
        rows.append([0, 0, 0, px, py, 1.0]); rhs.append(qy); w.append(wi)
    sw = np.sqrt(np.array(w))
    A = np.array(rows) * sw[:, None]
    b = np.array(rhs) * sw
    t, *_ = np.linalg.lstsq(A, b, rcond=None)
    return np.array([t[0] * v[0] + t[1] * v[1] + t[2], t[3] * v[0] + t[4] * v[1] + t[5]])


def similarity_ls(src, dst):
    """``(a, b, tx, ty)`` solving the similarity fit through the normal equations."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, -y, 1.0, 0.0]); rhs.append(u)
        rows.append([y, x, 0.0, 1.0]); rhs.append(v)
    A = np.array(rows)
    b = np.array(rhs)
    return np.linalg.solve(A.T @ A, A.T @ b)


def conv2d_naive(x, k, bias=None, stride=1, dilation=1, padding=0):
    """Six nested loops over output channel, row, column, input channel, kernel row, kernel column."""
    c_in, h, w = x.shape
    c_out, _, kh, kw = k.shape
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((c_out, oh, ow))
    xl = x.tolist()
    kl = k.tolist()
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(c_in):
                    for a in range(kh):
                        r = i * stride + a * dilation - padding
                        if r < 0 or r >= h:
                            continue
                        for b in range(kw):
                            s = j * stride + b * dilation - padding
                            if 0 <= s < w:
                                acc += xl[c][r][s] * kl[o][c][a][b]
                out[o, i, j] = acc
    return out


def moments(values):
    """Two-pass population mean and std of a flat sequence."""
    vals = [float(v) for v in values]
    mu = sum(vals) / len(vals)
    var = sum((v - mu) ** 2 for v in vals) / len(vals)
    return mu, math.sqrt(var)


def gram_loops(f):
    c, h, w = f.shape
    g = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            g[i, j] = sum(f[i, y, x] * f[j, y, x] for y in range(h) for x in range(w))
    return g


def ssim_windowed(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, luma=(0.299, 0.587, 0.114)):
    """SSIM by explicitly visiting every window position."""
    ya = np.tensordot(a, luma, axes=([2], [0])) if a.ndim == 3 else a
    yb = np.tensordot(b, luma, axes=([2], [0])) if b.ndim == 3 else b
    half = (window - 1) / 2.0
    g1 = [math.exp(-((i - half) ** 2) / (2 * sigma ** 2)) for i in range(window)]
    s = sum(g1)
    g = [[g1[i] * g1[j] / (s * s) for j in range(window)] for i in range(window)]
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for y0 in range(ya.shape[0] - window + 1):
        for x0 in range(ya.shape[1] - window + 1):
            ma = mb = 0.0
            for i in range(window):
                for j in range(window):
                    ma += g[i][j] * ya[y0 + i, x0 + j]
                    mb += g[i][j] * yb[y0 + i, x0 + j]
            va = vb = cov = 0.0
            for i in range(window):
                for j in range(window):
                    da = ya[y0 + i, x0 + j] - ma
                    db = yb[y0 + i, x0 + j] - mb
                    va += g[i][j] * da * da
                    vb += g[i][j] * db * db
                    cov += g[i][j] * da * db
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def best_subset_exhaustive(landmarks, k, arrivals=None):
    """Size-``k`` subset with the largest total pairwise distance.

    Ties go to the subset that drops the earliest arrival.
    """
    n = len(landmarks)
    arrivals = list(range(n)) if arrivals is None else list(arrivals)
    X = [np.asarray(x, dtype=float).ravel() for x in landmarks]
    best, best_key = None, None
    for combo in itertools.combinations(range(n), k):
        total = sum(math.sqrt(float(np.sum((X[i] - X[j]) ** 2)))
                    for i, j in itertools.combinations(combo, 2))
        dropped = min(arrivals[i] for i in range(n) if i not in combo) if k < n else -1
        key = (total, -dropped)
        if best_key is None or key > best_key:
            best, best_key = combo, key
    return best, best_key[0]


def finite_difference_grad(f, x, h=1e-4):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def lfu_reference(ops, capacity):
    """Literal LFU-with-halving simulator over ``("insert", key)`` / ``("use", key)`` ops."""
    counts = {}
    order = []
    for kind, key in ops:
        if kind == "insert":
            for k in counts:
                counts[k] /= 2.0
            if len(order) >= capacity:
                victim = min(order, key=lambda k: (counts[k], order.index(k)))
                order.remove(victim)
                del counts[victim]
            order.append(key)
            counts[key] = 0.0
        else:
            counts[key] += 1.0
    return [(k, counts[k]) for k in order]
