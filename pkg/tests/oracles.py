"""Slow, obviously-correct reference implementations used only by the tests."""

import math
from fractions import Fraction

import numpy as np


def round_half_away(x):
    return math.floor(x + 0.5) if x >= 0 else -math.floor(-x + 0.5)


def bilinear_exact(pixels, out_w, out_h):
    """Scalar-loop bilinear resize in exact rationals (half-pixel centres, edge clamping)."""
    h, w = len(pixels), len(pixels[0])
    half = Fraction(1, 2)
    out = [[Fraction(0)] * out_w for _ in range(out_h)]
    for oy in range(out_h):
        for ox in range(out_w):
            sx = (ox + half) * Fraction(w, out_w) - half
            sy = (oy + half) * Fraction(h, out_h) - half
            sx = min(max(sx, Fraction(0)), Fraction(w - 1))
            sy = min(max(sy, Fraction(0)), Fraction(h - 1))
            x0, y0 = math.floor(sx), math.floor(sy)
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = sx - x0, sy - y0
            out[oy][ox] = (pixels[y0][x0] * (1 - fx) * (1 - fy) + pixels[y0][x1] * fx * (1 - fy)
                           + pixels[y1][x0] * (1 - fx) * fy + pixels[y1][x1] * fx * fy)
    return out


def bilinear_reference(pixels, out_w, out_h, max_value):
    """Exact bilinear values rounded half away from zero and clamped."""
    exact = bilinear_exact(pixels, out_w, out_h)
    return [[min(max(math.floor(v + Fraction(1, 2)), 0), max_value) for v in row] for row in exact]


def assert_matches_exact(actual, pixels, out_w, out_h, max_value):
    """Equal to the exact oracle, except +-1 where the exact value is a .5 tie."""
    exact = bilinear_exact(pixels, out_w, out_h)
    ref = bilinear_reference(pixels, out_w, out_h, max_value)
    for y in range(out_h):
        for x in range(out_w):
            if actual[y][x] != ref[y][x]:
                tie = exact[y][x] - math.floor(exact[y][x]) == Fraction(1, 2)
                assert tie and abs(actual[y][x] - ref[y][x]) == 1, (y, x, actual[y][x], exact[y][x])


def rot90_ccw(pixels):
    """Explicit counter-clockwise quarter turn of a square grid."""
    n = len(pixels)
    return [[pixels[x][n - 1 - y] for x in range(n)] for y in range(n)]


def histogram_cdf(values, levels):
    n = len(values)
    return [sum(1 for v in values if v <= level) / n for level in range(levels)]


def inverse_cdf_bruteforce(f_r, q):
    """Linear-interpolated inverse CDF by scanning for the first level reaching q."""
    if q <= f_r[0]:
        return 0.0
    for j in range(1, len(f_r)):
        if f_r[j] >= q:
            return (j - 1) + (q - f_r[j - 1]) / (f_r[j] - f_r[j - 1])
    return float(len(f_r) - 1)


def lut_bruteforce(f_s, f_r):
    return [min(max(round_half_away(inverse_cdf_bruteforce(f_r, q)), 0), len(f_r) - 1) for q in f_s]


def auc_pairs(scores, labels):
    """All-pairs Mann-Whitney statistic with ties counted half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    gt = sum(1 for p in pos for n in neg if p > n)
    eq = sum(1 for p in pos for n in neg if p == n)
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


def roc_sweep(scores, labels):
    """(fpr, tpr) after lowering the threshold through each distinct score."""
    p = sum(labels)
    n = len(labels) - p
    points = [(0.0, 0.0)]
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        points.append((fp / n, tp / p))
    return points


def adam_scalar(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Plain-float Adam trajectory for a scalar parameter."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, 1):
        g = g(w) if callable(g) else g
        g = g + wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(w)
    return out


def central_difference(f, arr, index, h):
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * h)


def relative_error(a, n, floor=1e-10):
    return abs(a - n) / max(abs(a), abs(n), floor)


def sample_indices(shape, k, rng):
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def conv_loops(x, w, stride, pad):
    """Direct nested-loop NHWC convolution."""
    n, h, wd, c_in = x.shape
    kh, kw, _, c_out = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, ho, wo, c_out))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for o in range(c_out):
                    acc = 0.0
                    for di in range(kh):
                        for dj in range(kw):
                            y, xx = i * stride + di - pad, j * stride + dj - pad
                            if 0 <= y < h and 0 <= xx < wd:
                                for c in range(c_in):
                                    acc += x[b, y, xx, c] * w[di, dj, c, o]
                    out[b, i, j, o] = acc
    return out


def net_eval_loops(p, bufs, x, stem_stride, eps):
    """Eval-mode logits of a stem + one identity residual block + head."""
    def bn(h, name):
        return (h - bufs[name + ".mean"]) / np.sqrt(bufs[name + ".var"] + eps) * p[name + ".gamma"] + p[name + ".beta"]

    relu = lambda h: np.where(h > 0, h, 0.0)
    h = relu(bn(conv_loops(x, p["stem.conv"], stem_stride, 1), "stem.bn"))
    r = relu(bn(conv_loops(h, p["blocks.0.conv1"], 1, 1), "blocks.0.bn1"))
    r = bn(conv_loops(r, p["blocks.0.conv2"], 1, 1), "blocks.0.bn2")
    h = relu(r + h)
    pooled = h.sum(axis=(1, 2)) / (h.shape[1] * h.shape[2])
    return pooled @ p["fc.weight"] + p["fc.bias"]
