"""Compiled alignment sums for d = 1 with a fixed mollified ball.

Sources are sorted once; for each query the fully weighted window
|dx| <= r - eps is summed with prefix sums and only the smoothing band
r - eps < |dx| < r + eps is visited pointwise.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _bump_cdf(t):
    if t <= -1.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    t2 = t * t
    return 0.5 + 35.0 / 32.0 * t * (1.0 - t2 + 0.6 * t2 * t2 - t2 * t2 * t2 / 7.0)


@njit(cache=True)
def _weight(rho, r, eps):
    return _bump_cdf((r - rho) / eps) - _bump_cdf((-r - rho) / eps)


@njit(cache=True)
def _window_sums(xq, vq, xs, vs, pre1, r, eps, out):
    inner = r - eps
    outer = r + eps
    for i in range(xq.size):
        x = xq[i]
        if inner > 0.0:
            lo_full = np.searchsorted(xs, x - inner, side="left")
            hi_full = np.searchsorted(xs, x + inner, side="right")
        else:
            lo_full = np.searchsorted(xs, x, side="left")
            hi_full = lo_full
        s0 = float(hi_full - lo_full)
        s1 = pre1[hi_full] - pre1[lo_full]
        lo_band = np.searchsorted(xs, x - outer, side="right")
        hi_band = np.searchsorted(xs, x + outer, side="left")
        for j in range(lo_band, lo_full):
            w = _weight(x - xs[j], r, eps)
            s0 += w
            s1 += w * vs[j]
        for j in range(hi_full, hi_band):
            w = _weight(xs[j] - x, r, eps)
            s0 += w
            s1 += w * vs[j]
        out[i] = s1 - s0 * vq[i]


@njit(cache=True)
def _dense_sums(xq, vq, xs, vs, r, eps, box, out):
    for i in range(xq.size):
        acc = 0.0
        for j in range(xs.size):
            dx = xs[j] - xq[i]
            if box > 0.0:
                dx -= box * np.floor(dx / box + 0.5)
            acc += _weight(abs(dx), r, eps) * (vs[j] - vq[i])
        out[i] = acc


def alignment_1d(xq, vq, xs, vs, r: float, eps: float, box_length: float | None = None):
    """(1/M) sum_j w(|xs_j - xq_i|) (vs_j - vq_i) for 1D arrays; periodic if box_length."""
    xq = np.ascontiguousarray(xq, dtype=np.float64)
    vq = np.ascontiguousarray(vq, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    m = xs.size
    out = np.empty_like(xq)
    if m == 0:
        return np.zeros_like(xq)
    if box_length is not None and r + eps >= 0.5 * box_length:
        _dense_sums(xq, vq, np.ascontiguousarray(xs), np.ascontiguousarray(vs), r, eps, float(box_length), out)
        return out / m
    order = np.argsort(xs, kind="stable")
    xs_s = xs[order]
    vs_s = vs[order]
    if box_length is not None:
        L = float(box_length)
        xs_s = np.concatenate([xs_s - L, xs_s, xs_s + L])
        vs_s = np.concatenate([vs_s, vs_s, vs_s])
    pre1 = np.concatenate([[0.0], np.cumsum(vs_s)])
    _window_sums(xq, vq, xs_s, vs_s, pre1, r, eps, out)
    return out / m


@njit(cache=True)
def _clenshaw(coef, t):
    b1 = 0.0
    b2 = 0.0
    for k in range(coef.size - 1, 0, -1):
        b1, b2 = 2.0 * t * b1 - b2 + coef[k], b1
    return t * b1 - b2 + coef[0]


@njit(cache=True)
def _dense_radial_batch(X, V, coef, lo, hi, box, out):
    R, N, d = X.shape
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    hi2 = hi * hi
    lo2 = lo * lo
    for r in range(R):
        for i in range(N):
            s0 = 0.0
            for k in range(d):
                out[r, i, k] = 0.0
            for j in range(N):
                rho2 = 0.0
                for k in range(d):
                    dx = X[r, j, k] - X[r, i, k]
                    if box > 0.0:
                        dx -= box * np.floor(dx / box + 0.5)
                    rho2 += dx * dx
                if rho2 >= hi2:
                    continue
                if rho2 <= lo2:
                    w = 1.0
                else:
                    w = _clenshaw(coef, (np.sqrt(rho2) - mid) / half)
                    w = min(max(w, 0.0), 1.0)
                s0 += w
                for k in range(d):
                    out[r, i, k] += w * V[r, j, k]
            for k in range(d):
                out[r, i, k] = (out[r, i, k] - s0 * V[r, i, k]) / N


def radial_batch_forces(X, V, coef, lo, hi, box_length=None):
    """Batched self-alignment for a radial weight given as a Chebyshev series on [lo, hi]."""
    out = np.empty_like(V)
    _dense_radial_batch(np.ascontiguousarray(X), np.ascontiguousarray(V), np.ascontiguousarray(coef),
                        float(lo), float(hi), -1.0 if box_length is None else float(box_length), out)
    return out
