"""Compiled inner loops for the memory-bound parts of conv/pool and filtering.

All image kernels use channels-last ``[B, H, W, C]`` layout, 3x3 windows with
zero "same" padding, and 2x2/stride-2 ceil-mode pooling.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col3x3(x, cols):
    """Fill ``cols[B, H, W, 3, 3, C]`` with zero-padded 3x3 neighbourhoods."""
    b_, h_, w_, c_ = x.shape
    for b in range(b_):
        for y in range(h_):
            for x0 in range(w_):
                for dy in range(3):
                    yy = y + dy - 1
                    for dx in range(3):
                        xx = x0 + dx - 1
                        if yy < 0 or yy >= h_ or xx < 0 or xx >= w_:
                            for c in range(c_):
                                cols[b, y, x0, dy, dx, c] = 0.0
                        else:
                            for c in range(c_):
                                cols[b, y, x0, dy, dx, c] = x[b, yy, xx, c]


@njit(cache=True)
def col2im3x3(gcols, gx):
    """Adjoint of :func:`im2col3x3`: accumulate ``gcols`` into ``gx``."""
    b_, h_, w_, c_ = gx.shape
    for b in range(b_):
        for y in range(h_):
            for x0 in range(w_):
                for dy in range(3):
                    yy = y + dy - 1
                    if yy < 0 or yy >= h_:
                        continue
                    for dx in range(3):
                        xx = x0 + dx - 1
                        if xx < 0 or xx >= w_:
                            continue
                        for c in range(c_):
                            gx[b, yy, xx, c] += gcols[b, y, x0, dy, dx, c]


@njit(cache=True)
def maxpool2x2(y, out, idx):
    """Ceil-mode 2x2 max; ``idx`` gets the winning cell 0..3 (first max wins)."""
    b_, h_, w_, c_ = y.shape
    h2, w2 = out.shape[1], out.shape[2]
    for b in range(b_):
        for i in range(h2):
            for j in range(w2):
                for c in range(c_):
                    out[b, i, j, c] = y[b, 2 * i, 2 * j, c]
                    idx[b, i, j, c] = 0
                for q in range(1, 4):
                    yy = 2 * i + q // 2
                    xx = 2 * j + q % 2
                    if yy >= h_ or xx >= w_:
                        continue
                    for c in range(c_):
                        v = y[b, yy, xx, c]
                        if v > out[b, i, j, c]:
                            out[b, i, j, c] = v
                            idx[b, i, j, c] = q


@njit(cache=True)
def unpool2x2(g, idx, gy):
    """Route pooled gradients ``g`` back to the argmax cells of ``gy`` (overwrites)."""
    b_, h2, w2, c_ = g.shape
    gy[...] = 0.0
    for b in range(b_):
        for i in range(h2):
            for j in range(w2):
                for c in range(c_):
                    q = idx[b, i, j, c]
                    gy[b, 2 * i + q // 2, 2 * j + q % 2, c] += g[b, i, j, c]


@njit(cache=True)
def warped_allpole(x, coefs, alpha, y):
    """One time-varying stage ``1 / (1 + sum_m b_n(m) Phi_m(z))``.

    ``Phi_m(z) = (1 - alpha^2) z^-1 / (1 - alpha z^-1) * zt^-(m-1)`` where
    ``zt^-1`` is the first-order all-pass ``(z^-1 - alpha) / (1 - alpha z^-1)``.
    ``coefs`` is ``[N, M+1]`` with per-sample ``b_n``; column 0 is ignored.
    The basis has no delay-free term, so the feedback loop is realizable.
    """
    n_samples, m1 = coefs.shape
    m = m1 - 1
    d = np.zeros(m + 1)
    aa = 1.0 - alpha * alpha
    for n in range(n_samples):
        acc = 0.0
        if m >= 1:
            acc = d[0] * coefs[n, 1]
        for i in range(1, m):
            d[i] += alpha * (d[i + 1] - d[i - 1])
            acc += d[i] * coefs[n, i + 1]
        out = x[n] - acc
        for i in range(m, 0, -1):
            d[i] = d[i - 1]
        d[0] = alpha * d[0] + aa * out
        y[n] = out


@njit(cache=True)
def warped_allzero(x, coefs, alpha, y):
    """Exact inverse of :func:`warped_allpole` for the same coefficient track."""
    n_samples, m1 = coefs.shape
    m = m1 - 1
    d = np.zeros(m + 1)
    aa = 1.0 - alpha * alpha
    for n in range(n_samples):
        acc = 0.0
        if m >= 1:
            acc = d[0] * coefs[n, 1]
        for i in range(1, m):
            d[i] += alpha * (d[i + 1] - d[i - 1])
            acc += d[i] * coefs[n, i + 1]
        xn = x[n]
        for i in range(m, 0, -1):
            d[i] = d[i - 1]
        d[0] = alpha * d[0] + aa * xn
        y[n] = xn + acc


@njit(cache=True)
def resonator(x, freq, bandwidth, fs, y):
    """Second-order resonator with per-sample centre frequency, unity DC gain.

    ``y[n] = A x[n] + B y[n-1] + C y[n-2]`` with ``C = -exp(-2 pi bw / fs)``,
    ``B = 2 exp(-pi bw / fs) cos(2 pi f / fs)`` and ``A = 1 - B - C``.
    """
    r = np.exp(-np.pi * bandwidth / fs)
    c = -r * r
    y1 = 0.0
    y2 = 0.0
    for n in range(x.shape[0]):
        b = 2.0 * r * np.cos(2.0 * np.pi * freq[n] / fs)
        out = (1.0 - b - c) * x[n] + b * y1 + c * y2
        y2 = y1
        y1 = out
        y[n] = out
