"""Line spectral pairs of the generalized all-pole polynomial.

For an MGC vector ``[log G, c(1..M)]`` the polynomial is
``A(w) = 1 + gamma * sum_m c(m) w^m`` in the warped delay ``w = zt^-1``.
Its LSPs are the zeros in ``(0, pi)`` of the symmetric and antisymmetric
polynomials ``A(w) +/- w^(M+1) A(1/w)`` on the unit circle, so they are
warped-frequency radians. The MGC-LSP vector is ``[log G, lsp(1..M)]``.
"""

import numpy as np

from .vocoder import DEFAULT_CONFIG


class LSPError(ValueError):
    """Root finding did not produce ``order`` interlaced frequencies."""


def _sum_diff(poly, omega):
    """Real-valued sum/difference functions on the unit circle.

    ``e^{j(M+1)w/2} A(e^{-jw})`` has real part zero exactly where the sum
    polynomial vanishes and imaginary part zero where the difference one does.
    """
    m = poly.size - 1
    powers = np.exp(-1j * np.outer(omega, np.arange(m + 1)))
    val = np.exp(0.5j * (m + 1) * omega) * (powers @ poly)
    return val.real, val.imag


def _bisect(fn, lo, hi, f_lo, iters=60):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def poly_to_lsp(poly, grid=4096):
    """LSP frequencies of ``A(w) = poly[0] + poly[1] w + ...`` with ``poly[0] = 1``.

    Roots are bracketed on a uniform grid over the open interval ``(0, pi)``
    and refined by bisection. Raises :class:`LSPError` unless exactly
    ``len(poly) - 1`` interlaced roots are found.
    """
    poly = np.asarray(poly, dtype=np.float64)
    m = poly.size - 1
    for density in (grid, 8 * grid, 64 * grid):
        omega = np.pi * (np.arange(density) + 0.5) / density
        p, q = _sum_diff(poly, omega)
        roots, labels = [], []
        for k, f in enumerate((p, q)):
            idx = np.nonzero(np.sign(f[:-1]) != np.sign(f[1:]))[0]
            exact = f[idx] == 0
            found = np.where(exact, omega[idx], np.nan)
            todo = ~exact
            if np.any(todo):
                fn = (lambda w, k=k: _sum_diff(poly, np.atleast_1d(w))[k])
                found[todo] = _bisect(fn, omega[idx[todo]], omega[idx[todo] + 1], f[idx[todo]])
            roots.append(found)
            labels.append(np.full(found.size, k))
        roots = np.concatenate(roots)
        labels = np.concatenate(labels)
        order = np.argsort(roots)
        roots, labels = roots[order], labels[order]
        if roots.size == m and np.all(labels == np.arange(m) % 2):
            return roots
    raise LSPError(f"found {roots.size} interlaced roots, expected {m}")


def lsp_to_poly(lsp):
    """Inverse of :func:`poly_to_lsp`: rebuild ``[1, a(1), ..., a(M)]``."""
    lsp = np.asarray(lsp, dtype=np.float64)
    m = lsp.size
    p = np.array([1.0, 1.0]) if m % 2 == 0 else np.array([1.0])
    q = np.array([1.0, -1.0]) if m % 2 == 0 else np.array([1.0, 0.0, -1.0])
    for k, w in enumerate(lsp):
        quad = np.array([1.0, -2.0 * np.cos(w), 1.0])
        if k % 2 == 0:
            p = np.convolve(p, quad)
        else:
            q = np.convolve(q, quad)
    return (0.5 * (p + q))[:m + 1]


def validate_lsp(lsp):
    lsp = np.asarray(lsp, dtype=np.float64)
    if lsp.ndim != 1 or lsp.size == 0:
        raise LSPError(f"expected a 1-D LSP vector, got shape {lsp.shape}")
    if not (np.all(lsp > 0) and np.all(lsp < np.pi)):
        raise LSPError("LSP frequencies must lie strictly inside (0, pi)")
    if not np.all(np.diff(lsp) > 0):
        raise LSPError("LSP frequencies must be strictly ascending")
    return lsp


def mgc_to_mgclsp(mgc, config=DEFAULT_CONFIG, frame=None):
    """``[log G, c(1..M)]`` -> ``[log G, lsp(1..M)]``.

    ``frame`` only labels the error message of a failed conversion.
    """
    mgc = np.asarray(mgc, dtype=np.float64)
    poly = np.concatenate([[1.0], config.gamma * mgc[1:]])
    try:
        lsp = poly_to_lsp(poly)
    except LSPError as err:
        where = f" at frame {frame}" if frame is not None else ""
        raise LSPError(f"mgc_to_mgclsp failed{where}: {err}") from None
    return np.concatenate([[mgc[0]], lsp])


def mgclsp_to_mgc(mgclsp, config=DEFAULT_CONFIG):
    """``[log G, lsp(1..M)]`` -> ``[log G, c(1..M)]``."""
    mgclsp = np.asarray(mgclsp, dtype=np.float64)
    lsp = validate_lsp(mgclsp[1:])
    poly = lsp_to_poly(lsp)
    return np.concatenate([[mgclsp[0]], poly[1:] / config.gamma])


def track_to_mgclsp(track, config=DEFAULT_CONFIG):
    track = np.atleast_2d(track)
    return np.stack([mgc_to_mgclsp(row, config, frame=t) for t, row in enumerate(track)])


def track_from_mgclsp(track, config=DEFAULT_CONFIG):
    """Convert a (possibly predicted) MGC-LSP track back to MGC.

    Predicted LSPs are not guaranteed to be ordered, so each frame is sorted
    and pushed apart by a small margin before conversion.
    """
    track = np.array(np.atleast_2d(track), dtype=np.float64)
    margin = 1e-3
    m = track.shape[1] - 1
    lsp = np.sort(track[:, 1:], axis=1)
    lsp = np.clip(lsp, margin, np.pi - margin)
    for k in range(1, m):
        lsp[:, k] = np.maximum(lsp[:, k], lsp[:, k - 1] + margin)
    for k in range(m - 2, -1, -1):
        lsp[:, k] = np.minimum(lsp[:, k], lsp[:, k + 1] - margin)
    track[:, 1:] = lsp
    return np.stack([mgclsp_to_mgc(row, config) for row in track])
