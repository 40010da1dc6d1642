"""Pure numpy implementation of the Matérn hot kernels.

Mirrors ``_ckernels.pyx`` one function for one function. Inputs are
coordinates already divided by the range parameters, so the scaled distance
is a plain Euclidean norm. ``chi`` is the half-integer order (nu = chi + 1/2)
or -1 for the Gaussian limit.
"""

import numpy as np

from ._poly import matern_coefficients


def _as2d(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _corr_from_h(h, chi):
    if chi < 0:
        return np.exp(-0.5 * h * h)
    c = np.sqrt(2.0 * chi + 1.0)
    t = c * h
    b = matern_coefficients(chi)
    poly = np.full_like(t, b[-1])
    for coef in b[-2::-1]:
        poly = poly * t + coef
    return poly * np.exp(-t)


def _g_from_h(h, chi):
    """-k'(h)/h, set to 0 where h == 0 (only reached with a zero increment)."""
    if chi < 0:
        return np.exp(-0.5 * h * h)
    if chi == 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(h > 0.0, np.exp(-h) / np.where(h > 0.0, h, 1.0), 0.0)
        return g
    c2 = 2.0 * chi + 1.0
    t = np.sqrt(c2) * h
    b = matern_coefficients(chi - 1)
    poly = np.full_like(t, b[-1])
    for coef in b[-2::-1]:
        poly = poly * t + coef
    return c2 / (2.0 * chi - 1.0) * poly * np.exp(-t)


def _sqdiff(xs, ys):
    diff = xs[:, None, :] - ys[None, :, :]
    return diff * diff


def corr_cross(xs, ys, chi):
    """Correlation matrix between rows of ``xs`` and rows of ``ys``."""
    xs, ys = _as2d(xs), _as2d(ys)
    h = np.sqrt(_sqdiff(xs, ys).sum(axis=2))
    return _corr_from_h(h, chi)


def corr_sym(xs, chi):
    """Correlation matrix of ``xs`` with itself (exactly symmetric, unit diagonal)."""
    xs = _as2d(xs)
    r = corr_cross(xs, xs, chi)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def corr_dstack(xs, chi):
    """Stack of d matrices dR/dlog(rho_j), shape (d, n, n)."""
    xs = _as2d(xs)
    sq = _sqdiff(xs, xs)
    h = np.sqrt(sq.sum(axis=2))
    g = _g_from_h(h, chi)
    return np.moveaxis(g[:, :, None] * sq, 2, 0).copy()


def grad_contract(xs, ys, chi, w):
    """Return sum_ik w_ik dR_ik/dlog(rho_j) for each j, without forming the stack."""
    xs, ys, w = _as2d(xs), _as2d(ys), _as2d(w)
    sq = _sqdiff(xs, ys)
    h = np.sqrt(sq.sum(axis=2))
    g = _g_from_h(h, chi)
    return np.einsum("ik,ikj->j", w * g, sq)
