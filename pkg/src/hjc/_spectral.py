"""Chebyshev collocation helpers on [0, t] and symmetric matrix functions."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _reference(n):
    # Trefethen's cheb() on ascending Chebyshev-Lobatto points of [-1, 1].
    j = np.arange(n + 1)
    x = -np.cos(np.pi * j / n)
    c = np.where((j == 0) | (j == n), 2.0, 1.0) * (-1.0) ** j
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    bary = (-1.0) ** j * np.where((j == 0) | (j == n), 0.5, 1.0)
    for arr in (x, D, bary):
        arr.setflags(write=False)
    return x, D, bary


def cheb_nodes(n, t):
    """Return the ``n + 1`` Chebyshev-Lobatto points of ``[0, t]``, ascending."""
    x, _, _ = _reference(n)
    return 0.5 * t * (x + 1.0)


def cheb_diff(n, t):
    """First and second differentiation matrices on :func:`cheb_nodes`."""
    _, D, _ = _reference(n)
    D1 = D * (2.0 / t)
    return D1, D1 @ D1


def cheb_interp_matrix(n, t, s):
    """Matrix mapping nodal values on ``cheb_nodes(n, t)`` to values at ``s``.

    Barycentric formula of the second kind; rows for ``s`` that coincide with a
    node reduce to the unit vector.
    """
    x, _, w = _reference(n)
    z = 2.0 * np.asarray(s, dtype=float) / t - 1.0
    diff = z[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, rtol=0.0, atol=1e-15)
    diff[exact] = 1.0
    M = w[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        M[hit] = exact[hit].astype(float)
    return M


@lru_cache(maxsize=32)
def _gauss(q):
    x, w = np.polynomial.legendre.leggauss(q)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_gauss(breaks, q):
    """Gauss-Legendre nodes and weights with ``q`` points on every panel."""
    breaks = np.asarray(breaks, dtype=float)
    x, w = _gauss(q)
    a, b = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (b - a)
    nodes = (a + b) * 0.5 + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def sym_function(A, fn):
    """Apply a scalar function to a symmetric matrix via its eigendecomposition."""
    lam, Q = np.linalg.eigh(np.asarray(A, dtype=float))
    return (Q * fn(lam)) @ Q.T


def sym_sqrt(A):
    return sym_function(A, np.sqrt)


def sym_expm(A, scale=1.0):
    """``exp(scale * A)`` for symmetric ``A``."""
    return sym_function(A, lambda lam: np.exp(scale * lam))
