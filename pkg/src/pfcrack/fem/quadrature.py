"""Quadrature rules on the reference triangle (0,0), (1,0), (0,1)."""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Points ``(nq, 2)`` and weights ``(nq,)`` exact for polynomials of ``degree``.

    Weights sum to the reference area 1/2. Degrees above two use a collapsed
    Gauss-Jacobi x Gauss-Legendre product rule.
    """
    if degree <= 1:
        pts = np.array([[1 / 3, 1 / 3]])
        wts = np.array([0.5])
    elif degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        wts = np.full(3, 1 / 6)
    else:
        n = (degree + 2) // 2
        xs, ws = roots_jacobi(n, 1.0, 0.0)
        s = 0.5 * (1 + xs)
        ws = ws / 4.0
        xt, wt = roots_legendre(n)
        t = 0.5 * (1 + xt)
        wt = wt / 2.0
        S, T = np.meshgrid(s, t, indexing="ij")
        pts = np.stack([S.ravel(), ((1 - S) * T).ravel()], axis=1)
        wts = np.outer(ws, wt).ravel()
    pts.flags.writeable = False
    wts.flags.writeable = False
    return pts, wts


@lru_cache(maxsize=None)
def line_rule(n: int):
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (1 + x), 0.5 * w
