"""Error norms against closed-form fields."""
import numpy as np

from .quadrature import triangle_rule
from .space import FeFunction, jacobians, reference_to_physical


def error_norms(f: FeFunction, exact, grad_exact=None, cells=None, degree=None):
    """L2 error and H1-seminorm error of ``f`` against ``exact``.

    ``exact(x)`` and ``grad_exact(x)`` take ``x`` of shape (2, m, nq) and
    return arrays laid out like :meth:`FeFunction.at_reference`. The
    seminorm is NaN when no gradient is supplied.
    """
    space = f.space
    mesh = space.mesh
    cells = space.cells if cells is None else np.asarray(cells)
    degree = 2 * space.order + 2 if degree is None else degree
    pts, wts = triangle_rule(degree)
    dx = wts[None, :] * np.abs(np.linalg.det(jacobians(mesh, cells)))[:, None]
    x = reference_to_physical(mesh, cells, pts)
    val, grad = f.at_reference(cells, pts)
    e = val - exact(x)
    l2 = np.sum(e**2 * dx) if space.dim == 1 else np.sum(np.sum(e**2, axis=0) * dx)
    if grad_exact is None:
        return float(np.sqrt(l2)), float("nan")
    g = grad - grad_exact(x)
    g2 = np.sum(g**2, axis=tuple(range(g.ndim - 2)))
    return float(np.sqrt(l2)), float(np.sqrt(np.sum(g2 * dx)))


def mean_value(f: FeFunction, cells=None) -> float:
    space = f.space
    mesh = space.mesh
    cells = space.cells if cells is None else np.asarray(cells)
    pts, wts = triangle_rule(2 * space.order)
    dx = wts[None, :] * np.abs(np.linalg.det(jacobians(mesh, cells)))[:, None]
    val, _ = f.at_reference(cells, pts)
    return float(np.sum(val * dx) / np.sum(dx))
