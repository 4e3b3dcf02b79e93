"""Lagrange shape functions on the reference triangle.

Local numbering: vertices 0, 1, 2, then (P2) the midpoint of the edge
opposite vertex k as local dof 3 + k.
"""
import numpy as np


def shape_values(order: int, pts) -> np.ndarray:
    """(nq, nloc) shape function values."""
    pts = np.asarray(pts, float)
    l1, l2 = pts[:, 0], pts[:, 1]
    l0 = 1.0 - l1 - l2
    if order == 1:
        return np.stack([l0, l1, l2], axis=1)
    if order == 2:
        return np.stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
        ], axis=1)
    raise ValueError(f"unsupported order {order}")


def shape_gradients(order: int, pts) -> np.ndarray:
    """(nq, nloc, 2) reference gradients."""
    pts = np.asarray(pts, float)
    nq = len(pts)
    g0 = np.array([-1.0, -1.0])
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 1.0])
    if order == 1:
        return np.broadcast_to(np.stack([g0, g1, g2]), (nq, 3, 2)).copy()
    if order == 2:
        l1, l2 = pts[:, 0:1], pts[:, 1:2]
        l0 = 1.0 - l1 - l2
        return np.stack([
            (4 * l0 - 1) * g0, (4 * l1 - 1) * g1, (4 * l2 - 1) * g2,
            4 * (l1 * g2 + l2 * g1), 4 * (l2 * g0 + l0 * g2), 4 * (l0 * g1 + l1 * g0),
        ], axis=1)
    raise ValueError(f"unsupported order {order}")


def n_local(order: int) -> int:
    return 3 if order == 1 else 6
