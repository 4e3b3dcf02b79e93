"""Continuous Lagrange spaces and finite element functions."""
from __future__ import annotations

from functools import cached_property

import numpy as np

from ..mesh import FLUID, SOLID, Mesh, PointNotFoundError, locate_points
from .elements import n_local, shape_gradients, shape_values

_REGIONS = {None: None, "all": None, "fluid": FLUID, "solid": SOLID}


class MeshMismatchError(ValueError):
    pass


class Space:
    """P1 or P2 Lagrange space, scalar or 2-vector valued.

    Vector dofs are blocked by component: dof ``c * n_scalar + s`` is
    component ``c`` of scalar dof ``s``. A restricted space only contains
    the dofs touching triangles of the given region and numbers them
    compactly.
    """

    def __init__(self, mesh: Mesh, order: int = 1, dim: int = 1, restriction=None):
        if order not in (1, 2) or dim not in (1, 2):
            raise ValueError("order must be 1|2 and dim 1|2")
        self.mesh = mesh
        self.order = order
        self.dim = dim
        self.restriction = restriction
        region = _REGIONS[restriction] if restriction in _REGIONS else int(restriction)
        self.region = region
        ent = mesh.triangles
        if order == 2:
            ent = np.hstack([mesh.triangles, mesh.n_vertices + mesh.tri_edges])
        if region is None:
            self.cells = np.arange(mesh.n_triangles)
        else:
            self.cells = np.flatnonzero(mesh.region == region)
        n_ent = mesh.n_vertices + (len(mesh.edges) if order == 2 else 0)
        self.entities = np.unique(ent[self.cells])
        g2l = -np.ones(n_ent, np.int64)
        g2l[self.entities] = np.arange(len(self.entities))
        self._g2l = g2l
        self._ent = ent
        cmap = -np.ones(mesh.n_triangles, np.int64)
        cmap[self.cells] = np.arange(len(self.cells))
        self._cell_map = cmap
        self.n_scalar = len(self.entities)
        self.ndofs = self.n_scalar * dim
        self.nloc = n_local(order) * dim

    def __repr__(self):
        return f"Space(P{self.order}, dim={self.dim}, restriction={self.restriction!r}, ndofs={self.ndofs})"

    def scalar_cell_dofs(self, cells=None) -> np.ndarray:
        cells = self.cells if cells is None else np.asarray(cells)
        if np.any(self._cell_map[cells] < 0):
            raise MeshMismatchError("cells outside the space restriction")
        return self._g2l[self._ent[cells]]

    def cell_dofs(self, cells=None) -> np.ndarray:
        """(m, nloc) dofs, component-major local ordering."""
        s = self.scalar_cell_dofs(cells)
        if self.dim == 1:
            return s
        return np.hstack([s + c * self.n_scalar for c in range(self.dim)])

    @cached_property
    def dof_coords(self) -> np.ndarray:
        """(n_scalar, 2) nodal positions."""
        m = self.mesh
        nv = m.n_vertices
        ent = self.entities
        out = np.empty((len(ent), 2))
        isv = ent < nv
        out[isv] = m.vertices[ent[isv]]
        e = m.edges[ent[~isv] - nv]
        out[~isv] = 0.5 * (m.vertices[e[:, 0]] + m.vertices[e[:, 1]])
        return out

    def component_dofs(self, c: int) -> np.ndarray:
        return np.arange(self.n_scalar) + c * self.n_scalar

    def scalar_dofs_on_edges(self, edges) -> np.ndarray:
        edges = np.asarray(edges).reshape(-1, 2)
        ents = [edges.ravel()]
        if self.order == 2 and len(edges):
            from ..mesh import _edge_lookup
            ents.append(self.mesh.n_vertices + _edge_lookup(self.mesh.edges, np.sort(edges, axis=1)))
        ents = np.unique(np.concatenate(ents))
        loc = self._g2l[ents]
        return loc[loc >= 0]

    def boundary_dofs(self, tags=None) -> np.ndarray:
        """All dofs (every component) on edges carrying one of ``tags``.

        ``tags=None`` selects the topological boundary of the mesh.
        """
        m = self.mesh
        if tags is None:
            edges = m.edges[m.edge_triangles[:, 1] < 0]
        else:
            tags = np.atleast_1d(tags)
            edges = m.boundary_edges[np.isin(m.boundary_tags, tags)]
        s = self.scalar_dofs_on_edges(edges)
        return self.expand(s)

    def restriction_boundary_dofs(self) -> np.ndarray:
        """Dofs on the boundary of the restricted region (all components)."""
        m = self.mesh
        et = m.edge_triangles
        inside = self._cell_map[et] >= 0
        inside[et < 0] = False
        edges = m.edges[inside.sum(axis=1) == 1]
        return self.expand(self.scalar_dofs_on_edges(edges))

    def expand(self, scalar_dofs) -> np.ndarray:
        scalar_dofs = np.asarray(scalar_dofs, np.int64)
        return np.concatenate([scalar_dofs + c * self.n_scalar for c in range(self.dim)])

    def interpolate(self, f) -> "FeFunction":
        """Nodal interpolant of ``f(x)`` with ``x`` of shape (2, n)."""
        vals = np.asarray(f(self.dof_coords.T), float)
        if self.dim == 1:
            vals = np.broadcast_to(vals, (self.n_scalar,))
        else:
            vals = np.broadcast_to(vals.reshape(2, -1) if vals.size > 2 else vals.reshape(2, 1),
                                   (2, self.n_scalar))
        return FeFunction(self, np.ascontiguousarray(vals).ravel().copy())

    def zeros(self) -> "FeFunction":
        return FeFunction(self, np.zeros(self.ndofs))


class FeFunction:
    """Coefficient vector over a Space."""

    def __init__(self, space: Space, coeffs=None):
        self.space = space
        c = np.zeros(space.ndofs) if coeffs is None else np.asarray(coeffs, float)
        if c.shape != (space.ndofs,):
            raise ValueError(f"expected {space.ndofs} coefficients, got {c.shape}")
        self.coeffs = c

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coeffs.copy())

    def component(self, c: int) -> np.ndarray:
        n = self.space.n_scalar
        return self.coeffs[c * n:(c + 1) * n]

    def at_reference(self, cells, ref_pts):
        """Values and gradients at reference points of the given cells.

        Returns ``(value, grad)`` with shapes ``(m, nq)`` / ``(2, m, nq)``
        for scalars and ``(2, m, nq)`` / ``(2, 2, m, nq)`` for vectors,
        ``grad[i, j] = d u_i / d x_j``.
        """
        sp = self.space
        cells = np.asarray(cells)
        sd = sp.scalar_cell_dofs(cells)
        phi = shape_values(sp.order, ref_pts)
        dphi = shape_gradients(sp.order, ref_pts)
        jinv = inverse_jacobians(sp.mesh, cells)
        # physical gradients: (m, nq, nloc, 2)
        g = np.einsum("qak,mkj->mqaj", dphi, jinv)
        vals, grads = [], []
        for c in range(sp.dim):
            coef = self.coeffs[sd + c * sp.n_scalar]
            vals.append(coef @ phi.T)
            grads.append(np.einsum("ma,mqaj->jmq", coef, g))
        if sp.dim == 1:
            return vals[0], grads[0]
        return np.stack(vals), np.stack(grads)

    def __call__(self, x):
        """Point evaluation; ``x`` is (2,) or (n, 2)."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        cells, bary = locate_points(self.mesh, pts)
        if np.any(cells < 0):
            raise PointNotFoundError("evaluation point outside the mesh")
        if np.any(self.space._cell_map[cells] < 0):
            # a tie-broken cell may lie outside a restricted space; retry there
            cells, bary = _locate_in_space(self.space, pts, cells)
        vals = self.evaluate_bary(cells, bary)
        if single:
            return vals[..., 0] if self.space.dim == 2 else vals[0]
        return vals

    def evaluate_bary(self, cells, bary):
        sp = self.space
        sd = sp.scalar_cell_dofs(cells)
        phi = shape_values(sp.order, bary[:, 1:])
        out = [np.einsum("na,na->n", self.coeffs[sd + c * sp.n_scalar], phi) for c in range(sp.dim)]
        return out[0] if sp.dim == 1 else np.stack(out)

    def gradient_at(self, x):
        """Gradient at points (n, 2): (2, n) for scalars, (2, 2, n) for vectors."""
        pts = np.atleast_2d(np.asarray(x, float))
        cells, bary = locate_points(self.mesh, pts)
        if np.any(cells < 0):
            raise PointNotFoundError("evaluation point outside the mesh")
        if np.any(self.space._cell_map[cells] < 0):
            cells, bary = _locate_in_space(self.space, pts, cells)
        out = []
        for i in range(len(pts)):
            v, g = self.at_reference(cells[i:i + 1], bary[i:i + 1, 1:])
            out.append(g[..., 0, 0])
        return np.stack(out, axis=-1)


def _locate_in_space(space: Space, pts, cells):
    mesh = space.mesh
    cells = cells.copy()
    bary = np.empty((len(pts), 3))
    for i, x in enumerate(pts):
        cand = mesh.vertex_triangles[mesh.triangles[cells[i]]].ravel()
        cand = np.unique(cand[cand >= 0])
        cand = cand[space._cell_map[cand] >= 0]
        lam = mesh.barycentric(cand, np.broadcast_to(x, (len(cand), 2)))
        ok = np.flatnonzero(lam.min(axis=1) >= -1e-10)
        if len(ok) == 0:
            raise PointNotFoundError(f"point {tuple(x)} outside the space restriction")
        cells[i] = cand[ok[0]]
        bary[i] = lam[ok[0]]
    return cells, bary


def jacobians(mesh: Mesh, cells) -> np.ndarray:
    """(m, 2, 2) affine map Jacobians, columns are the edge vectors."""
    p = mesh.vertices[mesh.triangles[cells]]
    return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)


def inverse_jacobians(mesh: Mesh, cells) -> np.ndarray:
    return np.linalg.inv(jacobians(mesh, cells))


def reference_to_physical(mesh: Mesh, cells, ref_pts) -> np.ndarray:
    """(2, m, nq) physical coordinates of reference points."""
    p = mesh.vertices[mesh.triangles[cells]]
    lam = shape_values(1, ref_pts)
    return np.einsum("qa,maj->jmq", lam, p)
