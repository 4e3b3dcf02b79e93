"""Vectorised assembly of bilinear and linear forms.

Forms are plain Python callables evaluated on whole batches of cells at
once. A bilinear form is called as ``form(u, v, w)`` once per pair of
local trial/test basis functions; ``u`` and ``v`` expose ``.value`` and
``.grad`` arrays shaped like :meth:`FeFunction.at_reference` output, and
``w`` carries the quadrature point coordinates ``w.x`` plus any
coefficients passed to the assembler.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
import pymetis
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .elements import shape_gradients, shape_values
from .quadrature import triangle_rule
from .space import FeFunction, MeshMismatchError, Space, inverse_jacobians, jacobians, reference_to_physical

CHUNK = 20000


class SolverError(RuntimeError):
    pass


class _Basis:
    __slots__ = ("value", "grad")

    def __init__(self, value, grad):
        self.value = value
        self.grad = grad


class _ScalarTable:
    def __init__(self, space: Space, cells, pts):
        self.space = space
        phi = shape_values(space.order, pts)
        dphi = shape_gradients(space.order, pts)
        jinv = inverse_jacobians(space.mesh, cells)
        m, nq = len(cells), len(pts)
        self.val = np.broadcast_to(phi.T[:, None, :], (phi.shape[1], m, nq))
        self.grad = np.einsum("qak,mkj->ajmq", dphi, jinv)
        self.nscal = phi.shape[1]

    def basis(self, j):
        if self.space.dim == 1:
            return _Basis(self.val[j], self.grad[j])
        c, a = divmod(j, self.nscal)
        m, nq = self.val.shape[1:]
        v = np.zeros((2, m, nq))
        g = np.zeros((2, 2, m, nq))
        v[c] = self.val[a]
        g[c] = self.grad[a]
        return _Basis(v, g)


def _coefficients(coeffs, cells, pts, x, mesh):
    w = SimpleNamespace(x=x)
    for name, c in (coeffs or {}).items():
        if isinstance(c, FeFunction):
            if c.space.mesh is not mesh:
                raise MeshMismatchError(f"coefficient {name!r} lives on a different mesh")
            val, grad = c.at_reference(cells, pts)
            setattr(w, name, _Basis(val, grad))
        elif callable(c):
            setattr(w, name, c(x))
        elif np.ndim(c) == 0:
            setattr(w, name, c)
        else:
            arr = np.asarray(c)
            setattr(w, name, arr[cells][..., None] if arr.ndim == 1 else arr[..., cells, :])
    return w


def _cells_for(spaces, cells):
    if cells is None:
        sets = [s.cells for s in spaces]
        cells = sets[0]
        for other in sets[1:]:
            cells = np.intersect1d(cells, other)
    return np.asarray(cells)


def _check_same_mesh(*spaces):
    mesh = spaces[0].mesh
    for s in spaces[1:]:
        if s.mesh is not mesh:
            raise MeshMismatchError("spaces are defined on different meshes")
    return mesh


def assemble_matrix(form, trial: Space, test: Space | None = None, coeffs=None, cells=None,
                    degree: int | None = None) -> sps.csr_matrix:
    """Assemble ``a(u, v) = sum_K int_K form(u, v, w) dx``."""
    test = trial if test is None else test
    mesh = _check_same_mesh(trial, test)
    cells = _cells_for([trial, test], cells)
    if degree is None:
        degree = trial.order + test.order + 1
    pts, wts = triangle_rule(degree)
    rows, cols, data = [], [], []
    for start in range(0, len(cells), CHUNK):
        cc = cells[start:start + CHUNK]
        dx = wts[None, :] * np.abs(np.linalg.det(jacobians(mesh, cc)))[:, None]
        x = reference_to_physical(mesh, cc, pts)
        w = _coefficients(coeffs, cc, pts, x, mesh)
        tu = _ScalarTable(trial, cc, pts)
        tv = tu if test is trial else _ScalarTable(test, cc, pts)
        du = trial.cell_dofs(cc)
        dv = test.cell_dofs(cc)
        local = np.zeros((len(cc), test.nloc, trial.nloc))
        vs = [tv.basis(i) for i in range(test.nloc)]
        for j in range(trial.nloc):
            u = tu.basis(j)
            for i in range(test.nloc):
                val = form(u, vs[i], w)
                if np.ndim(val) == 0:
                    if val == 0:
                        continue
                    val = np.full(dx.shape, float(val))
                local[:, i, j] = np.einsum("mq,mq->m", np.broadcast_to(val, dx.shape), dx)
        rows.append(np.repeat(dv, trial.nloc, axis=1).ravel())
        cols.append(np.tile(du, (1, test.nloc)).ravel())
        data.append(local.ravel())
    if not rows:
        return sps.csr_matrix((test.ndofs, trial.ndofs))
    A = sps.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(test.ndofs, trial.ndofs))
    return A.tocsr()


def assemble_vector(form, test: Space, coeffs=None, cells=None, degree: int | None = None) -> np.ndarray:
    """Assemble ``l(v) = sum_K int_K form(v, w) dx``."""
    mesh = test.mesh
    cells = _cells_for([test], cells)
    if degree is None:
        degree = 2 * test.order + 1
    pts, wts = triangle_rule(degree)
    out = np.zeros(test.ndofs)
    for start in range(0, len(cells), CHUNK):
        cc = cells[start:start + CHUNK]
        dx = wts[None, :] * np.abs(np.linalg.det(jacobians(mesh, cc)))[:, None]
        x = reference_to_physical(mesh, cc, pts)
        w = _coefficients(coeffs, cc, pts, x, mesh)
        tv = _ScalarTable(test, cc, pts)
        dv = test.cell_dofs(cc)
        local = np.zeros((len(cc), test.nloc))
        for i in range(test.nloc):
            val = form(tv.basis(i), w)
            local[:, i] = np.einsum("mq,mq->m", np.broadcast_to(val, dx.shape), dx)
        np.add.at(out, dv.ravel(), local.ravel())
    return out


def integrate(fn, mesh, coeffs=None, cells=None, degree: int = 4) -> float:
    """``int fn(w) dx`` over the given cells (all by default)."""
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells)
    pts, wts = triangle_rule(degree)
    total = 0.0
    for start in range(0, len(cells), CHUNK):
        cc = cells[start:start + CHUNK]
        dx = wts[None, :] * np.abs(np.linalg.det(jacobians(mesh, cc)))[:, None]
        x = reference_to_physical(mesh, cc, pts)
        w = _coefficients(coeffs, cc, pts, x, mesh)
        total += float(np.sum(np.broadcast_to(fn(w), dx.shape) * dx))
    return total


# ---------------------------------------------------------------------------
# algebra on leading-axis tensors
# ---------------------------------------------------------------------------

def dot(a, b):
    return a[0] * b[0] + a[1] * b[1]


def ddot(A, B):
    return A[0, 0] * B[0, 0] + A[0, 1] * B[0, 1] + A[1, 0] * B[1, 0] + A[1, 1] * B[1, 1]


def trace(A):
    return A[0, 0] + A[1, 1]


def sym(A):
    return 0.5 * (A + A.transpose(1, 0, *range(2, A.ndim)))


def transpose(A):
    return A.transpose(1, 0, *range(2, A.ndim))


def matmul(A, B):
    return np.einsum("ik...,kj...->ij...", A, B)


def matvec(A, b):
    return np.einsum("ik...,k...->i...", A, b)


def det(A):
    return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]


def adj(A):
    """Adjugate: ``adj(A) = det(A) A^{-1}``."""
    return np.stack([np.stack([A[1, 1], -A[0, 1]]), np.stack([-A[1, 0], A[0, 0]])])


def identity_like(A):
    one = np.ones_like(A[0, 0])
    zero = np.zeros_like(A[0, 0])
    return np.stack([np.stack([one, zero]), np.stack([zero, one])])


# ---------------------------------------------------------------------------
# linear systems
# ---------------------------------------------------------------------------

@dataclass
class SparseSystem:
    """Sparse matrix, right-hand side and Dirichlet-type constraints."""

    matrix: sps.spmatrix
    rhs: np.ndarray
    constrained: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.matrix = sps.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, float)
        n, m = self.matrix.shape
        if n != m or len(self.rhs) != n:
            raise ValueError(f"system shape mismatch: {self.matrix.shape} vs rhs {self.rhs.shape}")
        self.constrained = np.asarray(self.constrained, np.int64)
        self.values = np.broadcast_to(np.asarray(self.values, float), self.constrained.shape).copy()

    def constrain(self, dofs, values=0.0):
        dofs = np.asarray(dofs, np.int64)
        vals = np.broadcast_to(np.asarray(values, float), dofs.shape)
        self.constrained = np.concatenate([self.constrained, dofs])
        self.values = np.concatenate([self.values, vals])
        return self

    def constrained_form(self):
        """Matrix and rhs after row/column elimination of constrained dofs."""
        A, b = self.matrix, self.rhs.copy()
        if len(self.constrained) == 0:
            return A, b
        dofs, idx = np.unique(self.constrained, return_index=True)
        g = np.zeros(A.shape[0])
        g[dofs] = self.values[idx]
        b -= A @ g
        keep = np.ones(A.shape[0])
        keep[dofs] = 0.0
        K = sps.diags(keep)
        A = (K @ A @ K + sps.diags(1.0 - keep)).tocsr()
        b[dofs] = g[dofs]
        return A, b


def solve(system: SparseSystem, rtol: float = 1e-10) -> np.ndarray:
    """Direct sparse solve with residual check."""
    A, b = system.constrained_form()
    return solve_matrix(A, b, rtol=rtol)


def nested_dissection(A, dense_fraction: float = 0.01) -> np.ndarray:
    """Fill-reducing symmetric permutation of ``A`` from METIS on the graph of ``|A| + |A|^T``.

    Rows or columns with more than ``dense_fraction * n`` entries (e.g. a
    mean-value constraint) are left out of the graph and ordered last.
    """
    n = A.shape[0]
    S = (abs(sps.csr_matrix(A)) + abs(sps.csr_matrix(A)).T).tocsr()
    dense = np.diff(S.indptr) > max(dense_fraction * n, 50)
    keep = np.flatnonzero(~dense)
    S = S[keep][:, keep].tocsr()
    S.setdiag(0)
    S.eliminate_zeros()
    if len(keep) < 2:
        return np.concatenate([keep, np.flatnonzero(dense)])
    perm, _ = pymetis.nested_dissection(pymetis.CSRAdjacency(S.indptr, S.indices))
    return np.concatenate([keep[np.asarray(perm)], np.flatnonzero(dense)])


def solve_matrix(A, b, rtol: float = 1e-10, ordering: str = "colamd") -> np.ndarray:
    """Sparse LU solve of ``A x = b`` with row/column equilibration and iterative refinement.

    ``ordering="nested-dissection"`` applies a symmetric METIS permutation
    and keeps diagonal pivots where possible; much less fill on large
    saddle point systems, provided the diagonal is mostly nonzero.
    """
    if ordering not in ("colamd", "nested-dissection"):
        raise ValueError(f"unknown ordering {ordering!r}")
    A = sps.csc_matrix(A)
    perm = nested_dissection(A) if ordering == "nested-dissection" else np.arange(A.shape[0])
    Ap = A[perm][:, perm] if ordering == "nested-dissection" else A
    # equilibrate: rows to unit max, then columns; blocks of very different scale otherwise lose digits
    rmax = abs(Ap).max(axis=1).toarray().ravel()
    dr = 1.0 / np.where(rmax > 0, rmax, 1.0)
    As = sps.diags(dr) @ Ap
    cmax = abs(As).max(axis=0).toarray().ravel()
    dc = 1.0 / np.where(cmax > 0, cmax, 1.0)
    As = sps.csc_matrix(As @ sps.diags(dc))
    del Ap
    try:
        if ordering == "colamd":
            lu = spla.splu(As, permc_spec="COLAMD")
        else:
            lu = spla.splu(As, permc_spec="NATURAL", diag_pivot_thresh=1e-3, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"factorization failed for {A.shape} system with {A.nnz} nonzeros: {exc}") from exc

    def apply(rhs):
        out = np.empty_like(rhs)
        out[perm] = dc * lu.solve(dr * rhs[perm])
        return out

    x = apply(b)
    nb = np.linalg.norm(b)
    if nb == 0:
        return x
    r = b - A @ x
    for _ in range(3):
        if np.linalg.norm(r) <= rtol * nb:
            break
        x += apply(r)
        r = b - A @ x
    res = np.linalg.norm(r) / nb
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"relative residual {res:.3e} exceeds {rtol:g} "
                          f"(n={A.shape[0]}, nnz={A.nnz}, max|x|={np.abs(x).max():.3e})")
    return x
