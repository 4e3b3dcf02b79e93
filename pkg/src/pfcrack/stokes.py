"""Stationary Stokes flow with Taylor-Hood P2/P1 elements on the fluid region.

The weak form uses the full viscous stress ``rho nu (grad v + grad v^T)``
so that it coincides with the fluid block of the ALE coupling for a frozen
mesh. For divergence-free fields this is the Laplacian form.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .fem import FeFunction, Space, assemble_matrix, assemble_vector, ddot, error_norms, solve_matrix, sym
from .mesh import FLUID, Mesh, SizeField, BoundaryCurve, POLYLINE, remesh_fitted

MANUFACTURED = "manufactured"
GAUSSIAN_FORCING = "gaussian"
NONE = "none"


@dataclass(frozen=True)
class ManufacturedEllipse:
    """Divergence-free flow inside an ellipse, vanishing on its boundary.

    Stream function ``Phi = sin(pi/2 q)`` with the elliptic quadratic form
    ``q = ((x0 - c0) / a)**2 + ((x1 - c1) / b)**2``; velocity
    ``(dPhi/dx1, -dPhi/dx0)`` and pressure ``Phi - 2/pi``.
    """

    a: float = 0.2
    b: float = 0.015795
    center: tuple = (2.0, 2.0)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("semi-axes must be positive")

    def q(self, x):
        return ((x[0] - self.center[0]) / self.a) ** 2 + ((x[1] - self.center[1]) / self.b) ** 2

    def boundary_points(self, n: int) -> np.ndarray:
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.column_stack([self.center[0] + self.a * np.cos(t), self.center[1] + self.b * np.sin(t)])

    @property
    def area(self) -> float:
        return np.pi * self.a * self.b


@dataclass(frozen=True)
class StokesParams:
    nu_f: float = 1e-4
    rhs: str = MANUFACTURED
    rho_f: float = 1.0
    geometry: ManufacturedEllipse | None = None
    forcing: object = None

    def __post_init__(self):
        if not self.nu_f > 0:
            raise ValueError("nu_f must be positive")
        if not self.rho_f > 0:
            raise ValueError("rho_f must be positive")
        if self.rhs not in (MANUFACTURED, GAUSSIAN_FORCING, NONE):
            raise ValueError(f"unknown right-hand side mode {self.rhs!r}")
        if self.rhs == GAUSSIAN_FORCING and self.forcing is None:
            raise ValueError("gaussian right-hand side needs forcing parameters")


def manufactured_fields(geom: ManufacturedEllipse, nu_f: float):
    """Closed-form ``(u, grad u, p, f)`` evaluators for ``x`` of shape (2, ...).

    ``f = -nu Lap u + grad p``; ``grad u[i, j] = d u_i / d x_j``.
    """
    s = 0.5 * np.pi
    a2, b2 = geom.a**2, geom.b**2
    cx, cy = geom.center

    def parts(x):
        qx = 2 * (x[0] - cx) / a2
        qy = 2 * (x[1] - cy) / b2
        arg = s * geom.q(x)
        return qx, qy, np.sin(arg), np.cos(arg)

    def u(x):
        qx, qy, S, C = parts(x)
        return np.stack([s * C * qy, -s * C * qx])

    def grad_u(x):
        qx, qy, S, C = parts(x)
        pxy = -s * s * S * qx * qy
        pxx = -s * s * S * qx**2 + s * C * 2 / a2
        pyy = -s * s * S * qy**2 + s * C * 2 / b2
        return np.stack([np.stack([pxy, pyy]), np.stack([-pxx, -pxy])])

    def p(x):
        return np.sin(s * geom.q(x)) - 2 / np.pi

    def f(x):
        qx, qy, S, C = parts(x)
        qxx, qyy = 2 / a2, 2 / b2
        s2, s3 = s * s, s**3
        pxxx = -s3 * C * qx**3 - 3 * s2 * S * qx * qxx
        pyyy = -s3 * C * qy**3 - 3 * s2 * S * qy * qyy
        pxxy = -s3 * C * qy * qx**2 - s2 * S * qy * qxx
        pxyy = -s3 * C * qx * qy**2 - s2 * S * qx * qyy
        lap1 = pxxy + pyyy
        lap2 = -(pxxx + pxyy)
        return np.stack([-nu_f * lap1 + s * C * qx, -nu_f * lap2 + s * C * qy])

    return u, grad_u, p, f


@dataclass
class StokesSystem:
    """Assembled saddle point matrix ``[[A, B^T, 0], [B, 0, m], [0, m^T, 0]]``."""

    velocity_space: Space
    pressure_space: Space
    matrix: sps.csr_matrix
    rhs: np.ndarray

    @property
    def n_velocity(self) -> int:
        return self.velocity_space.ndofs

    @property
    def pressure_slice(self) -> slice:
        nv = self.velocity_space.ndofs
        return slice(nv, nv + self.pressure_space.ndofs)


def stokes_spaces(mesh: Mesh, region=FLUID):
    return Space(mesh, 2, 2, restriction=region), Space(mesh, 1, 1, restriction=region)


def viscous_matrix(V: Space, nu: float, rho: float = 1.0):
    """``(rho nu (grad u + grad u^T), grad v)`` on the space's cells."""
    return assemble_matrix(lambda u, v, w: 2 * rho * nu * ddot(sym(u.grad), v.grad), V, degree=2)


def divergence_matrix(V: Space, Q: Space):
    """``-(div u, q)`` with rows over Q, columns over V."""
    return assemble_matrix(lambda u, q, w: -(u.grad[0, 0] + u.grad[1, 1]) * q.value, V, Q, degree=2)


def assemble_stokes(mesh: Mesh, params: StokesParams, region=FLUID) -> StokesSystem:
    V, Q = stokes_spaces(mesh, region)
    A = viscous_matrix(V, params.nu_f, params.rho_f)
    B = divergence_matrix(V, Q)
    m = assemble_vector(lambda q, w: q.value, Q, degree=1)
    K = sps.bmat([[A, B.T, None], [B, None, sps.csr_matrix(m[:, None])],
                  [None, sps.csr_matrix(m[None, :]), None]], format="csr")
    rhs = np.zeros(K.shape[0])
    f = _forcing(params)
    if f is not None:
        rhs[:V.ndofs] = assemble_vector(lambda v, w: params.rho_f * (w.f[0] * v.value[0] + w.f[1] * v.value[1]),
                                        V, coeffs={"f": f}, degree=6)
    return StokesSystem(V, Q, K, rhs)


def _forcing(params: StokesParams):
    if params.rhs == MANUFACTURED:
        return manufactured_fields(params.geometry or ManufacturedEllipse(), params.nu_f)[3]
    if params.rhs == GAUSSIAN_FORCING:
        from .fsi import gaussian_forcing
        return lambda x: gaussian_forcing(x, params.forcing)
    return None


def solve_stokes(mesh: Mesh, params: StokesParams, boundary_velocity=None, region=FLUID, rtol: float = 1e-10):
    """Taylor-Hood solution on the ``region`` cells of ``mesh``.

    The velocity is prescribed on the boundary of the region: zero by
    default, or ``boundary_velocity(x)`` (x of shape (2, n)) interpolated
    at the boundary nodes. The pressure has zero mean.

    Returns ``(velocity, pressure)`` as P2 / P1 functions.
    """
    sys = assemble_stokes(mesh, params, region)
    V, Q = sys.velocity_space, sys.pressure_space
    if len(V.cells) == 0:
        raise ValueError("mesh has no cells in the fluid region")
    bd = V.restriction_boundary_dofs() if region is not None else V.boundary_dofs()
    g = np.zeros(V.ndofs)
    if boundary_velocity is not None:
        g = V.interpolate(boundary_velocity).coeffs
    K, b = _eliminate(sys.matrix, sys.rhs, bd, g[bd])
    x = solve_matrix(K, b, rtol=rtol, ordering="nested-dissection")
    u = FeFunction(V, x[:V.ndofs])
    p = FeFunction(Q, x[sys.pressure_slice])
    return u, p


def _eliminate(K, b, dofs, vals):
    n = K.shape[0]
    g = np.zeros(n)
    g[dofs] = vals
    b = b - K @ g
    keep = np.ones(n)
    keep[dofs] = 0.0
    D = sps.diags(keep)
    K = (D @ K @ D + sps.diags(1.0 - keep)).tocsr()
    b[dofs] = vals
    return K, b


def mass_residual(u: FeFunction, p: FeFunction) -> np.ndarray:
    """Discrete divergence ``(div u, q)`` for every pressure basis function."""
    B = divergence_matrix(u.space, p.space)
    return B @ u.coeffs


def stokes_errors(u: FeFunction, p: FeFunction, geom: ManufacturedEllipse, nu_f: float):
    """``(L2(u), H1(u), L2(p))`` against the manufactured fields.

    Both pressures are normalised to zero mean on the discrete domain.
    """
    ue, gue, pe, _ = manufactured_fields(geom, nu_f)
    l2u, h1u = error_norms(u, ue, gue)
    from .fem import integrate
    cells = p.space.cells
    vol = p.mesh.areas[cells].sum()
    shift = integrate(lambda w: pe(w.x), p.mesh, cells=cells, degree=6) / vol
    l2p, _ = error_norms(p, lambda x: pe(x) - shift)
    return l2u, h1u, l2p


def ellipse_mesh(geom: ManufacturedEllipse, h: float, domain=(0.0, 4.0, 0.0, 4.0), n_boundary=None) -> Mesh:
    """Fitted mesh with the polygonal ellipse (vertices on the ellipse) as FLUID."""
    if n_boundary is None:
        perim = np.pi * (3 * (geom.a + geom.b) - np.sqrt((3 * geom.a + geom.b) * (geom.a + 3 * geom.b)))
        n_boundary = max(16, int(np.ceil(perim / h)))
    # uniform in the angle: dense at the tips where the curvature is largest
    curve = BoundaryCurve(geom.boundary_points(n_boundary), POLYLINE)
    # the whole ellipse lies within b of its boundary: keep it uniformly at size h
    return remesh_fitted(domain, curve, SizeField(h, min(100 * h, 2.0), fine_radius=geom.b))


def convergence_table(rows):
    """Observed orders between consecutive rows ``(h, e1, e2, ...)``."""
    rows = np.asarray(rows, float)
    h = rows[:, 0]
    out = np.full((len(rows), rows.shape[1] - 1), np.nan)
    for k in range(1, len(rows)):
        out[k] = np.log(rows[k - 1, 1:] / rows[k, 1:]) / np.log(h[k - 1] / h[k])
    return out


def write_error_table(rows, path):
    """CSV with columns level, h, L2(u), H1(u), L2(p)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["level", "h", "l2_u", "h1_u", "l2_p"])
        for r in rows:
            wr.writerow([int(r[0])] + [f"{v:.10e}" for v in r[1:]])
