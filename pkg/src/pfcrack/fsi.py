"""Stationary monolithic ALE fluid-structure interaction on a fitted two-region mesh.

Unknowns are the velocity ``v`` and displacement ``u`` (both global vector
P2 fields), the fluid pressure ``p`` (P1 on the FLUID cells) and one
multiplier fixing the pressure mean. With ``F = I + grad u``,
``J = det F`` and the cofactor ``C = J F^-T`` the residual blocks read

* extension: ``-(v, psi)_S + (alpha_u grad u, grad psi)_F``
* momentum:  ``(J sigma_f F^-T, grad phi)_F + (sigma_s(u), grad phi)_S - (rho_f J f, phi)_F``
* mass:      ``-(C : grad v, xi)_F + lambda (1, xi)_F``
* mean:      ``(p, 1)_F``

where ``J sigma_f F^-T = -p C + rho_f nu_f / J (grad v C^T C + C grad v^T C)``.
The mass term uses ``div(C^T v) = C : grad v``, which holds cellwise
because the columns of the cofactor of a gradient are divergence free.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sps

from .fem import FeFunction, Space, assemble_matrix, assemble_vector, ddot, matmul, solve_matrix, sym, transpose
from .mesh import FLUID, OUTER, SOLID, Mesh
from .phasefield import lame_from_E_nu


class InvalidStateError(ValueError):
    """Non-positive ``J`` at a quadrature point."""


class FsiConvergenceError(RuntimeError):
    def __init__(self, msg, history=None, state=None):
        super().__init__(msg)
        self.history = history or []
        self.state = state


@dataclass(frozen=True)
class GaussianForcing:
    """``f(x) = (0, c1 exp(-c2 |x - x0|^2))``."""

    c1: float = 1e-4
    c2: float = 1e3
    x0: tuple = (2.05, 2.01053)

    def __call__(self, x):
        return gaussian_forcing(x, self)


def gaussian_forcing(x, forcing: GaussianForcing):
    """Evaluate the forcing at ``x`` of shape (2, ...); returns (2, ...)."""
    x = np.asarray(x, float)
    r2 = (x[0] - forcing.x0[0]) ** 2 + (x[1] - forcing.x0[1]) ** 2
    f2 = forcing.c1 * np.exp(-forcing.c2 * r2)
    return np.stack([np.zeros_like(f2), f2])


@dataclass(frozen=True)
class FsiParams:
    nu_f: float = 1e-3
    rho_f: float = 1e3
    alpha_u: float = 1e-6
    forcing: GaussianForcing = field(default_factory=GaussianForcing)
    E: float = 1e5
    nu_s: float = 0.35

    def __post_init__(self):
        for name in ("nu_f", "rho_f", "alpha_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        lame_from_E_nu(self.E, self.nu_s)

    @property
    def mu(self) -> float:
        return lame_from_E_nu(self.E, self.nu_s)[0]

    @property
    def lam(self) -> float:
        return lame_from_E_nu(self.E, self.nu_s)[1]

    def to_dict(self):
        d = asdict(self)
        d["forcing"]["x0"] = list(self.forcing.x0)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "forcing" in d and isinstance(d["forcing"], dict):
            fd = dict(d["forcing"])
            fd["x0"] = tuple(fd.get("x0", GaussianForcing.x0))
            d["forcing"] = GaussianForcing(**fd)
        return cls(**d)


def cof(A):
    """Cofactor ``det(A) A^-T`` of (2, 2, ...) arrays; linear in A."""
    return np.stack([np.stack([A[1, 1], -A[1, 0]]), np.stack([-A[0, 1], A[0, 0]])])


class AleKinematics:
    """``F = I + grad u``, ``J = det F`` and ``C = J F^-T`` at quadrature points."""

    def __init__(self, grad_u):
        self.F = grad_u.copy()
        self.F[0, 0] += 1.0
        self.F[1, 1] += 1.0
        self.J = self.F[0, 0] * self.F[1, 1] - self.F[0, 1] * self.F[1, 0]
        self.C = cof(self.F)

    def check(self):
        if np.any(self.J <= 0):
            raise InvalidStateError(f"J <= 0 at {int(np.sum(self.J <= 0))} quadrature points "
                                    f"(min J = {self.J.min():.3e})")


@dataclass
class FsiSolution:
    v: FeFunction
    u: FeFunction
    p: FeFunction
    lam: float = 0.0
    iterations: int = 0
    history: list = field(default_factory=list)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.v.coeffs, self.u.coeffs, self.p.coeffs, [self.lam]])


class FsiProblem:
    """Spaces, constraints and assembled blocks for one fitted mesh."""

    def __init__(self, mesh: Mesh, params: FsiParams):
        if not np.any(mesh.region == FLUID):
            raise ValueError("mesh has no FLUID cells")
        self.mesh = mesh
        self.params = params
        self.V = Space(mesh, 2, 2)
        self.Q = Space(mesh, 1, 1, restriction=FLUID)
        self.fluid = np.flatnonzero(mesh.region == FLUID)
        self.solid = np.flatnonzero(mesh.region == SOLID)
        nV, nQ = self.V.ndofs, self.Q.ndofs
        self.nV, self.nQ = nV, nQ
        self.offsets = np.cumsum([0, nV, nV, nQ, 1])
        self.n = int(self.offsets[-1])
        # velocity vanishes on dofs touching no fluid cell; u and v vanish on the outer boundary
        touch = np.zeros(self.V.n_scalar, bool)
        touch[np.unique(self.V.scalar_cell_dofs(self.fluid))] = True
        v_fixed = np.union1d(self.V.expand(np.flatnonzero(~touch)), self.V.boundary_dofs(OUTER))
        u_fixed = self.V.boundary_dofs(OUTER)
        self.v_fixed = v_fixed
        self.u_fixed = u_fixed
        self.fixed = np.concatenate([v_fixed, nV + u_fixed])
        self._linear_blocks()

    # -- constant blocks --------------------------------------------------
    def _linear_blocks(self):
        V, Q, prm = self.V, self.Q, self.params
        mu, lam = prm.mu, prm.lam

        def elastic(u, v, w):
            e = sym(u.grad)
            return 2 * mu * ddot(e, v.grad) + lam * (u.grad[0, 0] + u.grad[1, 1]) * (v.grad[0, 0] + v.grad[1, 1])

        self.K_solid = assemble_matrix(elastic, V, cells=self.solid, degree=2)
        self.M_solid = assemble_matrix(lambda u, v, w: -(u.value[0] * v.value[0] + u.value[1] * v.value[1]),
                                       V, cells=self.solid, degree=4)
        self.L_fluid = assemble_matrix(lambda u, v, w: prm.alpha_u * ddot(u.grad, v.grad), V,
                                       cells=self.fluid, degree=2)
        self.mean = assemble_vector(lambda q, w: q.value, Q, degree=1)

    # -- state helpers ----------------------------------------------------
    def split(self, x):
        o = self.offsets
        return (FeFunction(self.V, x[o[0]:o[1]]), FeFunction(self.V, x[o[1]:o[2]]),
                FeFunction(self.Q, x[o[2]:o[3]]), float(x[o[3]]))

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.n)

    def _coeffs(self, x):
        v, u, p, _ = self.split(x)
        return {"V": v, "U": u, "P": p, "f": self.params.forcing}

    # -- residual ---------------------------------------------------------
    def residual(self, x, check: bool = True, constrained: bool = True) -> np.ndarray:
        """Residual ordered as [extension; momentum; mass; mean].

        Row ``k`` of the extension block pairs with velocity dof ``k`` and
        row ``k`` of the momentum block with displacement dof ``k``; rows of
        constrained dofs are zeroed unless ``constrained`` is False.
        """
        V, Q, prm = self.V, self.Q, self.params
        v, u, p, lam = self.split(x)
        rn = prm.rho_f * prm.nu_f
        co = self._coeffs(x)
        if check:
            self.jacobian_determinant(u)

        def mom(phi, w):
            k = AleKinematics(w.U.grad)
            gv = w.V.grad
            C = k.C
            S = rn / k.J * (matmul(matmul(gv, transpose(C)), C) + matmul(matmul(C, transpose(gv)), C)) - w.P.value * C
            return ddot(S, phi.grad) - prm.rho_f * k.J * (w.f[0] * phi.value[0] + w.f[1] * phi.value[1])

        def mass(xi, w):
            k = AleKinematics(w.U.grad)
            return -ddot(k.C, w.V.grad) * xi.value

        r_ext = self.M_solid @ v.coeffs + self.L_fluid @ u.coeffs
        r_mom = assemble_vector(mom, V, coeffs=co, cells=self.fluid, degree=6) + self.K_solid @ u.coeffs
        r_mass = assemble_vector(mass, Q, coeffs=co, degree=4) + lam * self.mean
        r_mean = self.mean @ p.coeffs
        r = np.concatenate([r_ext, r_mom, r_mass, [r_mean]])
        if constrained:
            r[self.fixed] = 0.0
        return r

    def jacobian_determinant(self, u: FeFunction):
        """Minimum ``J`` over quadrature points of all cells; raises when non-positive."""
        from .fem import triangle_rule
        pts, _ = triangle_rule(4)
        _, g = u.at_reference(np.arange(self.mesh.n_triangles), pts)
        k = AleKinematics(g)
        k.check()
        return float(k.J.min())

    # -- Jacobian ---------------------------------------------------------
    def jacobian(self, x) -> sps.csr_matrix:
        """Exact derivative of the unconstrained :meth:`residual`."""
        V, Q, prm = self.V, self.Q, self.params
        rn = prm.rho_f * prm.nu_f
        co = self._coeffs(x)
        fl = self.fluid

        def visc(gv, C, J):
            return rn / J * (matmul(matmul(gv, transpose(C)), C) + matmul(matmul(C, transpose(gv)), C))

        def d_mom_dv(dv, phi, w):
            k = AleKinematics(w.U.grad)
            return ddot(visc(dv.grad, k.C, k.J), phi.grad)

        def d_mom_du(du, phi, w):
            k = AleKinematics(w.U.grad)
            gv, C, J = w.V.grad, k.C, k.J
            dC = cof(du.grad)
            dJ = ddot(C, du.grad)
            dCtC = matmul(transpose(dC), C) + matmul(transpose(C), dC)
            gvt = transpose(gv)
            dS = (-dJ / J) * visc(gv, C, J) + rn / J * (matmul(gv, dCtC) + matmul(matmul(dC, gvt), C)
                                                         + matmul(matmul(C, gvt), dC)) - w.P.value * dC
            return ddot(dS, phi.grad) - prm.rho_f * dJ * (w.f[0] * phi.value[0] + w.f[1] * phi.value[1])

        def d_mom_dp(dp, phi, w):
            k = AleKinematics(w.U.grad)
            return -dp.value * ddot(k.C, phi.grad)

        def d_mass_dv(dv, xi, w):
            k = AleKinematics(w.U.grad)
            return -ddot(k.C, dv.grad) * xi.value

        def d_mass_du(du, xi, w):
            return -ddot(cof(du.grad), w.V.grad) * xi.value

        A_vv = assemble_matrix(d_mom_dv, V, coeffs=co, cells=fl, degree=4)
        A_vu = assemble_matrix(d_mom_du, V, coeffs=co, cells=fl, degree=6) + self.K_solid
        A_vp = assemble_matrix(d_mom_dp, Q, V, coeffs=co, cells=fl, degree=4)
        B_v = assemble_matrix(d_mass_dv, V, Q, coeffs=co, cells=fl, degree=4)
        B_u = assemble_matrix(d_mass_du, V, Q, coeffs=co, cells=fl, degree=4)
        m = sps.csr_matrix(self.mean[:, None])
        Jm = sps.bmat([[self.M_solid, self.L_fluid, None, None],
                       [A_vv, A_vu, A_vp, None],
                       [B_v, B_u, None, m],
                       [None, None, m.T, None]], format="csr")
        return Jm

    def active_sets(self, freeze_displacement: bool = False):
        """Equation rows and unknown columns of the reduced Newton system.

        Row ``k`` is paired with unknown ``k`` so that the diagonal is
        nonzero away from the pressure: interface velocities take their
        extension rows, velocities inside the fluid their momentum rows and
        displacements the remaining row of the same dof. With a frozen
        displacement the unknowns are the free velocity, pressure and
        multiplier only.
        """
        nV = self.nV
        free = np.ones(self.n, bool)
        free[self.fixed] = False
        in_solid = np.zeros(self.V.n_scalar, bool)
        in_solid[np.unique(self.V.scalar_cell_dofs(self.solid))] = True
        inner = np.ones(nV, bool)
        inner[self.V.expand(np.flatnonzero(in_solid))] = False
        swap = np.flatnonzero(free[:nV] & inner)
        row_of = np.arange(self.n)
        row_of[swap], row_of[nV + swap] = nV + swap, swap
        if freeze_displacement:
            cols = np.concatenate([np.flatnonzero(free[:nV]), np.arange(2 * nV, self.n)])
        else:
            cols = np.flatnonzero(free)
        return row_of[cols], cols


def fsi_residual(sol: FsiSolution, params: FsiParams) -> np.ndarray:
    prob = FsiProblem(sol.v.mesh, params)
    return prob.residual(sol.vector())


def fsi_newton_solve(params: FsiParams, mesh: Mesh, initial: FsiSolution | None = None, atol: float = 1e-10,
                     rtol: float = 1e-10, max_iter: int = 25, max_backtracks: int = 10,
                     freeze_displacement: bool = False, problem: FsiProblem | None = None, log=None) -> FsiSolution:
    """Newton's method with exact Jacobian and backtracking line search.

    Converged when the residual norm drops below ``atol`` or ``rtol``
    times the first residual. ``freeze_displacement`` pins ``u`` to its
    initial value, which reduces the fluid block to plain Stokes.
    """
    prob = FsiProblem(mesh, params) if problem is None else problem
    x = prob.zero_state() if initial is None else initial.vector().copy()
    rows, cols = prob.active_sets(freeze_displacement)

    def res(y):
        return prob.residual(y, constrained=False)[rows]

    r = res(x)
    r0 = np.linalg.norm(r)
    history = [float(r0)]
    it = 0
    while True:
        nr = np.linalg.norm(r)
        if log:
            log(f"newton {it}: |R| = {nr:.3e}")
        if nr <= atol or nr <= rtol * r0:
            break
        if it >= max_iter:
            raise FsiConvergenceError(f"no convergence in {max_iter} Newton steps (|R| = {nr:.3e})", history,
                                      prob.split(x))
        Jm = prob.jacobian(x)[rows][:, cols]
        dx = np.zeros(prob.n)
        dx[cols] = solve_matrix(Jm, -r, rtol=1e-10, ordering="nested-dissection")
        step = 1.0
        for _ in range(max_backtracks + 1):
            y = x + step * dx
            try:
                ry = res(y)
            except InvalidStateError:
                step *= 0.5
                continue
            if np.linalg.norm(ry) < nr or np.linalg.norm(ry) <= atol:
                break
            step *= 0.5
        else:
            raise FsiConvergenceError(f"line search failed at Newton step {it} (|R| = {nr:.3e})", history,
                                      prob.split(x))
        x, r = y, ry
        it += 1
        history.append(float(np.linalg.norm(r)))
    v, u, p, lam = prob.split(x)
    return FsiSolution(v, u, p, lam, it, history)


def point_values(sol: FsiSolution, points) -> np.ndarray:
    """Displacement at the given points, shape (n, 2)."""
    pts = np.atleast_2d(np.asarray(points, float))
    return np.asarray(sol.u(pts)).T


def write_history(sol: FsiSolution, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "residual"])
        for i, r in enumerate(sol.history):
            wr.writerow([i, f"{r:.10e}"])


def write_point_values(values: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: list(map(float, v)) for k, v in values.items()}, fh, indent=2)
