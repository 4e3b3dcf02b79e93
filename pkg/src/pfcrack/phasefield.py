"""Quasi-static pressurized phase-field fracture with penalized irreversibility.

Each loading step solves the displacement problem with the phase-field of
the previous step frozen (degraded stiffness plus a pressure load acting
through the broken zone), then the phase-field problem, which is linear
apart from the penalty ``gamma * (phi - phi_old)^+``. The latter is solved
by a semismooth Newton method.

Plane strain is assumed throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .fem import FeFunction, Space, SparseSystem, assemble_matrix, assemble_vector, ddot, solve, solve_matrix, sym, trace
from .fem.assembly import identity_like
from .mesh import OUTER, Mesh


class ConvergenceError(RuntimeError):
    """Nonlinear iteration failed; ``history`` holds the residual norms."""

    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


def lame_from_E_nu(E: float, nu: float) -> tuple[float, float]:
    """Plane-strain Lamé parameters ``(mu, lambda)``."""
    if not E > 0:
        raise ValueError("Young's modulus must be positive")
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio {nu} outside (-1, 0.5)")
    return E / (2 * (1 + nu)), E * nu / ((1 + nu) * (1 - 2 * nu))


@dataclass
class PffParams:
    """Material and discretization parameters of the phase-field model."""

    E: float
    nu: float
    G_c: float
    p: float
    kappa: float
    eps: float
    gamma: float
    n_steps: int = 5

    def __post_init__(self):
        self.mu, self.lam = lame_from_E_nu(self.E, self.nu)
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        if not self.eps > 0 or not self.gamma > 0 or not self.G_c > 0:
            raise ValueError("eps, gamma and G_c must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one loading step")

    @classmethod
    def for_mesh_size(cls, h: float, E=1.0e5, nu=0.35, G_c=500.0, p=4.5e3, kappa=1e-10, n_steps=5,
                      eps_factor=0.5, gamma_factor=100.0):
        """Parameters scaled with the crack mesh size: ``eps = 0.5 sqrt(h)``, ``gamma = 100 / h**2``."""
        return cls(E=E, nu=nu, G_c=G_c, p=p, kappa=kappa, eps=eps_factor * np.sqrt(h),
                   gamma=gamma_factor / h**2, n_steps=n_steps)

    def check_mesh(self, mesh: Mesh):
        hmin = float(mesh.h.min())
        if not self.eps > hmin:
            raise ValueError(f"eps={self.eps:g} does not exceed the finest mesh size {hmin:g}")

    def degradation(self, phi):
        return (1 - self.kappa) * phi**2 + self.kappa


@dataclass
class StepRecord:
    step: int
    min_phi: float
    max_phi: float
    tcv: float
    penalty_slack: float
    newton_iterations: int


@dataclass
class PffState:
    """Displacement, phase-field and the phase-field of the previous step."""

    u: FeFunction
    phi: FeFunction
    phi_old: FeFunction
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def mesh(self) -> Mesh:
        return self.phi.space.mesh

    def bound_violation(self) -> float:
        """Largest excursion of the nodal phase-field outside [0, 1]."""
        c = self.phi.coeffs
        return float(max(0.0, c.max() - 1.0, -c.min()))

    def irreversibility_slack(self) -> float:
        return float(max(0.0, np.max(self.phi.coeffs - self.phi_old.coeffs)))


def initial_phasefield(mesh: Mesh, slits, tol: float = 1e-10) -> FeFunction:
    """P1 function that is 0 on nodes in the closed slit rectangles and 1 elsewhere."""
    V = Space(mesh, 1)
    x = V.dof_coords
    inside = np.zeros(len(x), bool)
    for x0, x1, y0, y1 in slits:
        inside |= ((x[:, 0] >= x0 - tol) & (x[:, 0] <= x1 + tol)
                   & (x[:, 1] >= y0 - tol) & (x[:, 1] <= y1 + tol))
    return FeFunction(V, np.where(inside, 0.0, 1.0))


def initial_state(mesh: Mesh, slits) -> PffState:
    phi = initial_phasefield(mesh, slits)
    return PffState(u=Space(mesh, 1, 2).zeros(), phi=phi, phi_old=phi.copy())


def _stress(grad_u, mu, lam):
    e = sym(grad_u)
    return 2 * mu * e + lam * trace(e) * identity_like(e)


def elasticity_matrix(space: Space, params: PffParams, phi_old: FeFunction | None = None):
    """``(g(phi_old) sigma(u), e(w))``; undegraded when ``phi_old`` is None."""
    mu, lam = params.mu, params.lam
    if phi_old is None:
        return assemble_matrix(lambda u, v, w: ddot(_stress(u.grad, mu, lam), sym(v.grad)), space, degree=0)
    return assemble_matrix(
        lambda u, v, w: params.degradation(w.phi.value) * ddot(_stress(u.grad, mu, lam), sym(v.grad)),
        space, coeffs={"phi": phi_old}, degree=2)


def pressure_load(space: Space, params: PffParams, phi_old: FeFunction):
    """Right-hand side ``-(phi_old^2 p, div w)``."""
    return assemble_vector(lambda v, w: -params.p * w.phi.value**2 * trace(v.grad), space,
                           coeffs={"phi": phi_old}, degree=2)


def solve_displacement(state: PffState, params: PffParams) -> FeFunction:
    """Linear elasticity with degraded stiffness and crack pressure, ``u = 0`` on the outer boundary."""
    V = state.u.space
    A = elasticity_matrix(V, params, state.phi_old)
    b = pressure_load(V, params, state.phi_old)
    sys = SparseSystem(A, b).constrain(V.boundary_dofs(OUTER))
    return FeFunction(V, solve(sys))


def _lumped_mass(space: Space, weight=None):
    mesh = space.mesh
    if weight is None:
        weight = np.ones(mesh.n_triangles)
    m = np.zeros(space.ndofs)
    np.add.at(m, space.cell_dofs(), np.repeat((weight * mesh.areas / 3.0)[:, None], 3, axis=1))
    return m


def driving_coefficient(u: FeFunction, params: PffParams) -> np.ndarray:
    """Per-triangle ``(1 - kappa) sigma(u):e(u) + 2 p div u`` for P1 displacements."""
    mesh = u.space.mesh
    cells = np.arange(mesh.n_triangles)
    _, g = u.at_reference(cells, np.array([[1 / 3, 1 / 3]]))
    g = g[..., 0]
    energy = ddot(_stress(g, params.mu, params.lam), sym(g))
    return (1 - params.kappa) * energy + 2 * params.p * trace(g)


def solve_phasefield(state: PffState, u: FeFunction, params: PffParams, max_iter: int = 50,
                     tol: float = 1e-10, return_info: bool = False):
    """Semismooth Newton solve of the penalized phase-field equation.

    Zeroth-order terms (driving term, ``G_c / eps`` reaction and the
    penalty) are mass-lumped so that the discrete operator keeps the sign
    structure of the continuous one. The natural condition applies on the
    outer boundary.
    """
    V = state.phi.space
    gc, eps = params.G_c, params.eps
    K = assemble_matrix(lambda a, b, w: gc * eps * (a.grad[0] * b.grad[0] + a.grad[1] * b.grad[1]), V, degree=0)
    react = _lumped_mass(V, driving_coefficient(u, params) + gc / eps)
    load = _lumped_mass(V) * gc / eps
    pen = params.gamma * _lumped_mass(V)
    A = (K + sps.diags(react)).tocsr()
    old = state.phi_old.coeffs
    phi = state.phi.coeffs.copy()

    def residual(x):
        return A @ x - load + pen * np.maximum(x - old, 0.0)

    # residual norms below this are rounding noise of the assembled operator
    floor = 1e3 * np.finfo(float).eps * (abs(A).sum(axis=1).max() + pen.max()) * np.sqrt(len(phi)) * max(1.0, np.abs(phi).max())
    history = []
    active = None
    for it in range(max_iter + 1):
        r = residual(phi)
        history.append(float(np.linalg.norm(r)))
        new_active = phi - old > 0
        # flips of dofs sitting on the kink up to rounding do not change the residual
        settled = active is not None and not np.any((new_active != active) & (np.abs(phi - old) > 1e-12))
        if settled and history[-1] <= max(tol, floor):
            break
        if it == max_iter:
            raise ConvergenceError(f"phase-field Newton did not converge in {max_iter} iterations "
                                   f"(residual {history[-1]:.3e})", history)
        active = new_active
        J = A + sps.diags(pen * active)
        phi = phi - solve_matrix(J, r, rtol=1e-12)
    out = FeFunction(V, phi)
    if return_info:
        return out, {"iterations": it, "history": history}
    return out


def run_loading_steps(params: PffParams, mesh: Mesh, slits, state: PffState | None = None,
                      log=None) -> PffState:
    """Run ``params.n_steps`` staggered loading steps from the initial slit state."""
    from .quantities import tcv_integral

    params.check_mesh(mesh)
    state = initial_state(mesh, slits) if state is None else state
    for _ in range(params.n_steps):
        state.phi_old = state.phi.copy()
        state.u = solve_displacement(state, params)
        state.phi, info = solve_phasefield(state, state.u, params, return_info=True)
        state.step += 1
        c = state.phi.coeffs
        rec = StepRecord(step=state.step, min_phi=float(c.min()), max_phi=float(c.max()),
                         tcv=tcv_integral(state.u, state.phi), penalty_slack=state.irreversibility_slack(),
                         newton_iterations=info["iterations"])
        state.history.append(rec)
        if log is not None:
            log(rec)
    return state


def write_history_csv(state: PffState, path):
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "min_phi", "max_phi", "tcv", "penalty_slack", "newton_iterations"])
        for r in state.history:
            vals = [repr(float(v)) for v in (r.min_phi, r.max_phi, r.tcv, r.penalty_slack)]
            wr.writerow([r.step, *vals, r.newton_iterations])
