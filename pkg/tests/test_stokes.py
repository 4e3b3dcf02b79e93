import csv

import numpy as np
import pytest

from pfcrack.mesh import FLUID, rectangle_mesh
from pfcrack.stokes import (GAUSSIAN_FORCING, ManufacturedEllipse, StokesParams, convergence_table, ellipse_mesh,
                            manufactured_fields, mass_residual, solve_stokes, stokes_errors, write_error_table)

GEOM = ManufacturedEllipse()
NU = 1e-4


def _fd_grad(f, x, d=1e-6):
    """Central differences of a vector field: out[i, j] = d f_i / d x_j."""
    out = []
    for j in range(2):
        e = np.zeros((2, 1))
        e[j] = d
        out.append((f(x + e) - f(x - e)) / (2 * d))
    return np.stack(out, axis=1)


@pytest.fixture(scope="module")
def pts():
    rng = np.random.default_rng(7)
    t = rng.uniform(0, 2 * np.pi, 50)
    r = rng.uniform(0, 0.9, 50)
    return np.stack([2 + GEOM.a * r * np.cos(t), 2 + GEOM.b * r * np.sin(t)])


def test_manufactured_velocity_vanishes_on_ellipse(pts):
    u, _, p, _ = manufactured_fields(GEOM, NU)
    x = GEOM.boundary_points(64).T
    # velocities inside are O(1 / b); the boundary values are roundoff of that
    assert np.max(np.abs(u(x))) < 1e-13 * np.max(np.abs(u(pts)))
    assert np.max(np.abs(p(x) - (1 - 2 / np.pi))) < 1e-12


def test_manufactured_gradient_and_divergence(pts):
    u, gu, _, _ = manufactured_fields(GEOM, NU)
    fd = _fd_grad(u, pts, d=1e-7)
    g = gu(pts)
    assert np.max(np.abs(fd - g)) < 1e-5 * np.max(np.abs(g))
    assert np.max(np.abs(g[0, 0] + g[1, 1])) < 1e-9 * np.max(np.abs(g))


def test_manufactured_forcing_balances_momentum(pts):
    u, gu, p, f = manufactured_fields(GEOM, 0.37)
    # -nu Lap u + grad p from differences of the closed-form gradient
    d = 1e-7
    lap = sum((gu(pts + e)[:, j] - gu(pts - e)[:, j]) / (2 * d)
              for j, e in enumerate(np.eye(2)[:, :, None] * d))
    gp = np.stack([(p(pts + e) - p(pts - e)) / (2 * d) for e in np.eye(2)[:, :, None] * d])
    ref = -0.37 * lap + gp
    assert np.max(np.abs(f(pts) - ref)) < 1e-5 * np.max(np.abs(ref))


def test_params_validation():
    with pytest.raises(ValueError):
        StokesParams(nu_f=0.0)
    with pytest.raises(ValueError):
        StokesParams(rho_f=-1.0)
    with pytest.raises(ValueError):
        StokesParams(rhs="other")
    with pytest.raises(ValueError):
        StokesParams(rhs=GAUSSIAN_FORCING)
    with pytest.raises(ValueError):
        ManufacturedEllipse(a=0.0)


def test_taylor_hood_reproduces_quadratic_flow():
    # u = (x^2, -2xy), p = 2 nu x solves Stokes without forcing and lies in P2/P1
    mesh = rectangle_mesh((0.0, 1.0, 0.0, 1.0), 0.2)
    nu = 0.3

    def ue(x):
        return np.stack([x[0] ** 2, -2 * x[0] * x[1]])

    u, p = solve_stokes(mesh, StokesParams(nu_f=nu, rhs="none"), boundary_velocity=ue, region=None)
    err = u.coeffs - u.space.interpolate(ue).coeffs
    assert np.max(np.abs(err)) < 1e-10
    pe = p.space.interpolate(lambda x: 2 * nu * x[0]).coeffs
    shift = np.mean(p.coeffs - pe)
    assert np.max(np.abs(p.coeffs - pe - shift)) < 1e-9


def test_discrete_divergence_vanishes():
    mesh = ellipse_mesh(GEOM, 0.016)
    u, p = solve_stokes(mesh, StokesParams(nu_f=NU, geometry=GEOM))
    r = mass_residual(u, p)
    assert np.max(np.abs(r)) <= 1e-12
    # zero-mean pressure
    from pfcrack.fem import integrate
    assert abs(integrate(lambda w: w.p.value, mesh, coeffs={"p": p}, cells=p.space.cells)) < 1e-12


def test_convergence_on_two_levels():
    rows = []
    for h in (0.016, 0.008):
        mesh = ellipse_mesh(GEOM, h)
        u, p = solve_stokes(mesh, StokesParams(nu_f=NU, geometry=GEOM))
        rows.append((h, *stokes_errors(u, p, GEOM, NU)))
    orders = convergence_table(rows)[1]
    assert orders[0] > 1.8 and orders[1] > 1.3 and orders[2] > 1.3


def test_ellipse_mesh_is_inscribed_polygon():
    mesh = ellipse_mesh(GEOM, 0.01)
    area = mesh.region_area(FLUID)
    assert area < GEOM.area and area > 0.99 * GEOM.area
    x = mesh.vertices[np.unique(mesh.triangles[mesh.region == FLUID])]
    assert np.all(GEOM.q(x.T) <= 1 + 1e-12)


def test_convergence_table_orders():
    h = np.array([0.1, 0.05, 0.025])
    rows = np.column_stack([h, 3 * h**2, h**1.5])
    t = convergence_table(rows)
    assert np.all(np.isnan(t[0]))
    assert np.allclose(t[1:], [[2.0, 1.5], [2.0, 1.5]])


def test_write_error_table(tmp_path):
    path = tmp_path / "err.csv"
    write_error_table([(0, 0.01, 1e-3, 2e-2, 3e-4), (1, 0.005, 2.5e-4, 1e-2, 1e-4)], path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["level"] for r in rows] == ["0", "1"]
    assert float(rows[1]["h1_u"]) == 1e-2
