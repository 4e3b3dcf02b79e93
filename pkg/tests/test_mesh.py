import numpy as np
import pytest

from pfcrack.mesh import (FLUID, INTERFACE, OUTER, PIECEWISE_QUADRATIC, POLYLINE, SOLID, BoundaryCurve,
                          DegenerateGeometryError, GeometryError, Mesh, PointNotFoundError, SizeField,
                          check_conforming, generate_graded_mesh, locate_point, locate_points, rectangle_mesh,
                          refine_uniform, remesh_fitted)

DOMAIN = (0.0, 4.0, 0.0, 4.0)


def _interface_sides(mesh):
    """Regions on both sides of every INTERFACE edge."""
    et = mesh.edge_triangles
    key = {tuple(e): i for i, e in enumerate(mesh.edges)}
    out = []
    for a, b in mesh.edges_with_tag(INTERFACE):
        k = key[tuple(sorted((a, b)))]
        out.append(sorted(mesh.region[et[k]]))
    return np.array(out)


def test_sneddon_slit_mesh_sizes():
    h = 0.02
    mesh = generate_graded_mesh(DOMAIN, [(1.8, 2.2, 2 - h, 2 + h)], SizeField(h, 2.0))
    assert check_conforming(mesh)
    assert np.all(mesh.signed_areas > 0)
    e = mesh.edges
    mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    near = (np.abs(mid[:, 0] - 2) < 0.25) & (np.abs(mid[:, 1] - 2) < 0.05)
    length = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    assert 0.01 <= length[near].min() <= 0.04
    assert np.isclose(mesh.areas.sum(), 16.0, rtol=1e-12)
    # far field is much coarser than the slit
    assert mesh.h.max() > 10 * h


def test_uniform_mesh_areas():
    h = 0.1
    mesh = rectangle_mesh((0.0, 1.0, 0.0, 1.0), h)
    ref = h**2 * np.sqrt(3) / 4
    assert np.all(mesh.areas < 4 * ref) and np.all(mesh.areas > ref / 4)
    assert np.isclose(mesh.areas.sum(), 1.0, rtol=1e-12)


def test_tslit_mesh_resolves_both_rectangles():
    h = 0.01
    slits = [(1.9, 2.1, 2 - h, 2 + h), (2.1 - h, 2.1 + h, 1.9, 2.1)]
    mesh = generate_graded_mesh(DOMAIN, slits, SizeField(h, 1.0))
    assert check_conforming(mesh)
    # every slit corner is a mesh vertex
    corners = [(1.9, 2 - h), (1.9, 2 + h), (2.1 - h, 1.9), (2.1 + h, 1.9), (2.1 - h, 2.1), (2.1 + h, 2.1)]
    for c in corners:
        assert np.min(np.linalg.norm(mesh.vertices - c, axis=1)) < 1e-12


def test_graded_adjacent_size_ratio():
    h = 0.02
    mesh = generate_graded_mesh(DOMAIN, [(1.8, 2.2, 2 - h, 2 + h)], SizeField(h, 2.0))
    nb = mesh.neighbors
    hs = mesh.h
    i, k = np.nonzero(nb >= 0)
    ratio = hs[i] / hs[nb[i, k]]
    assert ratio.max() <= 4.0


def test_thin_slit_rejected():
    with pytest.raises(DegenerateGeometryError):
        generate_graded_mesh(DOMAIN, [(1.8, 2.2, 2 - 1e-4, 2 + 1e-4)], SizeField(0.02, 2.0))


def test_size_field_invariants():
    with pytest.raises(ValueError):
        SizeField(1.0, 0.5)
    with pytest.raises(ValueError):
        SizeField(0.0, 1.0)
    s = SizeField(0.1, 1.0, grading=0.5)
    assert np.allclose(s([0.0, 1.0, 10.0]), [0.1, 0.6, 1.0])


def test_fitted_ellipse_area():
    a, b = 0.2, 0.015795
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    pts = np.column_stack([2 + a * np.cos(t), 2 + b * np.sin(t)])
    mesh = remesh_fitted(DOMAIN, BoundaryCurve(pts, PIECEWISE_QUADRATIC), SizeField(0.005, 0.5))
    assert abs(mesh.region_area(FLUID) / (np.pi * a * b) - 1) < 0.02
    assert np.isclose(mesh.areas.sum(), 16.0, rtol=1e-12)
    assert check_conforming(mesh)


def test_fitted_square_hole_exact():
    sq = np.array([[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]])
    mesh = remesh_fitted(DOMAIN, BoundaryCurve(sq, POLYLINE), SizeField(0.25, 1.0))
    assert abs(mesh.region_area(FLUID) - 4.0) < 1e-12
    assert abs(mesh.region_area(FLUID) + mesh.region_area(SOLID) - 16.0) < 1e-12
    sides = _interface_sides(mesh)
    assert len(sides) > 0
    assert np.all(sides == [SOLID, FLUID])
    # outer edges carry the outer tag only
    ob = mesh.vertices[mesh.edges_with_tag(OUTER)]
    on_box = np.isclose(ob, 0.0) | np.isclose(ob, 4.0)
    assert np.all(on_box.any(axis=2))


def test_self_intersecting_curve_rejected():
    bow = np.array([[1.0, 1.0], [3.0, 3.0], [3.0, 1.0], [1.0, 3.0]])
    with pytest.raises(GeometryError):
        remesh_fitted(DOMAIN, BoundaryCurve(bow, POLYLINE), SizeField(0.25, 1.0))


def test_locate_vertex_and_centroid(unit_mesh):
    m = unit_mesh
    k, lam = locate_point(m, m.vertices[m.triangles[0, 0]])
    assert k == 0
    assert np.allclose(lam, [1, 0, 0], atol=1e-12)
    for k in (3, 17, m.n_triangles - 1):
        kk, lam = locate_point(m, m.centroids[k])
        assert kk == k
        assert np.allclose(lam, 1 / 3)


def test_locate_random_points_brute_force(unit_mesh, rng):
    m = unit_mesh
    pts = rng.uniform(0, 1, (200, 2))
    cells, _ = locate_points(m, pts)
    for x, c in zip(pts, cells):
        lam = m.barycentric(np.arange(m.n_triangles), np.broadcast_to(x, (m.n_triangles, 2)))
        owners = np.flatnonzero(lam.min(axis=1) >= -1e-10)
        assert c == owners.min()


def test_locate_outside_raises(unit_mesh):
    with pytest.raises(PointNotFoundError):
        locate_point(unit_mesh, (1.5, 0.5))


def test_refinement_preserves_conformity_and_tags():
    sq = np.array([[1.0, 1.0], [3.0, 1.0], [3.0, 3.0], [1.0, 3.0]])
    mesh = remesh_fitted(DOMAIN, BoundaryCurve(sq, POLYLINE), SizeField(0.5, 1.0))
    fine = refine_uniform(mesh)
    assert check_conforming(fine)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert np.isclose(fine.region_area(FLUID), 4.0)
    assert len(fine.edges_with_tag(INTERFACE)) == 2 * len(mesh.edges_with_tag(INTERFACE))
    assert np.all(_interface_sides(fine) == [SOLID, FLUID])


def test_piecewise_quadratic_tangent_continuity():
    t = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    pts = np.column_stack([np.cos(t), 0.5 * np.sin(t)])
    c = BoundaryCurve(pts, PIECEWISE_QUADRATIC)
    for i in range(c.n_pieces):
        d_end = c.derivative(i, 1.0)
        d_start = c.derivative((i + 1) % c.n_pieces, 0.0)
        cross = d_end[0] * d_start[1] - d_end[1] * d_start[0]
        assert abs(cross) < 1e-10 * np.linalg.norm(d_end) * np.linalg.norm(d_start)
        assert d_end @ d_start > 0


def test_mesh_is_immutable(unit_mesh):
    with pytest.raises(ValueError):
        unit_mesh.vertices[0, 0] = 5.0
    with pytest.raises(Exception):
        unit_mesh.vertices = np.zeros((3, 2))


def test_mismatched_tags_rejected():
    from pfcrack.mesh import MeshError
    with pytest.raises(MeshError):
        Mesh(np.eye(3)[:, :2], [[0, 1, 2]], [[0, 1]], [1, 2])
