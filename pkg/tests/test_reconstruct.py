import numpy as np
import pytest
import scipy.sparse as sps
from shapely.geometry import Point, Polygon

from pfcrack.fem import FeFunction, Space, assemble_matrix, dot
from pfcrack.mesh import FLUID, POLYLINE, GeometryError, SizeField, rectangle_mesh
from pfcrack.quantities import C_LS, Centreline, CodProfile
from pfcrack.reconstruct import (EXPLICIT_LS, EXPLICIT_MESH, CollapseError, CrackGeometry, LevelSet,
                                 ReconstructionError, boundary_curve, closed_loop, halfplane_levelset,
                                 harmonic_extension, interface_points_from_cod, jump_interval, reconstruct,
                                 signed_distance_levelset, tjunction_geometry, transport_levelset)

from conftest import sneddon_state


@pytest.fixture(scope="module")
def box():
    return rectangle_mesh((0.0, 4.0, 0.0, 4.0), 0.1)


def _ls(mesh, f):
    return LevelSet(Space(mesh, 1).interpolate(f))


def _ellipse_profile(a=0.2, b=0.02, n=41, centre=(2.0, 2.0), horizontal=True):
    cl = Centreline.horizontal(centre[1]) if horizontal else Centreline.vertical(centre[0])
    c = centre[0] if horizontal else centre[1]
    s = np.linspace(c - 1.5 * a, c + 1.5 * a, n)
    w = 2 * b * np.sqrt(np.clip(1 - ((s - c) / a) ** 2, 0, None))
    return CodProfile(s, w, cl, (c - a, c + a))


def test_levelset_area_exact_for_linear_cut(box):
    # {y < x + 0.5} in [0, 4]^2 misses the triangle with legs 3.5
    ls = _ls(box, lambda x: x[1] - x[0] - 0.5)
    assert abs(ls.area() - (16 - 3.5**2 / 2)) < 1e-12
    assert abs(_ls(box, lambda x: x[1] - 1.3).area() - 5.2) < 1e-12


def test_levelset_area_of_partition_adds_up(box):
    ls = _ls(box, lambda x: np.hypot(x[0] - 2, x[1] - 2) - 0.7)
    left = np.flatnonzero(box.centroids[:, 0] < 2.03)
    right = np.setdiff1d(np.arange(box.n_triangles), left)
    assert abs(ls.area(left) + ls.area(right) - ls.area()) < 1e-13
    assert abs(ls.area() - np.pi * 0.49) < 0.01 * np.pi * 0.49


def test_signed_distance_sign_and_values(box):
    poly = np.array([[1.5, 1.5], [2.5, 1.6], [2.4, 2.5], [1.6, 2.3]])
    ls = signed_distance_levelset(box, poly)
    P = Polygon(poly)
    x = box.vertices
    ref = np.array([P.exterior.distance(Point(p)) * (-1 if P.contains(Point(p)) else 1) for p in x])
    on = np.array([P.exterior.distance(Point(p)) < 1e-12 for p in x])
    assert np.allclose(ls.values[~on], ref[~on], atol=1e-12)
    assert abs(ls.area() - P.area) < 0.02 * P.area


def test_signed_distance_rejects_degenerate(box):
    with pytest.raises(ReconstructionError):
        signed_distance_levelset(box, [[1, 1], [2, 2], [3, 3]])


def test_halfplane_levelset_sign_matches_convex_polygon(box):
    poly = np.array([[1.5, 1.5], [2.5, 1.6], [2.4, 2.5], [1.6, 2.3]])
    for pts in (poly, poly[::-1]):
        ls = halfplane_levelset(box, pts)
        P = Polygon(pts)
        inside = np.array([P.contains(Point(p)) for p in box.vertices])
        dist = np.array([P.exterior.distance(Point(p)) for p in box.vertices])
        sure = dist > 1e-9
        assert np.array_equal(ls.values[sure] < 0, inside[sure])


def test_isoline_topology(box):
    one = _ls(box, lambda x: np.hypot(x[0] - 2, x[1] - 2) - 0.5)
    assert one.is_single_closed_curve()
    two = _ls(box, lambda x: np.minimum(np.hypot(x[0] - 1, x[1] - 1), np.hypot(x[0] - 3, x[1] - 3)) - 0.4)
    n, closed = two.components()
    assert n == 2 and all(closed)
    assert not two.is_single_closed_curve()
    none = _ls(box, lambda x: x[0] + 1)
    assert not none.has_both_signs() and none.components() == (0, [])


def test_isoline_segments_lie_on_zero_line(box):
    ls = _ls(box, lambda x: x[1] - 0.3 * x[0] - 1.05)
    segs, ids = ls.isoline_segments()
    assert len(segs) > 0 and ids.shape == (len(segs), 2)
    p = segs.reshape(-1, 2)
    assert np.max(np.abs(p[:, 1] - 0.3 * p[:, 0] - 1.05)) < 1e-12


def test_aperture_of_band(box):
    ls = _ls(box, lambda x: np.abs(x[1] - 2.02) - 0.33)
    for x0 in (0.55, 2.0, 3.71):
        assert abs(ls.aperture(x0) - 0.66) < 1e-12
    assert ls.aperture(2.0, y_range=(3.0, 4.0)) == 0.0


def test_interface_points_and_loop():
    prof = _ellipse_profile()
    up, lo = interface_points_from_cod(prof)
    inner = prof.inside()
    assert np.allclose(up[:, 1] - lo[:, 1], inner.w)
    assert np.allclose(up[[0, -1]], lo[[0, -1]])
    assert np.allclose(up[[0, -1], 0], prof.tips)
    loop = closed_loop(up, lo)
    assert len(loop) == len(up) + len(lo) - 2
    assert len(np.unique(loop.round(14), axis=0)) == len(loop)
    assert Polygon(loop).exterior.is_ccw
    # polygon area against the trapezoidal integral of the opening
    assert abs(Polygon(loop).area - np.trapezoid(inner.w, inner.s)) < 1e-14


def test_interface_points_need_tips():
    prof = _ellipse_profile()
    prof.tips = (np.nan, np.nan)
    with pytest.raises(ReconstructionError):
        interface_points_from_cod(prof)
    with pytest.raises(ReconstructionError):
        closed_loop(np.zeros((2, 2)), np.zeros((2, 2)))


def test_boundary_curve_rejects_crossing_faces():
    s = np.linspace(1.8, 2.2, 21)
    w = 0.02 * np.sin(np.pi * (s - 1.8) / 0.2)  # changes sign in the middle
    up = np.column_stack([s, 2 + w / 2])
    lo = np.column_stack([s, 2 - w / 2])
    with pytest.raises(GeometryError):
        boundary_curve(up, lo, POLYLINE)


def test_geometry_json_roundtrip():
    up, lo = interface_points_from_cod(_ellipse_profile())
    geom = CrackGeometry(up, lo, boundary_curve(up, lo), label=EXPLICIT_MESH)
    back = CrackGeometry.from_json(geom.to_json())
    assert np.array_equal(back.upper, geom.upper) and np.array_equal(back.lower, geom.lower)
    assert np.array_equal(back.curve.points, geom.curve.points)
    assert back.curve.kind == geom.curve.kind and back.label == geom.label
    assert back.polygon_area() == geom.polygon_area()


def test_harmonic_extension_is_discrete_harmonic(box):
    V = Space(box, 1)
    nodes = np.flatnonzero(np.hypot(box.vertices[:, 0] - 2, box.vertices[:, 1] - 2) < 0.3)
    vals = box.vertices[nodes, 0]
    x = harmonic_extension(V, nodes, vals, np.ones(len(nodes)))
    assert np.allclose(x[nodes], vals)
    K = assemble_matrix(lambda u, v, w: dot(u.grad, v.grad), V, degree=0)
    free = np.setdiff1d(np.arange(V.ndofs), np.concatenate([nodes, V.boundary_dofs()]))
    assert np.max(np.abs((K @ x)[free])) < 1e-10
    assert x.min() >= min(vals.min(), 0) - 1e-12 and x.max() <= vals.max() + 1e-12


def test_transport_constant_velocity_moves_plane_exactly(box):
    V = Space(box, 1)
    phi = V.interpolate(lambda x: C_LS + (x[1] - 2) / 4)
    beta = np.stack([np.zeros(V.ndofs), np.full(V.ndofs, 0.5)])
    ls = transport_levelset(phi, None, beta_override=beta, band_cells=0, cleanup=False, n_steps=10)
    # zero line moves from y = 2 to y = 2.5
    assert abs(ls.area() - 10.0) < 1e-8


def test_transport_collapse_raises(box):
    V = Space(box, 1)
    phi = V.interpolate(lambda x: C_LS + (x[1] - 2) / 4)
    beta = np.stack([np.zeros(V.ndofs), np.full(V.ndofs, -4.0)])
    with pytest.raises(CollapseError):
        transport_levelset(phi, None, beta_override=beta, band_cells=0, cleanup=False)
    with pytest.raises(CollapseError):
        transport_levelset(V.interpolate(lambda x: 1.0 + 0 * x[0]), None, beta_override=beta)


def test_jump_interval():
    s = np.linspace(0, 1, 101)
    w = 0.01 * s.copy()
    w[40:45] += 1.0
    a, b = jump_interval(CodProfile(s, w, Centreline.horizontal(2.0)))
    assert (a, b) == (s[39], s[45])
    assert jump_interval(CodProfile(s, 0.01 * s, Centreline.horizontal(2.0))) is None


def _bump_profile(a, b, centre=(2.0, 2.0), horizontal=True, n=61):
    """Opening ``2 b (1 - xi^2)^2``: smooth at the tips, so no sample looks like a jump."""
    cl = Centreline.horizontal(centre[1]) if horizontal else Centreline.vertical(centre[0])
    c = centre[0] if horizontal else centre[1]
    s = np.linspace(c - 1.5 * a, c + 1.5 * a, n)
    xi = np.clip((s - c) / a, -1, 1)
    return CodProfile(s, 2 * b * (1 - xi**2) ** 2, cl, (c - a, c + a))


def test_tjunction_union():
    h = _bump_profile(0.3, 0.02)
    v = _bump_profile(0.2, 0.02, centre=(2.0, 2.1), horizontal=False)
    assert jump_interval(h) is None and jump_interval(v) is None
    geom = tjunction_geometry(h, v)
    ph = Polygon(closed_loop(*interface_points_from_cod(h)))
    pv = Polygon(closed_loop(*interface_points_from_cod(v)))
    union = Polygon(geom.curve.points)
    assert union.is_valid
    assert abs(union.area - (ph.area + pv.area - ph.intersection(pv).area)) < 1e-12
    assert abs(geom.extra["union_area"] - union.area) < 1e-12
    far = _bump_profile(0.1, 0.02, centre=(2.0, 3.0), horizontal=False)
    with pytest.raises(ReconstructionError):
        tjunction_geometry(h, far)


def test_explicit_variants_share_the_outline():
    _, st = sneddon_state(0)
    geom_ls, area_ls, ex_ls = reconstruct(st.u, st.phi, EXPLICIT_LS, h=0.02)
    geom_m, area_m, ex_m = reconstruct(st.u, st.phi, EXPLICIT_MESH, h=0.02, kind=POLYLINE,
                                       size=SizeField(0.02, 2.0))
    assert np.allclose(geom_ls.upper, geom_m.upper)
    # the fitted mesh reproduces the polygon exactly; the level set is its nodal signed distance
    assert abs(area_m - geom_m.polygon_area()) < 1e-12
    ref = signed_distance_levelset(st.phi.space.mesh, closed_loop(geom_ls.upper, geom_ls.lower))
    assert np.array_equal(ex_ls["levelset"].values, ref.values)
    assert area_ls == ref.area() and 0 < area_ls
    assert ex_m["mesh"].region_area(FLUID) == area_m
    with pytest.raises(ValueError):
        reconstruct(st.u, st.phi, "unknown")
