"""Unstructured triangle meshes: generation, fitted re-meshing, point location.

Meshes are produced by constrained Delaunay triangulation with quality
(Ruppert) refinement through the ``triangle`` library. A radial size field
around the crack geometry drives the area constraints; refinement is
repeated until every triangle meets its local target.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import shapely
import triangle as tr
from scipy.spatial import cKDTree
from shapely.geometry import LinearRing, Polygon, box
from shapely.ops import unary_union

SOLID, FLUID = 0, 1
OUTER, SLIT, INTERFACE = 1, 2, 3

POLYLINE = "polyline"
PIECEWISE_QUADRATIC = "piecewise_quadratic"

_EQUILATERAL = np.sqrt(3.0) / 4.0


class MeshError(ValueError):
    pass


class DegenerateGeometryError(MeshError):
    pass


class GeometryError(MeshError):
    pass


class PointNotFoundError(LookupError):
    pass


class SliverWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SizeField:
    """Target element size as a function of distance to the crack geometry.

    ``h(d) = min(h_far, h_crack + grading * max(d - fine_radius, 0))``
    """

    h_crack: float
    h_far: float
    grading: float = 0.3
    fine_radius: float = 0.0

    def __post_init__(self):
        if not self.h_crack > 0:
            raise ValueError("h_crack must be positive")
        if self.h_crack > self.h_far:
            raise ValueError("h_crack must not exceed h_far")
        if not 0 < self.grading <= 1:
            raise ValueError("grading must lie in (0, 1]")

    def __call__(self, dist):
        d = np.maximum(np.asarray(dist, dtype=float) - self.fine_radius, 0.0)
        return np.minimum(self.h_far, self.h_crack + self.grading * d)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming, positively oriented triangle mesh with tags.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    boundary_edges : (nb, 2) int array
        Tagged edges: outer boundary, slit boundary or fluid/solid interface.
    boundary_tags : (nb,) int array
    region : (nt,) int array
        ``SOLID`` or ``FLUID`` per triangle.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    boundary_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    region: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        be = np.asarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        bt = np.asarray(self.boundary_tags, dtype=np.int64).reshape(-1)
        reg = np.zeros(len(t), np.int64) if self.region is None else np.asarray(self.region, np.int64)
        if len(bt) != len(be) or len(reg) != len(t):
            raise MeshError("tag arrays do not match mesh entities")
        for name, arr in (("vertices", v), ("triangles", t), ("boundary_edges", be),
                          ("boundary_tags", bt), ("region", reg)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def h(self) -> np.ndarray:
        """Longest edge length per triangle."""
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p[:, [1, 2, 0]] - p[:, [2, 0, 1]], axis=2)
        return lens.max(axis=1)

    @cached_property
    def _edge_data(self):
        t = self.triangles
        # local edge k is opposite local vertex k
        loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
        key = np.sort(loc, axis=1)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        return edges, inv.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def tri_edges(self) -> np.ndarray:
        return self._edge_data[1]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(ne, 2) triangles adjacent to each edge, -1 where missing."""
        ne = len(self.edges)
        out = -np.ones((ne, 2), np.int64)
        te = self.tri_edges.ravel()
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(te, kind="stable")
        te, tri = te[order], tri[order]
        first = np.ones(len(te), bool)
        first[1:] = te[1:] != te[:-1]
        out[te[first], 0] = tri[first]
        out[te[~first], 1] = tri[~first]
        return out

    @cached_property
    def neighbors(self) -> np.ndarray:
        """(nt, 3) triangle across local edge k, -1 on the boundary."""
        et = self.edge_triangles[self.tri_edges]
        own = np.arange(self.n_triangles)[:, None]
        return np.where(et[..., 0] == own, et[..., 1], et[..., 0])

    @cached_property
    def vertex_triangles(self) -> np.ndarray:
        """Padded (nv, maxdeg) incidence table, -1 for padding."""
        flat = self.triangles.ravel()
        tri = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(flat, kind="stable")
        flat, tri = flat[order], tri[order]
        counts = np.bincount(flat, minlength=self.n_vertices)
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pos = np.arange(len(flat)) - start[flat]
        out = -np.ones((self.n_vertices, max(counts.max(), 1)), np.int64)
        out[flat, pos] = tri
        return out

    @cached_property
    def _kdtree(self):
        return cKDTree(self.vertices)

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def region_area(self, region: int) -> float:
        return float(self.areas[self.region == region].sum())

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle (degrees) of each triangle."""
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        ang = []
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            cosv = np.clip((y**2 + z**2 - x**2) / (2 * y * z), -1.0, 1.0)
            ang.append(np.degrees(np.arccos(cosv)))
        return np.min(ang, axis=0)

    def barycentric(self, cells, x) -> np.ndarray:
        """Barycentric coordinates of points ``x`` w.r.t. triangles ``cells``."""
        p = self.vertices[self.triangles[cells]]
        x = np.asarray(x, float)
        v0, v1 = p[..., 1, :] - p[..., 0, :], p[..., 2, :] - p[..., 0, :]
        r = x - p[..., 0, :]
        det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
        l1 = (r[..., 0] * v1[..., 1] - r[..., 1] * v1[..., 0]) / det
        l2 = (v0[..., 0] * r[..., 1] - v0[..., 1] * r[..., 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


# ---------------------------------------------------------------------------
# boundary curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Ordered control points describing a (closed) crack boundary.

    For ``PIECEWISE_QUADRATIC`` curves every piece between consecutive
    points is a quadratic Bezier arc whose middle control point is the
    intersection of the tangent lines at both ends, so the tangent is
    continuous at every support point. Pieces whose tangent lines do not
    intersect in front of both ends fall back to straight segments.
    """

    points: np.ndarray
    kind: str = POLYLINE
    closed: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, float).reshape(-1, 2)
        if self.kind not in (POLYLINE, PIECEWISE_QUADRATIC):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if len(pts) < (3 if self.closed else 2):
            raise GeometryError("too few control points")
        nxt = np.roll(pts, -1, axis=0) if self.closed else pts[1:]
        cur = pts if self.closed else pts[:-1]
        if np.any(np.all(np.isclose(cur, nxt, rtol=0, atol=1e-14), axis=1)):
            raise GeometryError("consecutive control points coincide")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n_pieces(self) -> int:
        return len(self.points) if self.closed else len(self.points) - 1

    def piece_ends(self):
        a = self.points
        b = np.roll(a, -1, axis=0)
        if not self.closed:
            a, b = a[:-1], a[1:]
        return a, b

    @cached_property
    def tangents(self) -> np.ndarray:
        """Unit tangents at the support points (centred differences)."""
        p = self.points
        if self.closed:
            prev, nxt = np.roll(p, 1, axis=0), np.roll(p, -1, axis=0)
        else:
            prev = np.vstack([p[:1], p[:-1]])
            nxt = np.vstack([p[1:], p[-1:]])
        # chord-length weighted (Bessel) tangent
        d0 = np.linalg.norm(p - prev, axis=1)
        d1 = np.linalg.norm(nxt - p, axis=1)
        d0 = np.where(d0 == 0, 1.0, d0)
        d1 = np.where(d1 == 0, 1.0, d1)
        t = (d1[:, None] * (p - prev) / d0[:, None] + d0[:, None] * (nxt - p) / d1[:, None])
        n = np.linalg.norm(t, axis=1, keepdims=True)
        return t / np.where(n == 0, 1.0, n)

    @cached_property
    def control_points(self) -> np.ndarray:
        """Middle Bezier control point of each piece (midpoint if straight)."""
        a, b = self.piece_ends()
        mid = 0.5 * (a + b)
        if self.kind == POLYLINE:
            return mid
        ta = self.tangents
        tb = np.roll(ta, -1, axis=0) if self.closed else ta[1:]
        ta = ta if self.closed else ta[:-1]
        d = b - a
        # a + s ta = b - r tb
        det = ta[:, 0] * tb[:, 1] - ta[:, 1] * tb[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (d[:, 0] * tb[:, 1] - d[:, 1] * tb[:, 0]) / det
            r = (ta[:, 0] * d[:, 1] - ta[:, 1] * d[:, 0]) / det
        c = a + s[:, None] * ta
        length = np.linalg.norm(d, axis=1)
        # the control point must project inside the chord, otherwise the arc overshoots an end
        proj = np.einsum("ij,ij->i", c - a, d) / np.where(length == 0, 1.0, length**2)
        ok = (np.abs(det) > 1e-12) & (s > 0) & (r > 0) & (proj > 0) & (proj < 1)
        return np.where(ok[:, None], c, mid)

    def evaluate(self, piece, t) -> np.ndarray:
        a, b = self.piece_ends()
        c = self.control_points
        piece = np.asarray(piece)
        t = np.asarray(t, float)[..., None]
        return (1 - t) ** 2 * a[piece] + 2 * t * (1 - t) * c[piece] + t**2 * b[piece]

    def derivative(self, piece, t) -> np.ndarray:
        a, b = self.piece_ends()
        c = self.control_points
        t = np.asarray(t, float)[..., None]
        return 2 * (1 - t) * (c[piece] - a[piece]) + 2 * t * (b[piece] - c[piece])

    def discretize(self, h, tol: float | None = None) -> np.ndarray:
        """Polyline vertices approximating the curve.

        Straight pieces keep only their end points. Curved pieces are split
        so that chords are no longer than ``h`` (scalar or callable of the
        position) and deviate from the arc by at most ``tol``.
        """
        a, b = self.piece_ends()
        c = self.control_points
        out = []
        for i in range(self.n_pieces):
            out.append(a[i])
            bend = np.linalg.norm(a[i] - 2 * c[i] + b[i])
            if self.kind == POLYLINE or bend < 1e-14:
                continue
            hl = float(h(0.5 * (a[i] + b[i]))) if callable(h) else float(h)
            length = np.linalg.norm(b[i] - a[i])
            n = int(np.ceil(length / hl))
            if tol is not None:
                # sagitta of a quadratic arc over parameter step dt is |a-2c+b| dt^2 / 4
                n = max(n, int(np.ceil(np.sqrt(bend / (4 * tol)))))
            n = min(max(n, 1), 64)
            for t in np.arange(1, n) / n:
                out.append(self.evaluate(i, t))
        if not self.closed:
            out.append(b[-1])
        return np.array(out)

    def dense(self, n_per_piece: int = 32) -> np.ndarray:
        t = np.arange(n_per_piece) / n_per_piece
        pts = self.evaluate(np.arange(self.n_pieces)[:, None], t[None, :]).reshape(-1, 2)
        if not self.closed:
            pts = np.vstack([pts, self.points[-1:]])
        return pts

    def perimeter(self) -> float:
        pts = self.dense(1 if self.kind == POLYLINE else 64)
        seg = np.roll(pts, -1, axis=0) - pts if self.closed else np.diff(pts, axis=0)
        return float(np.linalg.norm(seg, axis=1).sum())

    def polygon(self, n_per_piece: int = 16) -> Polygon:
        return Polygon(self.dense(1 if self.kind == POLYLINE else n_per_piece))

    def self_intersections(self) -> list[tuple[int, int]]:
        """Pairs of intersecting non-adjacent polyline segments."""
        pts = self.dense(1 if self.kind == POLYLINE else 8)
        return segment_intersections(pts, closed=self.closed)


def segment_intersections(pts, closed=True) -> list[tuple[int, int]]:
    pts = np.asarray(pts, float)
    a = pts
    b = np.roll(pts, -1, axis=0) if closed else pts[1:]
    a = a if closed else a[:-1]
    n = len(a)
    found = []
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    for i in range(n):
        j = np.arange(i + 2, n)
        if closed and i == 0:
            j = j[j != n - 1]
        if len(j) == 0:
            continue
        box_hit = np.all((lo[j] <= hi[i]) & (hi[j] >= lo[i]), axis=1)
        j = j[box_hit]
        if len(j) == 0:
            continue

        def orient(p, q, r):
            return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

        d1 = orient(a[i], b[i], a[j])
        d2 = orient(a[i], b[i], b[j])
        d3 = orient(a[j], b[j], a[i])
        d4 = orient(a[j], b[j], b[i])
        hit = (d1 * d2 <= 0) & (d3 * d4 <= 0)
        found.extend((i, int(k)) for k in j[hit])
    return found


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _rect_ring(domain):
    x0, x1, y0, y1 = domain
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], float)


def _subdivide_ring(pts, h):
    out = []
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        k = max(int(np.ceil(np.linalg.norm(b - a) / h - 1e-9)), 1)
        for t in np.arange(k) / k:
            out.append(a + t * (b - a))
    return np.array(out)


def _pslg(rings, markers):
    verts, segs, marks = [], [], []
    off = 0
    for ring, m in zip(rings, markers):
        n = len(ring)
        verts.append(ring)
        idx = np.arange(n) + off
        segs.append(np.stack([idx, np.roll(idx, -1)], axis=1))
        marks.append(np.full(n, m))
        off += n
    return np.vstack(verts), np.vstack(segs), np.concatenate(marks)


def _triangulate(pslg, dist_fn, size: SizeField, min_angle: float, max_passes: int = 16, extra_refine=None):
    opts = f"pq{min_angle:g}Aa{_EQUILATERAL * size.h_far**2:.17g}"
    out = tr.triangulate(pslg, opts)
    for _ in range(max_passes):
        v, t = out["vertices"], out["triangles"]
        cent = v[t].mean(axis=1)
        target = _EQUILATERAL * size(dist_fn(cent)) ** 2
        if extra_refine is not None:
            target = np.minimum(target, extra_refine(cent))
        p = v[t]
        area = 0.5 * np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        if np.all(area <= 1.5 * target):
            break
        out = dict(out)
        out["triangle_max_area"] = target
        out = tr.triangulate(out, f"rpq{min_angle:g}Aa")
    return out


def _mesh_from_triangle(out, interface=False) -> Mesh:
    v = out["vertices"]
    t = out["triangles"].astype(np.int64)
    attr = out.get("triangle_attributes")
    region = np.zeros(len(t), np.int64) if attr is None else np.rint(attr[:, 0]).astype(np.int64)
    p = v[t]
    sa = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    t[sa < 0] = t[sa < 0][:, [0, 2, 1]]
    segs = out["segments"].astype(np.int64)
    marks = out["segment_markers"].ravel().astype(np.int64)
    keep = marks > 0
    segs, marks = segs[keep], marks[keep]
    mesh = Mesh(v, t, segs, marks, region)
    if interface:
        et = mesh.edge_triangles
        inner = et[:, 1] >= 0
        diff = np.zeros(len(et), bool)
        diff[inner] = region[et[inner, 0]] != region[et[inner, 1]]
        outer = mesh.edges[~inner]
        iface = mesh.edges[diff]
        segs = np.vstack([outer, iface])
        marks = np.concatenate([np.full(len(outer), OUTER), np.full(len(iface), INTERFACE)])
        mesh = Mesh(v, t, segs, marks, region)
    return mesh


def generate_graded_mesh(domain, slits, size: SizeField, min_angle: float = 30.0) -> Mesh:
    """Graded mesh of a rectangle resolving thin rectangular slits.

    Parameters
    ----------
    domain : (x0, x1, y0, y1)
    slits : sequence of (x0, x1, y0, y1)
        Axis-aligned rectangles; overlapping ones are merged.
    size : SizeField
        Sizes are measured from the union of the slits.
    """
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise DegenerateGeometryError("empty domain")
    outer = box(x0, y0, x1, y1)
    rects = []
    for s in slits or []:
        sx0, sx1, sy0, sy1 = s
        thick = min(sx1 - sx0, sy1 - sy0)
        if thick < 0.5 * size.h_crack * (1 - 1e-9):
            raise DegenerateGeometryError(
                f"slit {s} of thickness {thick:g} is not representable with h_crack={size.h_crack:g}")
        r = box(sx0, sy0, sx1, sy1)
        if not outer.buffer(-1e-12).contains(r):
            raise DegenerateGeometryError(f"slit {s} is not strictly inside the domain")
        rects.append(r)

    rings = [_subdivide_ring(_rect_ring(domain), size.h_far)]
    markers = [OUTER]
    if rects:
        union = unary_union(rects)
        geoms = getattr(union, "geoms", [union])
        for g in geoms:
            ring = np.asarray(g.exterior.coords)[:-1]
            if LinearRing(ring).is_ccw is False:
                ring = ring[::-1]
            rings.append(_subdivide_ring(ring, size.h_crack))
            markers.append(SLIT)
        slit_geom = union

        def dist(p):
            return shapely.distance(shapely.points(p), slit_geom)
    else:
        def dist(p):
            return np.full(len(p), np.inf)
    verts, segs, marks = _pslg(rings, markers)
    pslg = dict(vertices=verts, segments=segs, segment_markers=marks)
    out = _triangulate(pslg, dist, size, min_angle)
    return _mesh_from_triangle(out)


def remesh_fitted(domain, crack_boundary: BoundaryCurve, size: SizeField, min_angle: float = 30.0,
                  max_sliver_passes: int = 4) -> Mesh:
    """Two-region mesh with the crack boundary resolved by INTERFACE edges.

    Triangles enclosed by ``crack_boundary`` are tagged FLUID, the rest
    SOLID. Curved boundaries are discretized so that the chordal deviation
    stays below ``h_crack**2``.
    """
    if not crack_boundary.closed:
        raise GeometryError("crack boundary must be closed")
    bad = crack_boundary.self_intersections()
    if bad:
        raise GeometryError(f"crack boundary self-intersects at segment pairs {bad[:10]}")
    x0, x1, y0, y1 = domain
    tol_geo = size.h_crack**2
    ring = crack_boundary.discretize(size.h_crack, tol=tol_geo)
    poly = Polygon(ring)
    if not poly.is_valid or poly.area <= 0:
        raise GeometryError("crack boundary does not enclose a valid region")
    if not box(x0, y0, x1, y1).buffer(-1e-12).contains(poly):
        raise GeometryError("crack boundary is not strictly inside the domain")
    if not LinearRing(ring).is_ccw:
        ring = ring[::-1]
    line = poly.exterior
    inside = poly.representative_point()
    rings = [_subdivide_ring(_rect_ring(domain), size.h_far), ring]
    verts, segs, marks = _pslg(rings, [OUTER, INTERFACE])
    corner = (x0 + 1e-6 * (x1 - x0), y0 + 1e-6 * (y1 - y0))
    regions = np.array([[inside.x, inside.y, FLUID, 0], [corner[0], corner[1], SOLID, 0]], float)
    pslg = dict(vertices=verts, segments=segs, segment_markers=marks, regions=regions)

    def dist(p):
        return shapely.distance(shapely.points(p), line)

    extra = None
    mesh = None
    for _ in range(max_sliver_passes + 1):
        out = _triangulate(pslg, dist, size, min_angle, extra_refine=extra)
        mesh = _mesh_from_triangle(out, interface=True)
        fl = np.flatnonzero(mesh.region == FLUID)
        ang = mesh.min_angles()[fl]
        bad_cells = fl[ang < 10.0]
        if len(bad_cells) == 0:
            break
        warnings.warn(f"{len(bad_cells)} fluid triangles with angles below 10 degrees; "
                      "reducing local size", SliverWarning, stacklevel=2)
        centres = mesh.centroids[bad_cells]
        radius = 2 * mesh.h[bad_cells]
        cap = 0.25 * mesh.areas[bad_cells]
        tree = cKDTree(centres)
        prev = extra

        def extra(p, tree=tree, radius=radius.max(), cap=cap, prev=prev):
            d, i = tree.query(p, distance_upper_bound=radius)
            res = np.full(len(p), np.inf)
            hit = np.isfinite(d)
            res[hit] = cap[i[hit]]
            if prev is not None:
                res = np.minimum(res, prev(p))
            return res
    return mesh


def rectangle_mesh(domain, h: float, min_angle: float = 30.0) -> Mesh:
    """Quasi-uniform mesh of a rectangle."""
    return generate_graded_mesh(domain, [], SizeField(h, h), min_angle=min_angle)


# ---------------------------------------------------------------------------
# point location and refinement
# ---------------------------------------------------------------------------

def locate_points(mesh: Mesh, x, tol: float = 1e-10):
    """Triangle index and barycentric coordinates for each point.

    Uses a visibility walk from the nearest vertex followed by an exact
    tie-break: among all triangles containing the point (within ``tol``),
    the lowest index wins. Points outside the mesh get index -1.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n = len(x)
    _, near = mesh._kdtree.query(x)
    cell = mesh.vertex_triangles[near, 0].copy()
    nb = mesh.neighbors
    active = np.arange(n)
    found = np.full(n, -1, np.int64)
    for _ in range(4 * int(np.sqrt(mesh.n_triangles)) + 50):
        if len(active) == 0:
            break
        lam = mesh.barycentric(cell[active], x[active])
        k = np.argmin(lam, axis=1)
        inside = lam[np.arange(len(active)), k] >= -tol
        found[active[inside]] = cell[active[inside]]
        walk = active[~inside]
        nxt = nb[cell[walk], k[~inside]]
        out = nxt < 0
        cell[walk[~out]] = nxt[~out]
        active = walk[~out]
    if len(active):
        # walk did not terminate (non-Delaunay cycles): exhaustive scan
        for i in active:
            lam = mesh.barycentric(np.arange(mesh.n_triangles), np.broadcast_to(x[i], (mesh.n_triangles, 2)))
            ok = np.flatnonzero(lam.min(axis=1) >= -tol)
            if len(ok):
                found[i] = ok[0]
    # exact tie-break within the vertex stars of the located triangle
    ok = found >= 0
    idx = np.flatnonzero(ok)
    bary = np.full((n, 3), np.nan)
    if len(idx):
        cand = mesh.vertex_triangles[mesh.triangles[found[idx]]].reshape(len(idx), -1)
        valid = cand >= 0
        lam = mesh.barycentric(np.where(valid, cand, 0), x[idx][:, None, :])
        contains = valid & (lam.min(axis=2) >= -tol)
        key = np.where(contains, cand, np.iinfo(np.int64).max)
        j = np.argmin(key, axis=1)
        found[idx] = cand[np.arange(len(idx)), j]
        bary[idx] = lam[np.arange(len(idx)), j]
    return found, bary


def locate_point(mesh: Mesh, x, tol: float = 1e-10):
    """Containing triangle (lowest index on ties) and barycentric coordinates."""
    cells, bary = locate_points(mesh, np.asarray(x, float)[None, :], tol=tol)
    if cells[0] < 0:
        raise PointNotFoundError(f"point {tuple(x)} is outside the mesh")
    return int(cells[0]), bary[0]


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four through its edge midpoints."""
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mid])
    t = mesh.triangles
    m = nv + mesh.tri_edges
    tris = np.concatenate([
        np.stack([t[:, 0], m[:, 2], m[:, 1]], axis=1),
        np.stack([m[:, 2], t[:, 1], m[:, 0]], axis=1),
        np.stack([m[:, 1], m[:, 0], t[:, 2]], axis=1),
        np.stack([m[:, 0], m[:, 1], m[:, 2]], axis=1),
    ])
    region = np.tile(mesh.region, 4)
    # split tagged edges
    key = np.sort(mesh.boundary_edges, axis=1)
    eidx = _edge_lookup(mesh.edges, key)
    be = np.concatenate([np.stack([mesh.boundary_edges[:, 0], nv + eidx], axis=1),
                         np.stack([nv + eidx, mesh.boundary_edges[:, 1]], axis=1)])
    bt = np.tile(mesh.boundary_tags, 2)
    return Mesh(verts, tris, be, bt, region)


def _edge_lookup(edges, pairs):
    """Indices of sorted vertex ``pairs`` in the sorted edge table."""
    if len(pairs) == 0:
        return np.zeros(0, np.int64)
    base = edges[:, 0].astype(np.int64) * (edges.max() + 1) + edges[:, 1]
    q = pairs[:, 0].astype(np.int64) * (edges.max() + 1) + pairs[:, 1]
    pos = np.searchsorted(base, q)
    if np.any(pos >= len(base)) or np.any(base[np.minimum(pos, len(base) - 1)] != q):
        raise MeshError("tagged edge is not an edge of the mesh")
    return pos


def check_conforming(mesh: Mesh) -> bool:
    """Every interior edge is shared by exactly two triangles and no vertex
    lies in the interior of another edge (hanging nodes)."""
    et = mesh.edge_triangles
    te = mesh.tri_edges.ravel()
    if np.any(np.bincount(te, minlength=len(mesh.edges)) > 2):
        return False
    bnd = mesh.edges[et[:, 1] < 0]
    # a conforming triangulation of a simply-connected polygonal region has
    # Euler characteristic 1: V - E + T = 1
    chi = mesh.n_vertices - len(mesh.edges) + mesh.n_triangles
    used = np.unique(mesh.triangles)
    return chi == 1 and len(used) == mesh.n_vertices and len(bnd) > 0
