"""Sharp crack geometry from a phase-field solution.

Three reconstructions are provided:

* ``EXPLICIT_LS``: interface points from the COD profile, closed into a
  polygon and turned into a P1 signed-distance level set on the
  phase-field mesh.
* ``TRANSPORT_LS``: the phase-field level set ``phi - c_ls`` is advected
  (SUPG, implicit Euler) so its zero line lands on the displaced crack
  faces.
* ``EXPLICIT_MESH``: the interface points define a boundary curve that is
  re-meshed into a fitted two-region mesh.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import shapely
from scipy.sparse.csgraph import connected_components
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .fem import FeFunction, Space, SparseSystem, assemble_matrix, dot, solve, solve_matrix
from .mesh import (FLUID, OUTER, PIECEWISE_QUADRATIC, POLYLINE, BoundaryCurve, GeometryError, Mesh, SizeField,
                   remesh_fitted)
from .quantities import C_LS, Centreline, CodProfile, cod_function, locate_tips, phasefield_levelset

EXPLICIT_LS = "explicit-ls"
TRANSPORT_LS = "transport-ls"
EXPLICIT_MESH = "explicit-mesh"
VARIANTS = (EXPLICIT_LS, TRANSPORT_LS, EXPLICIT_MESH)


class ReconstructionError(ValueError):
    pass


class CollapseError(ReconstructionError):
    """The transported zero iso-line disappeared before the final step."""


# ---------------------------------------------------------------------------
# level sets
# ---------------------------------------------------------------------------

@dataclass
class LevelSet:
    """P1 level set, negative inside the crack."""

    function: FeFunction

    @property
    def mesh(self) -> Mesh:
        return self.function.space.mesh

    @property
    def values(self) -> np.ndarray:
        return self.function.coeffs

    def _nodal(self):
        v = self.function.coeffs.copy()
        # zero nodes count as outside so every crossing lies inside an edge
        v[v == 0] = np.finfo(float).tiny
        return v

    def has_both_signs(self) -> bool:
        v = self._nodal()
        return bool(np.any(v < 0) and np.any(v > 0))

    def area(self, cells=None) -> float:
        """Exact area of ``{levelset < 0}`` for the P1 interpolant."""
        mesh = self.mesh
        v = self._nodal()[mesh.triangles if cells is None else mesh.triangles[cells]]
        areas = mesh.areas if cells is None else mesh.areas[cells]
        neg = v < 0
        nneg = neg.sum(axis=1)
        total = areas[nneg == 3].sum()
        for count, lone_negative in ((1, True), (2, False)):
            sel = nneg == count
            if not np.any(sel):
                continue
            vv = v[sel]
            mask = neg[sel] if lone_negative else ~neg[sel]
            k = np.argmax(mask, axis=1)
            idx = np.arange(len(vv))
            a = vv[idx, k]
            b = vv[idx, (k + 1) % 3]
            c = vv[idx, (k + 2) % 3]
            frac = (a / (a - b)) * (a / (a - c))
            part = areas[sel] * frac
            total += part.sum() if lone_negative else (areas[sel] - part).sum()
        return float(total)

    def isoline_segments(self):
        """Marching triangles: ``(points (n, 2, 2), edge_ids (n, 2))`` per cut triangle."""
        mesh = self.mesh
        v = self._nodal()
        tv = v[mesh.triangles]
        s = tv < 0
        cut = np.flatnonzero(s.any(axis=1) & ~s.all(axis=1))
        segs, ids = [], []
        for t in cut:
            pts, eid = [], []
            for k in range(3):
                i, j = (k + 1) % 3, (k + 2) % 3
                if s[t, i] != s[t, j]:
                    a, b = mesh.triangles[t, i], mesh.triangles[t, j]
                    lam = v[a] / (v[a] - v[b])
                    pts.append((1 - lam) * mesh.vertices[a] + lam * mesh.vertices[b])
                    eid.append(mesh.tri_edges[t, k])
            segs.append(pts)
            ids.append(eid)
        return np.asarray(segs).reshape(-1, 2, 2), np.asarray(ids, np.int64).reshape(-1, 2)

    def components(self):
        """Connected pieces of the zero iso-line as ``(n_components, closed_flags)``."""
        _, ids = self.isoline_segments()
        if len(ids) == 0:
            return 0, []
        uniq, inv = np.unique(ids, return_inverse=True)
        inv = inv.reshape(-1, 2)
        n = len(uniq)
        g = sps.coo_matrix((np.ones(len(inv)), (inv[:, 0], inv[:, 1])), shape=(n, n))
        ncomp, labels = connected_components(g, directed=False)
        deg = np.bincount(inv.ravel(), minlength=n)
        closed = [bool(np.all(deg[labels == c] == 2)) for c in range(ncomp)]
        return ncomp, closed

    def is_single_closed_curve(self) -> bool:
        n, closed = self.components()
        return n == 1 and closed[0]

    def aperture(self, x0: float, y_range=(0.0, 4.0)) -> float:
        """Extent of ``{levelset < 0}`` along the vertical line ``x = x0``."""
        from .quantities import Line, levelset_crossings
        s, _ = levelset_crossings(self.function, Line.vertical(x0, *y_range))
        if len(s) < 2:
            return 0.0
        return float(s[-1] - s[0])


def signed_distance_levelset(mesh: Mesh, polygon_points) -> LevelSet:
    """P1 interpolant of the signed distance to a closed polygon (negative inside)."""
    pts = np.asarray(polygon_points, float)
    poly = Polygon(pts)
    if len(pts) < 3 or not poly.is_valid or poly.area <= 0:
        raise ReconstructionError("degenerate crack polygon")
    V = Space(mesh, 1)
    x = V.dof_coords
    d = shapely.distance(shapely.points(x), poly.exterior)
    inside = shapely.contains_xy(poly, x[:, 0], x[:, 1])
    return LevelSet(FeFunction(V, np.where(inside, -d, d)))


def halfplane_levelset(mesh: Mesh, polygon_points) -> LevelSet:
    """Level set of a convex polygon as the pointwise max of its edge half-plane distances.

    Each edge contributes the signed distance to its supporting line
    (negative on the inner side); the interior is where all of them are
    negative.
    """
    pts = np.asarray(polygon_points, float)
    if Polygon(pts).exterior.is_ccw is False:
        pts = pts[::-1]
    V = Space(mesh, 1)
    x = V.dof_coords
    val = np.full(len(x), -np.inf)
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        t = b - a
        n = np.array([t[1], -t[0]]) / np.linalg.norm(t)  # outward for ccw
        val = np.maximum(val, (x - a) @ n)
    return LevelSet(FeFunction(V, val))


# ---------------------------------------------------------------------------
# interface points and geometry container
# ---------------------------------------------------------------------------

@dataclass
class CrackGeometry:
    """Upper/lower interface points, closed boundary curve and optional level set."""

    upper: np.ndarray
    lower: np.ndarray
    curve: BoundaryCurve
    levelset: LevelSet | None = None
    label: str = EXPLICIT_MESH
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.upper = np.asarray(self.upper, float)
        self.lower = np.asarray(self.lower, float)

    def polygon_area(self) -> float:
        return float(Polygon(self.curve.points).area)

    def to_json(self) -> str:
        return json.dumps({
            "label": self.label,
            "upper": self.upper.tolist(),
            "lower": self.lower.tolist(),
            "curve": {"points": np.asarray(self.curve.points).tolist(), "kind": self.curve.kind,
                      "closed": self.curve.closed},
        })

    @classmethod
    def from_json(cls, text: str) -> "CrackGeometry":
        d = json.loads(text)
        c = d["curve"]
        return cls(np.array(d["upper"]), np.array(d["lower"]),
                   BoundaryCurve(np.array(c["points"]), c["kind"], c["closed"]), label=d["label"])


def interface_points_from_cod(profile: CodProfile):
    """Upper and lower face points ``centre +- (w/2) n`` including both tips (``w = 0``)."""
    if not (np.isfinite(profile.tips[0]) and np.isfinite(profile.tips[1])):
        raise ReconstructionError("COD profile has no located tips")
    inner = profile.inside()
    cl = profile.centreline
    base = cl.point(inner.s)
    off = np.multiply.outer(0.5 * inner.w, cl.normal)
    return base + off, base - off


def closed_loop(upper, lower) -> np.ndarray:
    """Counter-clockwise loop: lower face tip to tip, then the upper face back, tips once."""
    upper = np.asarray(upper, float)
    lower = np.asarray(lower, float)
    if len(upper) < 3 or len(lower) < 3:
        raise ReconstructionError("need at least three points per crack face")
    loop = np.vstack([lower, upper[-2:0:-1]])
    if not Polygon(loop).exterior.is_ccw:
        loop = loop[::-1]
    return loop


def explicit_levelset(upper, lower, mesh: Mesh) -> LevelSet:
    return signed_distance_levelset(mesh, closed_loop(upper, lower))


def boundary_curve(upper, lower, kind: str = PIECEWISE_QUADRATIC) -> BoundaryCurve:
    """Closed curve through all interface points; raises on self-intersection."""
    curve = BoundaryCurve(closed_loop(upper, lower), kind, closed=True)
    bad = curve.self_intersections()
    if bad:
        raise GeometryError(f"crack boundary self-intersects at segment pairs {bad[:10]}")
    return curve


# ---------------------------------------------------------------------------
# level-set transport
# ---------------------------------------------------------------------------

def _cut_edge_data(ls: FeFunction):
    """Cut edges of a P1 level set: vertex pairs, interpolation weight, crossing point, unit normal."""
    mesh = ls.space.mesh
    v = ls.coeffs.copy()
    v[v == 0] = np.finfo(float).tiny
    e = mesh.edges
    cut = np.flatnonzero((v[e[:, 0]] < 0) != (v[e[:, 1]] < 0))
    a, b = e[cut, 0], e[cut, 1]
    lam = v[a] / (v[a] - v[b])
    x = (1 - lam)[:, None] * mesh.vertices[a] + lam[:, None] * mesh.vertices[b]
    _, g = ls.at_reference(np.arange(mesh.n_triangles), np.array([[1 / 3, 1 / 3]]))
    g = g[..., 0].T
    et = mesh.edge_triangles[cut]
    gn = g[et[:, 0]] + np.where(et[:, 1:] >= 0, g[np.maximum(et[:, 1], 0)], 0.0)
    n = gn / np.maximum(np.linalg.norm(gn, axis=1, keepdims=True), 1e-300)
    return cut, a, b, lam, x, n


def harmonic_extension(space: Space, nodes, values, weights, stiffness=None) -> np.ndarray:
    """Laplace extension of nodal data (weighted averages on ``nodes``), zero on the outer boundary."""
    n = space.ndofs
    acc = np.zeros(n)
    wsum = np.zeros(n)
    np.add.at(acc, nodes, weights * values)
    np.add.at(wsum, nodes, weights)
    fixed = np.flatnonzero(wsum > 0)
    K = stiffness if stiffness is not None else assemble_matrix(lambda u, v, w: dot(u.grad, v.grad), space, degree=0)
    outer = space.boundary_dofs(OUTER)
    sys = SparseSystem(K, np.zeros(n))
    sys.constrain(outer, 0.0)
    sys.constrain(fixed, acc[fixed] / wsum[fixed])
    return solve(sys)


def _supg_step(space: Space, beta, fields, dt: float, tau_floor: float = 1e-12):
    """One implicit Euler SUPG step of ``dc/dt + beta . grad c = 0`` for each field."""
    mesh = space.mesh
    bx, by = beta
    bvec = FeFunction(Space(mesh, 1, 2), np.concatenate([bx, by]))
    cells = np.arange(mesh.n_triangles)
    bc, _ = bvec.at_reference(cells, np.array([[1 / 3, 1 / 3]]))
    bnorm = np.hypot(bc[0, :, 0], bc[1, :, 0])
    # h / (2|beta|) when advection dominates, capped at dt / 2 near stagnation points
    tau = 1.0 / np.sqrt((2.0 / dt) ** 2 + (2.0 * bnorm / mesh.h) ** 2)
    tau[bnorm <= tau_floor] = 0.0

    def test(v, w):
        return v.value + w.tau * dot(w.b.value, v.grad)

    coeffs = {"b": bvec, "tau": tau}
    M = assemble_matrix(lambda u, v, w: u.value * test(v, w), space, coeffs=coeffs, degree=3)
    A = assemble_matrix(lambda u, v, w: dot(w.b.value, u.grad) * test(v, w), space, coeffs=coeffs, degree=3)
    L = (M + dt * A).tocsc()
    return [solve_matrix(L, M @ c, rtol=1e-10) for c in fields]


def transport_levelset(phi: FeFunction, u: FeFunction, centreline: Centreline | None = None,
                       n_steps: int = 20, c_ls: float = C_LS, beta_override=None, band_cells: int = 1,
                       cleanup: bool = True, log=None) -> LevelSet:
    """Advect ``phi - c_ls`` so its zero line moves onto the displaced crack faces.

    The velocity is vertical (normal to the centreline): at every point of
    the zero line it is the distance from the current position to the
    target offset ``(u . n)(n . m)`` from the centreline, with ``n`` the
    level-set normal and ``m`` the centreline normal; on the faces this is
    ``+-(u . n)`` and at the tips it tends to zero. It is extended
    harmonically into the domain (zero on the outer boundary) and is itself
    transported with the level set, so the velocity stays constant along
    trajectories and the zero line reaches the target at pseudo-time 1.
    ``beta_override`` (nodal values ``(2, n)``) replaces the constructed
    velocity.

    Away from the zero line the level set carries no information, and the
    compressive velocity squeezes it into oscillations that can change
    sign. Values are therefore cut off at the largest magnitude found
    within ``band_cells`` layers of triangles around the zero line. With
    ``cleanup`` every step also discards detached negative islands and
    positive holes, keeping one crack region.
    """
    centreline = Centreline.horizontal(2.0) if centreline is None else centreline
    V = phi.space
    mesh = V.mesh
    K = assemble_matrix(lambda a, b, w: dot(a.grad, b.grad), V, degree=0)
    ls = phasefield_levelset(phi, c_ls)
    if not LevelSet(ls).has_both_signs():
        raise CollapseError("initial level set has no zero iso-line")
    nrm = centreline.normal
    if beta_override is not None:
        beta = np.asarray(beta_override, float).reshape(2, -1).copy()
        beta_n = beta[0] * nrm[0] + beta[1] * nrm[1]
        extend = False
    else:
        cut, a, b, lam, x, n = _cut_edge_data(ls)
        uv = np.stack([_eval_P(u, xi) for xi in x])
        # faces map to +-(u.n); the factor n.nrm lets the target fall smoothly to the centreline at tips
        target = np.einsum("ij,ij->i", uv, n) * (n @ nrm)
        speed = target - centreline.offset(x)
        beta_n = _extend_edges(V, a, b, lam, speed, K)
        extend = True
    dt = 1.0 / n_steps
    c = _narrow_band(mesh, ls.coeffs.copy(), band_cells)
    for k in range(n_steps):
        beta = np.stack([beta_n * nrm[0], beta_n * nrm[1]])
        c, beta_n = _supg_step(V, beta, [c, beta_n], dt)
        c = _narrow_band(mesh, c, band_cells)
        if cleanup:
            c = _single_region(mesh, c)
        cur = LevelSet(FeFunction(V, c))
        if not cur.has_both_signs():
            if k < n_steps - 1:
                raise CollapseError(f"zero iso-line vanished after step {k + 1} of {n_steps}")
            break
        if extend and k < n_steps - 1:
            cut, a, b, lam, _, _ = _cut_edge_data(cur.function)
            vals = (1 - lam) * beta_n[a] + lam * beta_n[b]
            beta_n = _extend_edges(V, a, b, lam, vals, K)
        if log is not None:
            log(k + 1, cur)
    return LevelSet(FeFunction(V, c))


def _single_region(mesh: Mesh, c):
    """Keep the largest negative nodal region and the positive region touching the outer boundary."""
    e = mesh.edges
    neg = c < 0
    out = c.copy()
    bound = np.abs(c).max()
    for sign in (True, False):
        mask = neg if sign else ~neg
        idx = np.flatnonzero(mask)
        if len(idx) == 0:
            continue
        keep_e = mask[e[:, 0]] & mask[e[:, 1]]
        g = sps.coo_matrix((np.ones(keep_e.sum()), (e[keep_e, 0], e[keep_e, 1])), shape=(len(c), len(c)))
        _, lab = connected_components(g, directed=False)
        if sign:
            counts = np.bincount(lab[idx])
            main = np.argmax(counts)
            drop = idx[lab[idx] != main]
            out[drop] = bound
        else:
            outer = np.unique(mesh.boundary_edges[mesh.boundary_tags == OUTER])
            roots = np.unique(lab[outer[mask[outer]]])
            drop = idx[~np.isin(lab[idx], roots)]
            out[drop] = -bound
    return out


def _narrow_band(mesh: Mesh, c, layers: int):
    if layers is None or layers <= 0:
        return c
    v = c.copy()
    v[v == 0] = np.finfo(float).tiny
    neg = v[mesh.triangles] < 0
    cells = neg.any(axis=1) & ~neg.all(axis=1)
    if not np.any(cells):
        return c
    nodes = np.zeros(len(c), bool)
    for _ in range(layers):
        nodes[mesh.triangles[cells]] = True
        cells = nodes[mesh.triangles].any(axis=1)
    bound = np.abs(c[nodes]).max()
    return np.clip(c, -bound, bound)


def _extend_edges(V, a, b, lam, vals, K):
    nodes = np.concatenate([a, b])
    weights = np.concatenate([1 - lam, lam])
    return harmonic_extension(V, nodes, np.concatenate([vals, vals]), weights, stiffness=K)


def _eval_P(u: FeFunction, x):
    return u(np.asarray(x, float))


# ---------------------------------------------------------------------------
# T-junction
# ---------------------------------------------------------------------------

def jump_interval(profile: CodProfile, jump_factor: float = 5.0):
    """Abscissa interval spanned by COD jumps ``|dw| > jump_factor * median |dw|``, or None."""
    dw = np.abs(np.diff(profile.w))
    if len(dw) == 0:
        return None
    med = np.median(dw)
    big = np.flatnonzero(dw > jump_factor * max(med, np.finfo(float).tiny))
    if len(big) == 0:
        return None
    return float(profile.s[big[0]]), float(profile.s[big[-1] + 1])


def _outline(profile: CodProfile, exclude=None):
    prof = profile
    if exclude is not None:
        a, b = exclude
        keep = (prof.s <= a) | (prof.s >= b)
        prof = CodProfile(prof.s[keep], prof.w[keep], prof.centreline, prof.tips, prof.method)
    up, lo = interface_points_from_cod(prof)
    return Polygon(closed_loop(up, lo)), up, lo


def tjunction_geometry(cod_h: CodProfile, cod_v: CodProfile, jump_factor: float = 5.0,
                       kind: str = POLYLINE) -> CrackGeometry:
    """Union outline of two orthogonal cracks.

    COD samples of each profile inside its jump interval (where the lines
    cross the other crack) are dropped before the outline is built; the
    two outlines are then merged by polygon union.
    """
    ph, up_h, lo_h = _outline(cod_h, jump_interval(cod_h, jump_factor))
    if cod_v.max <= 0:
        return CrackGeometry(up_h, lo_h, BoundaryCurve(np.asarray(ph.exterior.coords)[:-1], kind, True),
                             label=EXPLICIT_MESH)
    pv, up_v, lo_v = _outline(cod_v, jump_interval(cod_v, jump_factor))
    if not ph.intersects(pv):
        raise ReconstructionError("crack outlines do not intersect")
    union = unary_union([ph, pv])
    if union.geom_type != "Polygon":
        raise ReconstructionError("union of crack outlines is not a single polygon")
    ring = np.asarray(union.exterior.coords)[:-1]
    ring = _drop_duplicates(ring)
    curve = BoundaryCurve(ring, kind, True)
    return CrackGeometry(np.vstack([up_h, up_v]), np.vstack([lo_h, lo_v]), curve, label=EXPLICIT_MESH,
                         extra={"union_area": float(union.area)})


def _drop_duplicates(ring, tol=1e-14):
    out = []
    n = len(ring)
    for i in range(n):
        p, q, r = ring[i - 1], ring[i], ring[(i + 1) % n]
        if np.linalg.norm(q - p) < tol:
            continue
        out.append(q)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def reconstruction_profile(u: FeFunction, phi: FeFunction, centreline: Centreline, s_range, h: float,
                           method: str = "integral", c_ls: float = C_LS, min_aperture: float | None = None,
                           tip_rtol: float = 1e-4, line_range=(-np.inf, np.inf)) -> CodProfile:
    """COD profile with tips placed where the aperture drops below ``max(tip_rtol * COD_max, min_aperture)``.

    ``min_aperture`` defaults to ``min(2 h, COD_max / 4)``: thinner
    openings cannot be represented by a level set on a mesh of size ``h``.
    Point-evaluation lines with a crossing count other than two are skipped.
    """
    from .quantities import profile_abscissae
    f = cod_function(u, phi, centreline, method, c_ls, line_range, on_topology="skip")
    s = profile_abscissae(u.space.mesh, centreline, s_range, h)
    w = np.array([f(si) for si in s])
    keep = np.isfinite(w)
    s, w = s[keep], w[keep]
    prof = CodProfile(s, w, centreline, method=method)
    if min_aperture is None:
        min_aperture = min(2 * h, 0.25 * max(w.max(), 0.0))
    prof.tips = locate_tips(prof, f, tip_rtol=tip_rtol, floor=min_aperture)
    return prof


def reconstruct(u: FeFunction, phi: FeFunction, variant: str, centreline: Centreline | None = None,
                s_range=(1.6, 2.4), h: float | None = None, kind: str = PIECEWISE_QUADRATIC,
                domain=(0.0, 4.0, 0.0, 4.0), size: SizeField | None = None, n_steps: int = 20,
                cod_method: str = "integral", c_ls: float = C_LS, profile: CodProfile | None = None):
    """Run one reconstruction variant. Returns ``(CrackGeometry | None, area, extra)``."""
    centreline = Centreline.horizontal(2.0) if centreline is None else centreline
    mesh = phi.space.mesh
    h = float(mesh.h.min()) if h is None else h
    if variant == TRANSPORT_LS:
        ls = transport_levelset(phi, u, centreline, n_steps=n_steps, c_ls=c_ls)
        return None, ls.area(), {"levelset": ls}
    if profile is None:
        profile = reconstruction_profile(u, phi, centreline, s_range, h, method=cod_method, c_ls=c_ls)
    up, lo = interface_points_from_cod(profile)
    if variant == EXPLICIT_LS:
        ls = explicit_levelset(up, lo, mesh)
        geom = CrackGeometry(up, lo, BoundaryCurve(closed_loop(up, lo), POLYLINE, True), ls, EXPLICIT_LS)
        return geom, ls.area(), {"levelset": ls, "profile": profile}
    if variant == EXPLICIT_MESH:
        curve = boundary_curve(up, lo, kind)
        size = SizeField(h, min(100 * h, 2.0)) if size is None else size
        fitted = remesh_fitted(domain, curve, size)
        geom = CrackGeometry(up, lo, curve, None, EXPLICIT_MESH)
        return geom, fitted.region_area(FLUID), {"mesh": fitted, "profile": profile}
    raise ValueError(f"unknown reconstruction variant {variant!r}")
