"""Crack opening displacement (COD) and total crack volume (TCV).

Two routes are provided for the COD: the line integral of ``u . grad(phi)``
across the crack, and point evaluation of the normal displacement where a
level-set line of the phase-field crosses the sampling line.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fem import FeFunction, integrate, line_rule
from .fem.elements import shape_values
from .mesh import Mesh, PointNotFoundError

C_LS = (np.sqrt(5.0) - 1.0) / 2.0


class TopologyError(ValueError):
    """The level set does not cross the sampling line exactly twice."""

    def __init__(self, msg, crossings=()):
        super().__init__(msg)
        self.crossings = np.asarray(crossings)


@dataclass(frozen=True)
class Line:
    """Straight line ``origin + s * direction`` for ``s`` in ``[s0, s1]``."""

    origin: tuple
    direction: tuple
    s0: float = -np.inf
    s1: float = np.inf

    @classmethod
    def vertical(cls, x0: float, c: float = 0.0, d: float = 4.0):
        return cls((x0, 0.0), (0.0, 1.0), c, d)

    @classmethod
    def horizontal(cls, y0: float, c: float = 0.0, d: float = 4.0):
        return cls((0.0, y0), (1.0, 0.0), c, d)

    @property
    def unit(self) -> np.ndarray:
        v = np.asarray(self.direction, float)
        return v / np.linalg.norm(v)

    @property
    def normal(self) -> np.ndarray:
        t = self.unit
        return np.array([-t[1], t[0]])

    def point(self, s) -> np.ndarray:
        return np.asarray(self.origin, float) + np.multiply.outer(s, self.unit)


@dataclass(frozen=True)
class Centreline:
    """Crack centreline through ``origin`` along ``direction``.

    Sample abscissae are arc-length coordinates along the centreline. COD
    lines run through each sample along the centreline normal.
    """

    origin: tuple
    direction: tuple = (1.0, 0.0)

    @classmethod
    def horizontal(cls, y_c: float):
        return cls((0.0, y_c), (1.0, 0.0))

    @classmethod
    def vertical(cls, x_c: float):
        return cls((x_c, 0.0), (0.0, 1.0))

    @property
    def unit(self) -> np.ndarray:
        v = np.asarray(self.direction, float)
        return v / np.linalg.norm(v)

    @property
    def normal(self) -> np.ndarray:
        t = self.unit
        return np.array([-t[1], t[0]])

    def point(self, s) -> np.ndarray:
        return np.asarray(self.origin, float) + np.multiply.outer(s, self.unit)

    def coordinate(self, x) -> np.ndarray:
        return (np.asarray(x, float) - np.asarray(self.origin, float)) @ self.unit

    def offset(self, x) -> np.ndarray:
        return (np.asarray(x, float) - np.asarray(self.origin, float)) @ self.normal

    def cross_line(self, s: float, c: float = -np.inf, d: float = np.inf) -> Line:
        return Line(tuple(self.point(s)), tuple(self.normal), c, d)


@dataclass
class CodProfile:
    """COD samples along a centreline.

    Attributes
    ----------
    s : (n,) abscissae along the centreline, increasing
    w : (n,) COD values
    centreline : Centreline
    tips : (2,) centreline coordinates of the two tips (NaN if unknown)
    """

    s: np.ndarray
    w: np.ndarray
    centreline: Centreline
    tips: tuple = (np.nan, np.nan)
    method: str = "integral"

    def __post_init__(self):
        self.s = np.asarray(self.s, float)
        self.w = np.asarray(self.w, float)
        if self.s.shape != self.w.shape:
            raise ValueError("abscissae and COD values differ in length")
        if len(self.s) > 1 and np.any(np.diff(self.s) <= 0):
            raise ValueError("abscissae must increase strictly")

    @property
    def max(self) -> float:
        return float(self.w.max()) if len(self.w) else 0.0

    def inside(self) -> "CodProfile":
        """Samples strictly between the tips, with the tips appended as zero-COD samples."""
        t0, t1 = self.tips
        if not (np.isfinite(t0) and np.isfinite(t1)):
            raise ValueError("tips have not been located")
        # samples within roundoff of a tip would duplicate it
        tol = 1e-12 * max(abs(t0), abs(t1), t1 - t0)
        keep = (self.s > t0 + tol) & (self.s < t1 - tol)
        s = np.concatenate([[t0], self.s[keep], [t1]])
        w = np.concatenate([[0.0], np.maximum(self.w[keep], 0.0), [0.0]])
        return CodProfile(s, w, self.centreline, self.tips, self.method)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["s", "x", "y", "cod"])
            pts = self.centreline.point(self.s)
            for si, p, wi in zip(self.s, pts, self.w):
                wr.writerow([repr(float(si)), repr(float(p[0])), repr(float(p[1])), repr(float(wi))])

    @classmethod
    def from_csv(cls, path, centreline: Centreline):
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
        return cls(data[:, 0], data[:, 3], centreline)


# ---------------------------------------------------------------------------
# line / mesh intersection
# ---------------------------------------------------------------------------

def line_segments(mesh: Mesh, line: Line, cells=None, tol: float = 1e-12):
    """Pieces of ``line`` inside each triangle.

    Returns ``(cells, s_in, s_out, weight)``: the parameter interval of the
    line inside each intersected triangle. When the line runs along an
    interior mesh edge, the two neighbours each get ``weight = 1/2``.
    """
    cells = np.arange(mesh.n_triangles) if cells is None else np.asarray(cells)
    o = np.asarray(line.origin, float)
    t, n = line.unit, line.normal
    p = mesh.vertices[mesh.triangles[cells]] - o
    d = p @ n
    scale = max(1.0, float(np.abs(mesh.vertices).max()))
    d[np.abs(d) <= tol * scale] = 0.0
    hit = (d.min(axis=1) <= 0) & (d.max(axis=1) >= 0)
    cells, p, d = cells[hit], p[hit], d[hit]
    s = p @ t
    lo = np.full(len(cells), np.inf)
    hi = np.full(len(cells), -np.inf)
    for i in range(3):
        on = d[:, i] == 0
        lo[on] = np.minimum(lo[on], s[on, i])
        hi[on] = np.maximum(hi[on], s[on, i])
        j = (i + 1) % 3
        cross = d[:, i] * d[:, j] < 0
        a = d[cross, i] / (d[cross, i] - d[cross, j])
        sc = s[cross, i] + a * (s[cross, j] - s[cross, i])
        lo[cross] = np.minimum(lo[cross], sc)
        hi[cross] = np.maximum(hi[cross], sc)
    lo = np.maximum(lo, line.s0)
    hi = np.minimum(hi, line.s1)
    keep = hi - lo > tol * scale
    cells, lo, hi, d = cells[keep], lo[keep], hi[keep], d[keep]
    weight = np.ones(len(cells))
    on_edge = (d == 0).sum(axis=1) == 2
    if np.any(on_edge):
        k = np.argmax(d[on_edge] != 0, axis=1)
        # local edge opposite the off-line vertex k
        eid = mesh.tri_edges[cells[on_edge], k]
        shared = mesh.edge_triangles[eid, 1] >= 0
        weight[np.flatnonzero(on_edge)[shared]] = 0.5
    return cells, lo, hi, weight


def _cell_values(f: FeFunction, cells, x):
    """Values of ``f`` at physical points ``x`` (m, nq, 2) inside the given cells."""
    mesh = f.space.mesh
    m, nq = x.shape[:2]
    cc = np.repeat(cells, nq)
    lam = mesh.barycentric(cc, x.reshape(-1, 2))
    sd = f.space.scalar_cell_dofs(cc)
    phi = shape_values(f.space.order, lam[:, 1:])
    out = [np.einsum("na,na->n", f.coeffs[sd + c * f.space.n_scalar], phi).reshape(m, nq)
           for c in range(f.space.dim)]
    return out[0] if f.space.dim == 1 else np.stack(out)


def _cell_gradients(f: FeFunction, cells, ref=np.array([[1 / 3, 1 / 3]])):
    _, g = f.at_reference(cells, ref)
    return g[..., 0]


# ---------------------------------------------------------------------------
# COD and TCV
# ---------------------------------------------------------------------------

def cod_line_integral(u: FeFunction, phi: FeFunction, line: Line | float, n_gauss: int = 2,
                      grad_floor: float = 1e-12) -> float:
    """``int_line u . grad(phi) ds`` by composite Gauss quadrature per triangle.

    ``line`` may be a :class:`Line` or the abscissa ``x0`` of a vertical
    line over ``[0, 4]``.
    """
    if u.space.mesh is not phi.space.mesh:
        raise ValueError("fields live on different meshes")
    if np.isscalar(line):
        line = Line.vertical(float(line))
    mesh = u.space.mesh
    _check_line_in_mesh(mesh, line)
    cells, lo, hi, weight = line_segments(mesh, line)
    if len(cells) == 0:
        raise PointNotFoundError("line does not intersect the mesh")
    if phi.space.order == 1:
        gphi = _cell_gradients(phi, cells)
        keep = np.hypot(gphi[0], gphi[1]) > grad_floor
        cells, lo, hi, weight, gphi = cells[keep], lo[keep], hi[keep], weight[keep], gphi[:, keep]
        if len(cells) == 0:
            return 0.0
    q, wq = line_rule(n_gauss)
    s = lo[:, None] + (hi - lo)[:, None] * q[None, :]
    x = line.point(s)
    uval = _cell_values(u, cells, x)
    if phi.space.order == 1:
        integrand = uval[0] * gphi[0][:, None] + uval[1] * gphi[1][:, None]
    else:
        integrand = np.zeros_like(s)
        for k in range(s.shape[1]):
            gk = phi.gradient_at(x[:, k])
            integrand[:, k] = uval[0][:, k] * gk[0] + uval[1][:, k] * gk[1]
    return float(np.sum(weight[:, None] * (hi - lo)[:, None] * wq[None, :] * integrand))


def _check_line_in_mesh(mesh: Mesh, line: Line):
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    o = np.asarray(line.origin, float)
    t = line.unit
    # the line must pass through the bounding box
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.where(t != 0, (lo - o) / t, -np.inf)
        tb = np.where(t != 0, (hi - o) / t, np.inf)
    tmin = np.max(np.minimum(ta, tb)[t != 0])
    tmax = np.min(np.maximum(ta, tb)[t != 0])
    outside = np.any((t == 0) & ((o < lo - 1e-12) | (o > hi + 1e-12)))
    if outside or tmin > tmax or tmax < line.s0 or tmin > line.s1:
        raise PointNotFoundError(f"line through {tuple(o)} misses the mesh")


def tcv_integral(u: FeFunction, phi: FeFunction, cells=None) -> float:
    """``int u . grad(phi) dx`` with quadrature exact for the integrand."""
    if u.space.mesh is not phi.space.mesh:
        raise ValueError("fields live on different meshes")
    deg = u.space.order + phi.space.order - 1
    return integrate(lambda w: w.u.value[0] * w.phi.grad[0] + w.u.value[1] * w.phi.grad[1],
                     u.space.mesh, coeffs={"u": u, "phi": phi}, cells=cells, degree=max(deg, 1))


def phasefield_levelset(phi: FeFunction, c_ls: float = C_LS) -> FeFunction:
    """``phi - c_ls``: negative inside the crack, positive in the intact material."""
    return FeFunction(phi.space, phi.coeffs - c_ls)


def levelset_crossings(levelset: FeFunction, line: Line, tol: float = 1e-12):
    """Zero crossings of a P1 level set along a line.

    Returns ``(s, cells)``: line parameters of the crossings (merged when
    closer than ``tol``) and one triangle containing each crossing.
    """
    if levelset.space.order != 1 or levelset.space.dim != 1:
        raise ValueError("level sets are scalar P1 functions")
    mesh = levelset.space.mesh
    cells, lo, hi, _ = line_segments(mesh, line)
    x0, x1 = line.point(lo), line.point(hi)
    f0 = _cell_values(levelset, cells, x0[:, None, :])[:, 0]
    f1 = _cell_values(levelset, cells, x1[:, None, :])[:, 0]
    found_s, found_c = [], []
    sign = (f0 <= 0) != (f1 <= 0)
    for c, a, b, fa, fb in zip(cells[sign], lo[sign], hi[sign], f0[sign], f1[sign]):
        found_s.append(a + (b - a) * fa / (fa - fb))
        found_c.append(c)
    if not found_s:
        return np.zeros(0), np.zeros(0, np.int64)
    order = np.argsort(found_s)
    s = np.asarray(found_s)[order]
    c = np.asarray(found_c)[order]
    keep = np.concatenate([[True], np.diff(s) > tol * max(1.0, np.abs(s).max())])
    return s[keep], c[keep]


def cod_point_eval(u: FeFunction, levelset: FeFunction, line: Line | float, return_points: bool = False):
    """Aperture from the normal displacement at the two zero crossings.

    The level set is negative inside the crack; its normalized gradient at
    each crossing points away from the crack, so the aperture is the sum of
    ``u . n`` over the two crossings.
    """
    if np.isscalar(line):
        line = Line.vertical(float(line))
    _check_line_in_mesh(levelset.space.mesh, line)
    s, cells = levelset_crossings(levelset, line)
    if len(s) != 2:
        raise TopologyError(f"level set crosses the line {len(s)} times, expected 2", line.point(s))
    x = line.point(s)
    g = _cell_gradients(levelset, cells)
    nrm = np.hypot(g[0], g[1])
    if np.any(nrm == 0):
        raise TopologyError("level set crossing is not transversal", x)
    n = g / nrm
    uv = _cell_values(u, cells, x[:, None, :])[:, :, 0]
    w = float(np.sum(uv * n))
    if return_points:
        return w, x
    return w


# ---------------------------------------------------------------------------
# profiles and tips
# ---------------------------------------------------------------------------

def profile_abscissae(mesh: Mesh, centreline: Centreline, s_range, h: float, band: float | None = None,
                      min_spacing: float | None = None):
    """Centreline coordinates of nodes near the centreline plus a uniform fill at spacing ``h/2``.

    Fill points closer than ``min_spacing`` (default ``h/4``) to a node
    abscissa are dropped, as are node abscissae closer than that to an
    already kept one.
    """
    a, b = s_range
    band = h if band is None else band
    min_spacing = 0.25 * h if min_spacing is None else min_spacing
    off = np.abs(centreline.offset(mesh.vertices))
    sv = np.sort(centreline.coordinate(mesh.vertices)[(off <= band)])
    sv = sv[(sv > a) & (sv < b)]
    kept = []
    for x in sv:
        if not kept or x - kept[-1] >= min_spacing:
            kept.append(x)
    sv = np.asarray(kept)
    n = max(2, int(np.ceil((b - a) / (0.5 * h))) + 1)
    fill = np.linspace(a, b, n)
    if len(sv):
        j = np.clip(np.searchsorted(sv, fill), 1, len(sv)) - 1
        gap = np.minimum(np.abs(fill - sv[j]), np.abs(fill - sv[np.minimum(j + 1, len(sv) - 1)]))
        fill = fill[gap >= min_spacing]
    return np.unique(np.concatenate([fill, sv]))


def cod_function(u: FeFunction, phi: FeFunction, centreline: Centreline, method: str = "integral",
                 c_ls: float = C_LS, line_range=(-np.inf, np.inf), on_topology: str = "raise"):
    """``s -> COD`` along lines normal to the centreline.

    For the point-evaluation method a line without crossings yields 0. A
    line with another crossing count raises ``TopologyError`` unless
    ``on_topology="skip"``, in which case it yields NaN.
    """
    if method == "integral":
        def f(s):
            return cod_line_integral(u, phi, centreline.cross_line(s, *line_range))
    elif method == "point":
        ls = phasefield_levelset(phi, c_ls)

        def f(s):
            try:
                return cod_point_eval(u, ls, centreline.cross_line(s, *line_range))
            except TopologyError as exc:
                if len(exc.crossings) == 0:
                    return 0.0
                if on_topology == "skip":
                    return np.nan
                raise
    else:
        raise ValueError(f"unknown COD method {method!r}")
    return f


def cod_profile(u: FeFunction, phi: FeFunction, centreline: Centreline, s_range, h: float,
                method: str = "integral", c_ls: float = C_LS, tip_rtol: float = 1e-4,
                abscissae=None, line_range=(-np.inf, np.inf), on_topology: str = "raise") -> CodProfile:
    """Sample the COD along the centreline and locate both tips.

    With ``on_topology="skip"`` lines where the point-evaluation level set
    does not cross exactly twice are dropped from the profile.
    """
    f = cod_function(u, phi, centreline, method, c_ls, line_range, on_topology)
    s = profile_abscissae(u.space.mesh, centreline, s_range, h) if abscissae is None else np.asarray(abscissae)
    w = np.array([f(si) for si in s])
    keep = np.isfinite(w)
    s, w = s[keep], w[keep]
    prof = CodProfile(s, w, centreline, method=method)
    prof.tips = locate_tips(prof, f, tip_rtol=tip_rtol)
    return prof


def locate_tips(profile: CodProfile, cod_fn=None, tip_rtol: float = 1e-4, floor: float | None = None,
                n_bisect: int = 30):
    """Tip abscissae left and right of the COD maximum.

    The tip is the first sample, walking outwards from the maximum, with
    COD below ``tol_tip = max(tip_rtol * COD_max, floor)``; with ``cod_fn``
    the position is then refined by bisection between that sample and its
    inner neighbour.
    """
    s, w = profile.s, profile.w
    if len(w) == 0 or w.max() <= 0:
        raise ValueError("COD profile has no opening")
    wmax = w.max()
    floor = 64 * np.finfo(float).eps * wmax if floor is None else floor
    tol = max(tip_rtol * wmax, floor)
    k = int(np.argmax(w))
    tips = []
    for step in (-1, 1):
        j = k
        while 0 <= j + step < len(w) and w[j] >= tol:
            j += step
        if w[j] >= tol:
            raise ValueError("COD profile does not fall below the tip tolerance inside the sampled range")
        a, b = s[j - step], s[j]
        if cod_fn is not None:
            for _ in range(n_bisect):
                mid = 0.5 * (a + b)
                if cod_fn(mid) >= tol:
                    a = mid
                else:
                    b = mid
        tips.append(0.5 * (a + b) if cod_fn is not None else b)
    return (min(tips), max(tips))
