"""End-to-end experiment driver: phase-field, reconstruction, Stokes and FSI per mesh level.

Every experiment writes ``results.csv`` (one row per level), a JSON
``manifest.json`` (config, config hash, package versions, per-stage wall
times) and optional VTK snapshots into the output directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
import traceback
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .fsi import FsiParams, fsi_newton_solve, point_values
from .io import write_fields_vtk, write_mesh_vtk
from .mesh import FLUID, PIECEWISE_QUADRATIC, SizeField, generate_graded_mesh
from .phasefield import PffParams, run_loading_steps, write_history_csv
from .quantities import C_LS, Centreline, cod_function, tcv_integral
from .reconstruct import EXPLICIT_MESH, VARIANTS, reconstruct, reconstruction_profile, tjunction_geometry
from .stokes import (ManufacturedEllipse, StokesParams, convergence_table, ellipse_mesh, solve_stokes,
                     stokes_errors)

EXPERIMENTS = ("sneddon", "stokes-ellipse", "fsi-sneddon", "fsi-tcrack")
DOMAIN = (0.0, 4.0, 0.0, 4.0)

# target point values of the displacement per mesh level
FSI_SNEDDON_TARGETS = {
    0: (-2.08958e-11, 1.11351e-9),
    1: (-2.88528e-11, 1.21810e-9),
    2: (-3.00343e-11, 1.22641e-9),
    3: (-3.15208e-11, 1.24845e-9),
    4: (-3.42140e-11, 1.28361e-9),
}
FSI_SNEDDON_REFERENCE = (-3.555e-11, 1.303e-9)
FSI_SNEDDON_POINT = (2.1, 2.015795)
FSI_TCRACK_TARGETS = {
    0: (-2.39501e-9, 2.38784e-10),
    1: (-2.88056e-9, -1.04270e-10),
    2: (-3.03558e-9, -6.25539e-10),
    3: (-2.78315e-9, -6.23526e-10),
    4: (-2.60130e-9, -4.75054e-10),
    5: (-2.33500e-9, -3.96828e-10),
}
FSI_TCRACK_POINTS = ((2.098, 2.0002), (2.05, 2.025))


def sneddon_tcv(E: float = 1e5, nu: float = 0.35, p: float = 4.5e3, l0: float = 0.2) -> float:
    """Total crack volume of a pressurized line crack of half length ``l0`` in an infinite plane-strain body."""
    return 2 * np.pi * (1 - nu**2) * l0**2 * p / E


def sneddon_cod(x, x_c: float = 2.0, E: float = 1e5, nu: float = 0.35, p: float = 4.5e3, l0: float = 0.2):
    """Opening ``4 (1 - nu^2) l0 p / E sqrt(1 - (x - x_c)^2 / l0^2)``, zero beyond the tips."""
    r = 1 - ((np.asarray(x, float) - x_c) / l0) ** 2
    return 4 * (1 - nu**2) * l0 * p / E * np.sqrt(np.maximum(r, 0.0))


@dataclass
class ExperimentConfig:
    """Experiment description; see :func:`default_config` for the per-experiment defaults.

    ``pff`` holds keyword overrides of :meth:`PffParams.for_mesh_size`,
    ``stokes`` and ``fsi`` those of :class:`StokesParams` / :class:`FsiParams`.
    ``geometry`` selects exact or reconstructed crack meshes for the Stokes
    experiment.
    """

    experiment: str = "sneddon"
    levels: list = field(default_factory=lambda: [0, 1, 2, 3])
    h0: float = 0.02
    pff: dict = field(default_factory=dict)
    stokes: dict = field(default_factory=dict)
    fsi: dict = field(default_factory=dict)
    variants: list = field(default_factory=lambda: list(VARIANTS))
    cod_method: str = "integral"
    cod_points: list = field(default_factory=lambda: [2.0, 2.13])
    c_ls: float = C_LS
    geometry: str = "exact"
    curve: str = PIECEWISE_QUADRATIC
    out: str = "results"
    vtk: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not self.levels:
            raise ValueError("levels must be nonempty")
        if any(int(l) != l or l < 0 for l in self.levels):
            raise ValueError("levels must be nonnegative integers")
        if not self.h0 > 0:
            raise ValueError("h0 must be positive")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ValueError(f"unknown reconstruction variants {bad}")
        if self.cod_method not in ("integral", "point"):
            raise ValueError("cod_method must be 'integral' or 'point'")
        if self.geometry not in ("exact", "reconstructed"):
            raise ValueError("geometry must be 'exact' or 'reconstructed'")
        # parameter invariants
        self.pff_params(self.h0)
        self.stokes_params()
        self.fsi_params()

    def pff_params(self, h: float) -> PffParams:
        return PffParams.for_mesh_size(h, **self.pff)

    def stokes_params(self) -> StokesParams:
        return StokesParams(**{"nu_f": 1e-4, **self.stokes})

    def fsi_params(self) -> FsiParams:
        return FsiParams.from_dict(self.fsi)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return config_from_dict(data)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Defaults reproducing the four benchmark set-ups."""
    base = {"experiment": experiment}
    if experiment == "stokes-ellipse":
        base.update(h0=0.008, levels=[0, 1, 2, 3], variants=[EXPLICIT_MESH])
    elif experiment == "fsi-sneddon":
        base.update(h0=0.02, levels=[0, 1, 2, 3], variants=[EXPLICIT_MESH])
    elif experiment == "fsi-tcrack":
        base.update(h0=0.01, levels=[0, 1, 2], variants=[EXPLICIT_MESH],
                    pff={"E": 5e4, "p": 1e4},
                    fsi={"E": 5e4, "forcing": {"c1": 1e-4, "c2": 5000.0, "x0": [2.098, 2.002]}})
    base.update(overrides)
    return ExperimentConfig(**base)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Experiment defaults updated with the given keys."""
    data = dict(data)
    exp = data.pop("experiment", "sneddon")
    return default_config(exp, **data)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

class _Timer:
    def __init__(self):
        self.times = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.times[name] = timer.times.get(name, 0.0) + time.perf_counter() - self.t
        return _Ctx()


def sneddon_slits(h: float):
    return [(1.8, 2.2, 2 - h, 2 + h)]


def tcrack_slits(h: float):
    return [(1.9, 2.1, 2 - h, 2 + h), (2.1 - h, 2.1 + h, 1.9, 2.1)]


def phasefield_stage(cfg: ExperimentConfig, h: float, slits, timer, outdir: Path | None = None, tag: str = ""):
    params = cfg.pff_params(h)
    with timer("mesh"):
        mesh = generate_graded_mesh(DOMAIN, slits, SizeField(h, min(100 * h, 2.0)))
    with timer("phasefield"):
        state = run_loading_steps(params, mesh, slits)
    if outdir is not None:
        write_history_csv(state, outdir / f"phasefield_steps{tag}.csv")
        if cfg.vtk:
            write_fields_vtk(outdir / f"phasefield{tag}.vtk", mesh, {"u": state.u, "phi": state.phi})
    return params, mesh, state


def _sneddon_level(cfg, level, timer, outdir):
    h = cfg.h0 * 2.0**-level
    params, mesh, state = phasefield_stage(cfg, h, sneddon_slits(h), timer, outdir, f"_l{level}")
    exact = sneddon_tcv(params.E, params.nu, params.p)
    row = {"level": level, "h": h, "n_triangles": mesh.n_triangles}
    with timer("quantities"):
        tcv = tcv_integral(state.u, state.phi)
        row.update(tcv_phasefield=tcv, tcv_exact=exact, tcv_rel_error=tcv / exact - 1)
        cl = Centreline.horizontal(2.0)
        for meth in ("integral", "point"):
            f = cod_function(state.u, state.phi, cl, meth, cfg.c_ls)
            for x in cfg.cod_points:
                w = f(x)
                ex = float(sneddon_cod(x, E=params.E, nu=params.nu, p=params.p))
                row[f"cod_{meth}_{x:g}"] = w
                row[f"cod_exact_{x:g}"] = ex
                row[f"cod_{meth}_{x:g}_rel_error"] = w / ex - 1 if ex else np.nan
    for v in cfg.variants:
        with timer(f"reconstruct_{v}"):
            geom, area, extra = reconstruct(state.u, state.phi, v, cl, h=h, kind=cfg.curve,
                                            cod_method=cfg.cod_method, c_ls=cfg.c_ls)
        row[f"area_{v}"] = area
        row[f"area_{v}_rel_tcv"] = area / tcv - 1
        if "profile" in extra and v == cfg.variants[0]:
            extra["profile"].to_csv(outdir / f"cod_profile_l{level}.csv")
        if geom is not None:
            (outdir / f"geometry_{v}_l{level}.json").write_text(geom.to_json(), encoding="utf-8")
        if cfg.vtk and "levelset" in extra:
            write_fields_vtk(outdir / f"levelset_{v}_l{level}.vtk", mesh, {"levelset": extra["levelset"].function})
    return row


def _stokes_level(cfg, level, timer, outdir):
    geom = ManufacturedEllipse()
    sp = cfg.stokes_params()
    sp = StokesParams(nu_f=sp.nu_f, rho_f=sp.rho_f, geometry=geom)
    row = {"level": level}
    if cfg.geometry == "exact":
        h = cfg.h0 * 2.0**-level
        with timer("mesh"):
            mesh = ellipse_mesh(geom, h, DOMAIN)
    else:
        h = cfg.h0 * 2.0**-level
        _, _, state = phasefield_stage(cfg, h, sneddon_slits(h), timer, outdir, f"_l{level}")
        with timer("reconstruct"):
            _, _, extra = reconstruct(state.u, state.phi, EXPLICIT_MESH, Centreline.horizontal(2.0), h=h,
                                      kind=cfg.curve, cod_method=cfg.cod_method, c_ls=cfg.c_ls)
        mesh = extra["mesh"]
    with timer("stokes"):
        u, p = solve_stokes(mesh, sp)
    l2u, h1u, l2p = stokes_errors(u, p, geom, sp.nu_f)
    row.update(h=h, n_fluid=int(np.sum(mesh.region == FLUID)), fluid_area=mesh.region_area(FLUID),
               l2_u=l2u, h1_u=h1u, l2_p=l2p)
    if cfg.vtk:
        write_fields_vtk(outdir / f"stokes_l{level}.vtk", mesh, {"velocity": u, "pressure": p})
    return row


def _fsi_row(cfg, level, mesh, timer, outdir, points, targets):
    prm = cfg.fsi_params()
    with timer("fsi"):
        sol = fsi_newton_solve(prm, mesh)
    vals = point_values(sol, points)
    row = {"fluid_area": mesh.region_area(FLUID), "n_triangles": mesh.n_triangles, "newton_iterations": sol.iterations}
    for k, (pt, val) in enumerate(zip(points, vals)):
        key = f"u_{pt[0]}_{pt[1]}"
        row[f"{key}_x"], row[f"{key}_y"] = float(val[0]), float(val[1])
        if k == 0 and level in targets:
            tx, ty = targets[level]
            row.update(target_x=tx, target_y=ty, rel_error_x=val[0] / tx - 1, rel_error_y=val[1] / ty - 1)
    if cfg.vtk:
        write_fields_vtk(outdir / f"fsi_l{level}.vtk", mesh, {"u": sol.u, "v": sol.v, "p": sol.p})
        write_mesh_vtk(mesh, outdir / f"fsi_mesh_l{level}.vtk")
    return row


def _fsi_sneddon_level(cfg, level, timer, outdir):
    h = cfg.h0 * 2.0**-level
    _, _, state = phasefield_stage(cfg, h, sneddon_slits(h), timer, outdir, f"_l{level}")
    with timer("reconstruct"):
        geom, area, extra = reconstruct(state.u, state.phi, EXPLICIT_MESH, Centreline.horizontal(2.0), h=h,
                                        kind=cfg.curve, cod_method=cfg.cod_method, c_ls=cfg.c_ls)
    (outdir / f"geometry_l{level}.json").write_text(geom.to_json(), encoding="utf-8")
    row = {"level": level, "h": h, "tcv_phasefield": tcv_integral(state.u, state.phi)}
    row.update(_fsi_row(cfg, level, extra["mesh"], timer, outdir, [FSI_SNEDDON_POINT], FSI_SNEDDON_TARGETS))
    return row


def _fsi_tcrack_level(cfg, level, timer, outdir):
    from .mesh import remesh_fitted
    h = cfg.h0 * 2.0**-level
    _, _, state = phasefield_stage(cfg, h, tcrack_slits(h), timer, outdir, f"_l{level}")
    with timer("reconstruct"):
        ch = reconstruction_profile(state.u, state.phi, Centreline.horizontal(2.0), (1.6, 2.4), h,
                                    method=cfg.cod_method, c_ls=cfg.c_ls)
        cv = reconstruction_profile(state.u, state.phi, Centreline.vertical(2.1), (1.6, 2.4), h,
                                    method=cfg.cod_method, c_ls=cfg.c_ls)
        geom = tjunction_geometry(ch, cv, kind=cfg.curve)
        mesh = remesh_fitted(DOMAIN, geom.curve, SizeField(h, min(100 * h, 2.0)))
    (outdir / f"geometry_l{level}.json").write_text(geom.to_json(), encoding="utf-8")
    row = {"level": level, "h": h, "tcv_phasefield": tcv_integral(state.u, state.phi)}
    row.update(_fsi_row(cfg, level, mesh, timer, outdir, list(FSI_TCRACK_POINTS), FSI_TCRACK_TARGETS))
    return row


_LEVEL_RUNNERS = {
    "sneddon": _sneddon_level,
    "stokes-ellipse": _stokes_level,
    "fsi-sneddon": _fsi_sneddon_level,
    "fsi-tcrack": _fsi_tcrack_level,
}


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def package_versions() -> dict:
    out = {"pfcrack": __version__}
    for name in ("numpy", "scipy", "triangle", "shapely"):
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


def run_level(cfg: ExperimentConfig, level: int, outdir: Path) -> tuple[dict, dict]:
    """One level; a failing stage yields a row with ``status=failed`` and the error message."""
    timer = _Timer()
    try:
        row = _LEVEL_RUNNERS[cfg.experiment](cfg, level, timer, outdir)
        row["status"] = "ok"
        row["error"] = ""
    except Exception as exc:  # a failed level must not stop the others
        row = {"level": level, "h": cfg.h0 * 2.0**-level, "status": "failed",
               "error": f"{type(exc).__name__}: {exc}"}
        (outdir / f"failure_l{level}.txt").write_text(traceback.format_exc(), encoding="utf-8")
    return row, timer.times


def run_pipeline(cfg: ExperimentConfig, log=None) -> dict:
    """Run all configured levels; write ``results.csv`` and ``manifest.json``.

    Returns ``{"rows": [...], "manifest": {...}}``.
    """
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows, stages = [], {}
    for level in cfg.levels:
        t0 = time.perf_counter()
        row, times = run_level(cfg, int(level), outdir)
        row["wall_time"] = time.perf_counter() - t0
        rows.append(row)
        stages[str(level)] = times
        if log:
            log(f"{cfg.experiment} level {level}: {row['status']} in {row['wall_time']:.1f}s"
                + (f" ({row['error']})" if row["error"] else ""))
    if cfg.experiment == "stokes-ellipse":
        _add_orders(rows)
    write_rows(rows, outdir / "results.csv")
    manifest = {"experiment": cfg.experiment, "config": cfg.to_dict(), "config_hash": cfg.hash(),
                "versions": package_versions(), "stage_times": stages,
                "status": {str(r["level"]): r["status"] for r in rows}}
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return {"rows": rows, "manifest": manifest}


def _add_orders(rows):
    ok = [r for r in rows if r["status"] == "ok"]
    if len(ok) < 2:
        return
    orders = convergence_table([(r["h"], r["l2_u"], r["h1_u"], r["l2_p"]) for r in ok])
    for r, o in zip(ok, orders):
        r["order_l2_u"], r["order_h1_u"], r["order_l2_p"] = (float(v) for v in o)


def write_rows(rows, path):
    keys = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return v


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def markdown_table(rows, columns=None) -> str:
    """Markdown table of CSV rows; floats shown with 5 significant digits."""
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())

    def cell(v):
        try:
            x = float(v)
        except (TypeError, ValueError):
            return str(v)
        if str(v).strip().lstrip("-").isdigit():
            return str(v)
        return f"{x:.5g}"

    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(cell(r.get(c, "")) for c in columns) + " |")
    return "\n".join(lines)


def generate_reference(levels=(0, 1, 2), h0: float = 0.008, out: str = "reference", fsi: dict | None = None,
                       log=None) -> list:
    """FSI point values on fitted meshes of the exact opened Sneddon ellipse.

    The ellipse has half axes ``l0`` and ``COD(x_c) / 2``. Rows are written
    to ``reference.csv``; the last level is the finest estimate.
    """
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    prm = FsiParams.from_dict(fsi or {})
    geom = ManufacturedEllipse(0.2, float(sneddon_cod(2.0)) / 2, (2.0, 2.0))
    rows = []
    for level in levels:
        h = h0 * 2.0**-level
        t0 = time.perf_counter()
        mesh = ellipse_mesh(geom, h, DOMAIN)
        sol = fsi_newton_solve(prm, mesh)
        val = point_values(sol, [FSI_SNEDDON_POINT])[0]
        rows.append({"level": level, "h": h, "n_triangles": mesh.n_triangles, "u_x": float(val[0]),
                     "u_y": float(val[1]), "wall_time": time.perf_counter() - t0})
        if log:
            log(f"reference level {level}: u = ({val[0]:.5e}, {val[1]:.5e})")
    write_rows(rows, outdir / "reference.csv")
    return rows
