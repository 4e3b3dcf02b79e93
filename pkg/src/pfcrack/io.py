"""Mesh and field files: legacy ASCII VTK and a line-based native mesh format."""
from __future__ import annotations

import numpy as np

from .fem import FeFunction
from .mesh import Mesh, MeshError, refine_uniform

_VTK_TRIANGLE, _VTK_LINE = 5, 3


def write_native(mesh: Mesh, path):
    """Native text format: vertex list, triangle list with region, tagged edges."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pfcrack-mesh 1\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices.tolist():
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for (a, b, c), r in zip(mesh.triangles, mesh.region):
            fh.write(f"{a} {b} {c} {r}\n")
        fh.write(f"edges {len(mesh.boundary_edges)}\n")
        for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"{a} {b} {t}\n")


def read_native(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines or lines[0][0] != "pfcrack-mesh":
        raise MeshError(f"{path}: not a native mesh file")
    pos = 1

    def block(name, width, dtype):
        nonlocal pos
        if lines[pos][0] != name:
            raise MeshError(f"{path}: expected section {name!r}, found {lines[pos][0]!r}")
        n = int(lines[pos][1])
        rows = lines[pos + 1:pos + 1 + n]
        pos += 1 + n
        return np.array(rows, dtype=dtype).reshape(n, width)

    v = block("vertices", 2, float)
    t = block("triangles", 4, np.int64)
    e = block("edges", 3, np.int64)
    return Mesh(v, t[:, :3], e[:, :2], e[:, 2], t[:, 3])


def _header(fh, title, points):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {len(points)} double\n")
    for x, y in np.asarray(points, float).tolist():
        fh.write(f"{x!r} {y!r} 0.0\n")


def _write_array(fh, name, arr):
    arr = np.asarray(arr)
    if arr.ndim == 1:
        kind = "int" if np.issubdtype(arr.dtype, np.integer) else "double"
        fh.write(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(map(repr if kind == "double" else str, arr.tolist())) + "\n")
    else:
        fh.write(f"VECTORS {name} double\n")
        for a, b in (arr.T if arr.shape[0] == 2 else arr).astype(float).tolist():
            fh.write(f"{a!r} {b!r} 0.0\n")


def write_mesh_vtk(mesh: Mesh, path, title: str = "pfcrack mesh"):
    """Triangles with their region and tagged boundary edges as line cells.

    The cell array ``tag`` holds the region for triangles and the
    boundary tag for lines.
    """
    nt, nb = mesh.n_triangles, len(mesh.boundary_edges)
    with open(path, "w", encoding="utf-8") as fh:
        _header(fh, title, mesh.vertices)
        fh.write(f"CELLS {nt + nb} {4 * nt + 3 * nb}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        for a, b in mesh.boundary_edges:
            fh.write(f"2 {a} {b}\n")
        fh.write(f"CELL_TYPES {nt + nb}\n")
        fh.write("\n".join([str(_VTK_TRIANGLE)] * nt + [str(_VTK_LINE)] * nb) + "\n")
        fh.write(f"CELL_DATA {nt + nb}\n")
        _write_array(fh, "tag", np.concatenate([mesh.region, mesh.boundary_tags]).astype(np.int64))


def read_mesh_vtk(path) -> Mesh:
    """Read a file written by :func:`write_mesh_vtk`."""
    with open(path, encoding="utf-8") as fh:
        tok = fh.read().split()
    i = tok.index("POINTS")
    n = int(tok[i + 1])
    pts = np.array(tok[i + 3:i + 3 + 3 * n], float).reshape(n, 3)[:, :2]
    i = tok.index("CELLS")
    nc = int(tok[i + 1])
    j = i + 3
    cells = []
    for _ in range(nc):
        k = int(tok[j])
        cells.append([int(t) for t in tok[j + 1:j + 1 + k]])
        j += 1 + k
    i = tok.index("CELL_TYPES")
    types = np.array(tok[i + 2:i + 2 + nc], int)
    i = tok.index("tag", tok.index("CELL_DATA"))
    tags = np.array(tok[i + 5:i + 5 + nc], np.int64)
    tri = types == _VTK_TRIANGLE
    lin = types == _VTK_LINE
    t = np.array([c for c, f in zip(cells, tri) if f], np.int64).reshape(-1, 3)
    e = np.array([c for c, f in zip(cells, lin) if f], np.int64).reshape(-1, 2)
    return Mesh(pts, t, e, tags[lin], tags[tri])


def _nodal(f: FeFunction, n_points: int):
    """Values of ``f`` at the output points (vertices, or vertices + edge midpoints for P2)."""
    sp = f.space
    out = np.zeros((sp.dim, n_points))
    for c in range(sp.dim):
        out[c, sp.entities] = f.component(c)
    return out[0] if sp.dim == 1 else out


def write_fields_vtk(path, mesh: Mesh, fields: dict, cell_data: dict | None = None, title: str = "pfcrack fields"):
    """Point data per vertex; with any P2 field the once-refined mesh is written.

    Values outside a restricted space are written as 0. ``fields`` maps
    names to FeFunctions or to vertex arrays of shape (nv,) or (2, nv).
    """
    p2 = any(isinstance(f, FeFunction) and f.space.order == 2 for f in fields.values())
    out_mesh = refine_uniform(mesh) if p2 else mesh
    npts = out_mesh.n_vertices
    data = {}
    for name, f in fields.items():
        if isinstance(f, FeFunction):
            if f.space.mesh is not mesh:
                raise ValueError(f"field {name!r} lives on a different mesh")
            if f.space.order == 1 and p2:
                vals = _nodal(f, mesh.n_vertices)
                # linear interpolation to the edge midpoints
                e = mesh.edges
                mid = 0.5 * (vals[..., e[:, 0]] + vals[..., e[:, 1]])
                data[name] = np.concatenate([vals, mid], axis=-1)
            else:
                data[name] = _nodal(f, npts)
        else:
            arr = np.asarray(f, float)
            if arr.shape[-1] != mesh.n_vertices:
                raise ValueError(f"array field {name!r} must have one value per vertex")
            if p2:
                e = mesh.edges
                arr = np.concatenate([arr, 0.5 * (arr[..., e[:, 0]] + arr[..., e[:, 1]])], axis=-1)
            data[name] = arr
    nt = out_mesh.n_triangles
    with open(path, "w", encoding="utf-8") as fh:
        _header(fh, title, out_mesh.vertices)
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in out_mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n" + "\n".join([str(_VTK_TRIANGLE)] * nt) + "\n")
        fh.write(f"CELL_DATA {nt}\n")
        _write_array(fh, "region", out_mesh.region.astype(np.int64))
        for name, arr in (cell_data or {}).items():
            arr = np.asarray(arr)
            _write_array(fh, name, np.tile(arr, 4) if p2 else arr)
        fh.write(f"POINT_DATA {npts}\n")
        for name, arr in data.items():
            _write_array(fh, name, arr)
