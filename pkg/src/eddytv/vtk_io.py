"""Legacy ASCII VTK export of reconstruction fields.

One unstructured grid per file: every mesh vertex as a point, every tet
as a cell (type 10). Nodal fields that live on the conductivity space
are zero-extended to the full vertex set, matching their zero boundary
values. Numbers print via repr for byte-stable round trips.
"""

from __future__ import annotations

import numpy as np

from .assembly import cell_gradient_operator, dof_map
from .mesh import Mesh


def _fmt(x: float) -> str:
    return repr(float(x))


def _expand_nodal(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    dm = dof_map(mesh)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (dm.n_vh,):
        raise ValueError("nodal field has shape %s, expected (%d,)"
                         % (values.shape, dm.n_vh))
    full = np.zeros(mesh.n_vertices)
    full[dm.vh_vertices] = values
    return full


def export_vtk(path, mesh: Mesh, sigma: np.ndarray,
               s: np.ndarray | None = None,
               y_dual: np.ndarray | None = None,
               title: str = "conductivity reconstruction") -> None:
    """Write sigma (plus optional s, y) with per-cell diagnostics."""
    grad_op = cell_gradient_operator(mesh)
    grad_mag = np.zeros(mesh.n_tets)
    grad = grad_op.apply(np.asarray(sigma, dtype=np.float64))
    grad_mag[grad_op.cells] = np.sqrt((grad ** 2).sum(axis=1))

    point_fields = [("sigma", _expand_nodal(mesh, sigma))]
    if s is not None:
        point_fields.append(("s", _expand_nodal(mesh, s)))
    if y_dual is not None:
        point_fields.append(("y", _expand_nodal(mesh, y_dual)))

    lines = []
    push = lines.append
    push("# vtk DataFile Version 3.0")
    push(title[:255])
    push("ASCII")
    push("DATASET UNSTRUCTURED_GRID")
    push("POINTS %d double" % mesh.n_vertices)
    for p in mesh.vertices:
        push("%s %s %s" % (_fmt(p[0]), _fmt(p[1]), _fmt(p[2])))
    push("CELLS %d %d" % (mesh.n_tets, 5 * mesh.n_tets))
    for tet in mesh.tets:
        push("4 %d %d %d %d" % tuple(tet))
    push("CELL_TYPES %d" % mesh.n_tets)
    lines.extend(["10"] * mesh.n_tets)

    push("POINT_DATA %d" % mesh.n_vertices)
    for name, values in point_fields:
        push("SCALARS %s double 1" % name)
        push("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)

    push("CELL_DATA %d" % mesh.n_tets)
    push("SCALARS grad_sigma_mag double 1")
    push("LOOKUP_TABLE default")
    lines.extend(_fmt(v) for v in grad_mag)
    push("SCALARS subregion int 1")
    push("LOOKUP_TABLE default")
    lines.extend(str(int(t)) for t in mesh.subregion_tags)
    push("SCALARS region int 1")
    push("LOOKUP_TABLE default")
    lines.extend(str(int(t)) for t in mesh.cell_tags)

    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
