"""Conforming tetrahedral meshes on axis-aligned box domains.

The domain is a box split by a horizontal plane ``z = z_interface`` into a
lower conducting region (``OmegaC``) and an upper insulating region
(``Omega0``). The boundary is split into the top plane ``Gamma`` (where
tangential field data is measured) and the remaining five walls ``GammaD``.

Construction is fully deterministic:

* each hexahedral grid cell is cut into six tetrahedra by the Kuhn
  (Freudenthal) pattern, which is conforming across translated cells;
* uniform refinement is red octasection with a fixed interior diagonal,
  so repeated refinement cycles through at most three similarity classes
  and element quality does not degrade;
* vertex, edge, and boundary-face tables are kept in sorted order, and
  the text serialization is byte-stable: building the same domain twice,
  or writing, reading, and writing again, yields identical files.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MeshFormatError

# cell region tags
OMEGA_C = 0  # conductor, z < z_interface
OMEGA_0 = 1  # insulator, z > z_interface
CELL_TAG_NAMES = ("OmegaC", "Omega0")

# boundary face tags
GAMMA = 0  # top plane z = z_max, the measurement boundary
GAMMA_D = 1  # the other five walls, zero tangential trace
FACE_TAG_NAMES = ("Gamma", "GammaD")

MESH_HEADER = "eddytv-mesh v1"

# local vertex pairs of the six edges of a tet, lexicographic
TET_EDGE_VERTS = np.array(
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], dtype=np.int64
)
# local vertex triples of the four faces (face i is opposite vertex i)
TET_FACE_VERTS = np.array(
    [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)], dtype=np.int64
)

# Kuhn split: one path per permutation of the axes, vertices kept in path
# order (corner, corner+e_p0, corner+e_p0+e_p1, opposite corner)
_KUHN_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box domain with a horizontal region interface.

    ``z_interface`` may equal ``z_range[0]`` or ``z_range[1]``, in which
    case the whole box is a single region (all conductor when the
    interface sits at the top). Otherwise the z grid is built as the
    union of uniform partitions of the two sub-intervals so that every
    tetrahedron lies wholly inside one region.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]
    z_interface: float
    cells_per_axis: tuple[int, int, int]
    refine_levels: int = 0

    def validate(self) -> None:
        for key in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, key)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError(f"{key} must be a finite increasing interval, got {lo!r}..{hi!r}")
        z0, z1 = self.z_range
        if not (z0 <= self.z_interface <= z1):
            raise ConfigError(
                f"z_interface {self.z_interface!r} outside z_range [{z0!r}, {z1!r}]"
            )
        if len(self.cells_per_axis) != 3 or any(int(n) < 1 for n in self.cells_per_axis):
            raise ConfigError(f"cells_per_axis must be three positive integers, got {self.cells_per_axis!r}")
        if z0 < self.z_interface < z1 and int(self.cells_per_axis[2]) < 2:
            raise ConfigError("cells_per_axis[2] must be >= 2 when z_interface is strictly inside z_range")
        if int(self.refine_levels) < 0:
            raise ConfigError(f"refine_levels must be >= 0, got {self.refine_levels!r}")

    def z_planes(self) -> np.ndarray:
        """Grid planes along z; always contains z_interface exactly."""
        z0, z1 = self.z_range
        nz = int(self.cells_per_axis[2])
        if self.z_interface in (z0, z1):
            return np.linspace(z0, z1, nz + 1)
        frac = (self.z_interface - z0) / (z1 - z0)
        n_lo = int(np.clip(round(nz * frac), 1, nz - 1))
        lower = np.linspace(z0, self.z_interface, n_lo + 1)
        upper = np.linspace(self.z_interface, z1, nz - n_lo + 1)
        return np.concatenate([lower, upper[1:]])


class Mesh:
    """Immutable tetrahedral mesh with region and boundary tags.

    Attributes
    ----------
    vertices : (V, 3) float array
    tets : (T, 4) int array, vertex ids in construction order
    cell_tags : (T,) int array of OMEGA_C / OMEGA_0
    subregion_names : tuple of str, inclusion labels
    subregion_tags : (T,) int array, index into subregion_names or -1
    edges : (E, 2) int array, each row sorted, rows lexicographically sorted
    tet_edges : (T, 6) int array, global edge id per local edge
    boundary_faces : (F, 3) int array, each row sorted, rows sorted
    boundary_face_tags : (F,) int array of GAMMA / GAMMA_D
    boundary_face_tets : (F,) int array, owning tet of each boundary face
    h : float, longest edge in the mesh
    parents : (T,) int array or None, parent tet ids on refined meshes
    """

    def __init__(self, vertices, tets, cell_tags, subregion_names,
                 subregion_tags, boundary_faces, boundary_face_tags):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        self.cell_tags = np.ascontiguousarray(cell_tags, dtype=np.int64)
        self.subregion_names = tuple(subregion_names)
        self.subregion_tags = np.ascontiguousarray(subregion_tags, dtype=np.int64)
        self.parents = None
        self.parent_mesh = None

        nv = len(self.vertices)
        if self.tets.min(initial=0) < 0 or self.tets.max(initial=-1) >= nv:
            raise ConfigError("tet vertex id out of range")
        if len(self.cell_tags) != len(self.tets) or len(self.subregion_tags) != len(self.tets):
            raise ConfigError("per-tet tag arrays must match tet count")

        # deduplicated edge table, encoded as sorted pairs for determinism
        pairs = np.sort(self.tets[:, TET_EDGE_VERTS], axis=-1).reshape(-1, 2)
        keys = pairs[:, 0] * nv + pairs[:, 1]
        ukeys, inv = np.unique(keys, return_inverse=True)
        self.edges = np.column_stack([ukeys // nv, ukeys % nv])
        self.tet_edges = inv.reshape(-1, 6).astype(np.int64)
        self._edge_keys = ukeys

        # face incidence: boundary faces are those owned by exactly one tet
        faces = np.sort(self.tets[:, TET_FACE_VERTS], axis=-1).reshape(-1, 3)
        fkeys = (faces[:, 0] * nv + faces[:, 1]) * nv + faces[:, 2]
        order = np.argsort(fkeys, kind="stable")
        sk = fkeys[order]
        first = np.r_[True, sk[1:] != sk[:-1]]
        last = np.r_[sk[1:] != sk[:-1], True]
        single = first & last
        bkeys = sk[single]
        bowners = order[single] // 4
        self._n_faces_total = int(first.sum())

        bf = np.ascontiguousarray(boundary_faces, dtype=np.int64)
        btags = np.ascontiguousarray(boundary_face_tags, dtype=np.int64)
        if bf.ndim != 2 or bf.shape[1] != 3 or len(btags) != len(bf):
            raise ConfigError("boundary face tables inconsistent")
        bf = np.sort(bf, axis=1)
        want = (bf[:, 0] * nv + bf[:, 1]) * nv + bf[:, 2]
        # canonical order: sorted by vertex triple
        corder = np.argsort(want, kind="stable")
        want = want[corder]
        pos = np.searchsorted(bkeys, want)
        ok = (pos < len(bkeys)) & (bkeys[np.minimum(pos, len(bkeys) - 1)] == want)
        if len(want) != len(bkeys) or not ok.all() or len(np.unique(want)) != len(want):
            raise ConfigError("boundary face list does not match the mesh surface")
        self.boundary_faces = bf[corder]
        self.boundary_face_tags = btags[corder]
        self.boundary_face_tets = bowners[pos]

        lengths = self._edge_lengths()
        self.h = float(lengths.max()) if len(lengths) else 0.0

    # ---- sizes ----

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        """Total face count (interior + boundary), for Euler checks."""
        return self._n_faces_total

    @property
    def n_boundary_faces(self) -> int:
        return len(self.boundary_faces)

    # ---- helpers ----

    def cells_in_region(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.cell_tags == tag)

    def edge_ids(self, pairs: np.ndarray) -> np.ndarray:
        """Global edge ids for (n, 2) vertex pairs; raises if absent."""
        p = np.sort(np.asarray(pairs, dtype=np.int64), axis=-1)
        keys = p[..., 0] * self.n_vertices + p[..., 1]
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, len(self._edge_keys) - 1)
        if not (self._edge_keys[pos] == keys).all():
            raise ConfigError("vertex pair is not a mesh edge")
        return pos

    def _edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)


# ---- geometry helpers ----


def tet_volumes(mesh: Mesh) -> np.ndarray:
    """Unsigned tet volumes."""
    x = mesh.vertices[mesh.tets]
    d = x[:, 1:] - x[:, :1]
    return np.abs(np.linalg.det(d)) / 6.0


def tet_diameters(mesh: Mesh) -> np.ndarray:
    """Longest edge per tet."""
    x = mesh.vertices[mesh.tets]
    pairs = x[:, TET_EDGE_VERTS[:, 1]] - x[:, TET_EDGE_VERTS[:, 0]]
    return np.linalg.norm(pairs, axis=2).max(axis=1)


def tet_quality(mesh: Mesh) -> np.ndarray:
    """Shape measure 6*sqrt(2)*V/diam^3; equals 1 on a regular tet."""
    return 6.0 * np.sqrt(2.0) * tet_volumes(mesh) / tet_diameters(mesh) ** 3


# ---- construction ----


def build_box_mesh(spec: DomainSpec, subregions=()) -> Mesh:
    """Kuhn-split box mesh fitted to the region interface.

    ``subregions`` is a sequence of ``(name, ((x0,x1),(y0,y1),(z0,z1)))``
    inclusion boxes; tets are labelled by centroid membership, first
    match wins. Applies ``spec.refine_levels`` uniform refinements.
    """
    spec.validate()
    nx, ny, nz = (int(n) for n in spec.cells_per_axis)
    xs = np.linspace(*spec.x_range, nx + 1)
    ys = np.linspace(*spec.y_range, ny + 1)
    zs = spec.z_planes()

    npx, npy = nx + 1, ny + 1
    gx = np.tile(xs, npy * (nz + 1))
    gy = np.tile(np.repeat(ys, npx), nz + 1)
    gz = np.repeat(zs, npx * npy)
    vertices = np.column_stack([gx, gy, gz])

    cx = np.tile(np.arange(nx), ny * nz)
    cy = np.tile(np.repeat(np.arange(ny), nx), nz)
    cz = np.repeat(np.arange(nz), nx * ny)
    corner = np.column_stack([cx, cy, cz])  # (C, 3)

    eye = np.eye(3, dtype=np.int64)
    tets = np.empty((len(corner), 6, 4), dtype=np.int64)
    for pi, perm in enumerate(_KUHN_PERMS):
        offs = np.zeros((4, 3), dtype=np.int64)
        offs[1] = eye[perm[0]]
        offs[2] = eye[perm[0]] + eye[perm[1]]
        offs[3] = 1
        idx = corner[:, None, :] + offs[None, :, :]  # (C, 4, 3)
        tets[:, pi, :] = idx[..., 0] + npx * idx[..., 1] + npx * npy * idx[..., 2]
    tets = tets.reshape(-1, 4)

    mesh = _finish_mesh(vertices, tets, spec.z_interface, subregions)
    for _ in range(int(spec.refine_levels)):
        mesh = uniform_refine(mesh)
    return mesh


def _finish_mesh(vertices, tets, z_interface, subregions):
    """Tag cells and boundary faces geometrically and build the Mesh."""
    centroids = vertices[tets].mean(axis=1)
    cell_tags = np.where(centroids[:, 2] < z_interface, OMEGA_C, OMEGA_0)

    names = []
    sub = np.full(len(tets), -1, dtype=np.int64)
    for name, box in subregions:
        _check_subregion_name(name)
        (x0, x1), (y0, y1), (z0, z1) = box
        inside = np.ones(len(tets), dtype=bool)
        for axis, (lo, hi) in enumerate(((x0, x1), (y0, y1), (z0, z1))):
            inside &= (centroids[:, axis] >= lo) & (centroids[:, axis] <= hi)
        names.append(str(name))
        sub[inside & (sub < 0)] = len(names) - 1

    bf, btags = _boundary_faces(vertices, tets)
    return Mesh(vertices, tets, cell_tags, names, sub, bf, btags)


def _check_subregion_name(name) -> None:
    s = str(name)
    if not s or s == "-" or any(ch.isspace() for ch in s):
        raise ConfigError(f"invalid subregion name {name!r}")


def _boundary_faces(vertices, tets):
    nv = len(vertices)
    faces = np.sort(tets[:, TET_FACE_VERTS], axis=-1).reshape(-1, 3)
    fkeys = (faces[:, 0] * nv + faces[:, 1]) * nv + faces[:, 2]
    order = np.argsort(fkeys, kind="stable")
    sk = fkeys[order]
    first = np.r_[True, sk[1:] != sk[:-1]]
    last = np.r_[sk[1:] != sk[:-1], True]
    boundary = faces[order[first & last]]

    z = vertices[:, 2]
    z_max = z.max()
    tol = 1e-12 * max(1.0, float(np.abs(vertices).max()))
    on_top = np.abs(z[boundary] - z_max) <= tol
    tags = np.where(on_top.all(axis=1), GAMMA, GAMMA_D)
    return boundary, tags


# red refinement: corner children + octahedron cut along the m02-m13
# diagonal; midpoint m_ij of local edge (i, j) indexed per TET_EDGE_VERTS
_BEY_CHILDREN = np.array(
    [
        (0, 4, 5, 6),    # v0, m01, m02, m03
        (4, 1, 7, 8),    # m01, v1, m12, m13
        (5, 7, 2, 9),    # m02, m12, v2, m23
        (6, 8, 9, 3),    # m03, m13, m23, v3
        (4, 5, 6, 8),    # m01, m02, m03, m13
        (4, 5, 7, 8),    # m01, m02, m12, m13
        (5, 6, 8, 9),    # m02, m03, m13, m23
        (5, 7, 8, 9),    # m02, m12, m13, m23
    ],
    dtype=np.int64,
)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every tet into 8 children, tags inherited.

    Children of tet ``t`` occupy ids ``8*t .. 8*t+7`` in a fixed order;
    the returned mesh carries ``parents`` and ``parent_mesh`` for
    transfer between levels.
    """
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])

    # local node table per parent: 4 vertices then 6 edge midpoints
    nodes = np.hstack([mesh.tets, mesh.n_vertices + mesh.tet_edges])  # (T, 10)
    children = nodes[:, _BEY_CHILDREN]  # (T, 8, 4)
    tets = children.reshape(-1, 4)

    cell_tags = np.repeat(mesh.cell_tags, 8)
    sub = np.repeat(mesh.subregion_tags, 8)
    bf, btags = _boundary_faces(vertices, tets)
    out = Mesh(vertices, tets, cell_tags, mesh.subregion_names, sub, bf, btags)
    out.parents = np.repeat(np.arange(mesh.n_tets, dtype=np.int64), 8)
    out.parent_mesh = mesh
    return out


def edge_ids_of_pairs(mesh: Mesh, pairs: np.ndarray) -> np.ndarray:
    """Edge ids for (n, 2) vertex pairs given with the lower id first."""
    keys = mesh.edges[:, 0].astype(np.int64) * mesh.n_vertices + mesh.edges[:, 1]
    order = np.argsort(keys)
    want = pairs[:, 0].astype(np.int64) * mesh.n_vertices + pairs[:, 1]
    pos = np.searchsorted(keys, want, sorter=order)
    pos = np.clip(pos, 0, len(order) - 1)
    ids = order[pos]
    if (keys[ids] != want).any():
        raise ValueError("vertex pair is not an edge of the mesh")
    return ids


def nedelec_interpolate(coarse: Mesh, fine: Mesh,
                        fine_edge_values: np.ndarray) -> np.ndarray:
    """Edge-circulation interpolant of a fine edge field onto ``coarse``.

    ``fine`` must be ``uniform_refine(coarse)``: the midpoint of coarse
    edge ``e`` is then fine vertex ``n_coarse_vertices + e``, and the
    circulation along a coarse edge is the sum of its two halves. The
    interpolation is exact on the coarse subspace.
    """
    if fine.n_vertices != coarse.n_vertices + coarse.n_edges:
        raise ValueError("fine mesh is not one refinement of coarse")
    nc = coarse.n_vertices
    a, b = coarse.edges[:, 0], coarse.edges[:, 1]
    m = nc + np.arange(coarse.n_edges)
    # fine ids exceed all coarse ids, so both halves point at the midpoint
    am = edge_ids_of_pairs(fine, np.column_stack([a, m]))
    bm = edge_ids_of_pairs(fine, np.column_stack([b, m]))
    return fine_edge_values[am] - fine_edge_values[bm]


# ---- point location ----


def barycentric_coordinates(mesh: Mesh, tet_ids: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points[i] in tets[tet_ids[i]], (n, 4)."""
    x = mesh.vertices[mesh.tets[tet_ids]]
    d = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)  # columns are edge vectors
    rhs = points - x[:, 0]
    lam = np.linalg.solve(d, rhs[..., None])[..., 0]
    return np.column_stack([1.0 - lam.sum(axis=1), lam])


def locate_points(mesh: Mesh, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Containing tet id per point, lowest id on ties, -1 when outside."""
    from scipy.spatial import cKDTree

    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    centroids = mesh.vertices[mesh.tets].mean(axis=1)
    tree = cKDTree(centroids)
    k = min(mesh.n_tets, 32)
    _, neighbors = tree.query(points, k=k)
    neighbors = np.atleast_2d(neighbors)

    out = np.full(len(points), -1, dtype=np.int64)
    all_ids = None
    for i, p in enumerate(points):
        cand = np.sort(neighbors[i])
        hit = _first_containing(mesh, cand, p, tol)
        if hit < 0:
            if all_ids is None:
                all_ids = np.arange(mesh.n_tets, dtype=np.int64)
            hit = _first_containing(mesh, all_ids, p, tol)
        out[i] = hit
    return out


def _first_containing(mesh, tet_ids, point, tol):
    lam = barycentric_coordinates(mesh, tet_ids, np.broadcast_to(point, (len(tet_ids), 3)))
    ok = np.flatnonzero(lam.min(axis=1) >= -tol)
    return int(tet_ids[ok[0]]) if len(ok) else -1


def descend_to_children(coarse: Mesh, fine: Mesh, coarse_tets: np.ndarray,
                        points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Locate points in ``fine`` given their owners in ``coarse``.

    ``fine`` must be obtained from ``coarse`` by one or more uniform
    refinements; each level is descended by testing the 8 children and
    keeping the one with the largest minimum barycentric coordinate
    (lowest child id on exact ties).
    """
    chain = []
    m = fine
    while m is not coarse:
        if m.parent_mesh is None:
            raise ConfigError("fine mesh is not a refinement of the coarse mesh")
        chain.append(m)
        m = m.parent_mesh
    owners = np.asarray(coarse_tets, dtype=np.int64).copy()
    points = np.asarray(points, dtype=np.float64)
    for level in reversed(chain):
        cand = 8 * owners[:, None] + np.arange(8)  # (n, 8)
        best = np.full(len(owners), -1, dtype=np.int64)
        best_lam = np.full(len(owners), -np.inf)
        for c in range(8):
            lam = barycentric_coordinates(level, cand[:, c], points).min(axis=1)
            take = lam > best_lam + tol
            best[take] = cand[take, c]
            best_lam[take] = lam[take]
        owners = best
    return owners


# ---- serialization ----


def serialize_mesh(mesh: Mesh) -> str:
    """Byte-stable text form; floats use shortest round-trip repr."""
    lines = [MESH_HEADER, f"vertices {mesh.n_vertices}"]
    for x, y, z in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r} {float(z)!r}")
    lines.append(f"tets {mesh.n_tets}")
    names = mesh.subregion_names
    for row, ct, st in zip(mesh.tets, mesh.cell_tags, mesh.subregion_tags):
        sub = names[st] if st >= 0 else "-"
        lines.append(f"{row[0]} {row[1]} {row[2]} {row[3]} {CELL_TAG_NAMES[ct]} {sub}")
    lines.append(f"boundary_faces {mesh.n_boundary_faces}")
    for row, tag in zip(mesh.boundary_faces, mesh.boundary_face_tags):
        lines.append(f"{row[0]} {row[1]} {row[2]} {FACE_TAG_NAMES[tag]}")
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(serialize_mesh(mesh))


def mesh_hash(mesh: Mesh) -> str:
    return hashlib.sha256(serialize_mesh(mesh).encode("ascii")).hexdigest()


class _LineReader:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.pos = 0

    def next(self, what: str) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise MeshFormatError(f"line {self.pos}: unexpected end of file, expected {what}")

    def err(self, msg: str) -> MeshFormatError:
        return MeshFormatError(f"line {self.pos}: {msg}")


def read_mesh(path) -> Mesh:
    """Parse a mesh file; raises MeshFormatError with a line number."""
    with open(path, "r", encoding="ascii") as f:
        return parse_mesh(f.read())


def parse_mesh(text: str) -> Mesh:
    r = _LineReader(text)
    header = r.next("header")
    if header != MESH_HEADER:
        raise r.err(f"unsupported header {header!r}, expected {MESH_HEADER!r}")

    nv = _block_count(r, "vertices")
    vertices = np.empty((nv, 3))
    for i in range(nv):
        parts = r.next("vertex coordinates").split()
        if len(parts) != 3:
            raise r.err(f"expected 3 coordinates, got {len(parts)}")
        try:
            vertices[i] = [float(p) for p in parts]
        except ValueError as e:
            raise r.err(f"bad coordinate: {e}") from None

    nt = _block_count(r, "tets")
    tets = np.empty((nt, 4), dtype=np.int64)
    cell_tags = np.empty(nt, dtype=np.int64)
    sub = np.empty(nt, dtype=np.int64)
    names: list[str] = []
    name_ids: dict[str, int] = {}
    for i in range(nt):
        parts = r.next("tet row").split()
        if len(parts) != 6:
            raise r.err(f"expected 'v0 v1 v2 v3 cell_tag subregion', got {len(parts)} fields")
        try:
            tets[i] = [int(p) for p in parts[:4]]
        except ValueError as e:
            raise r.err(f"bad vertex id: {e}") from None
        if (tets[i] < 0).any() or (tets[i] >= nv).any():
            raise r.err(f"tet vertex id out of range 0..{nv - 1}")
        if parts[4] not in CELL_TAG_NAMES:
            raise r.err(f"unknown cell tag {parts[4]!r}, expected one of {CELL_TAG_NAMES}")
        cell_tags[i] = CELL_TAG_NAMES.index(parts[4])
        tok = parts[5]
        if tok == "-":
            sub[i] = -1
        else:
            if tok not in name_ids:
                name_ids[tok] = len(names)
                names.append(tok)
            sub[i] = name_ids[tok]

    nf = _block_count(r, "boundary_faces")
    bf = np.empty((nf, 3), dtype=np.int64)
    btags = np.empty(nf, dtype=np.int64)
    for i in range(nf):
        parts = r.next("boundary face row").split()
        if len(parts) != 4:
            raise r.err(f"expected 'v0 v1 v2 tag', got {len(parts)} fields")
        try:
            bf[i] = [int(p) for p in parts[:3]]
        except ValueError as e:
            raise r.err(f"bad vertex id: {e}") from None
        if parts[3] not in FACE_TAG_NAMES:
            raise r.err(f"unknown face tag {parts[3]!r}, expected one of {FACE_TAG_NAMES}")
        btags[i] = FACE_TAG_NAMES.index(parts[3])

    try:
        return Mesh(vertices, tets, cell_tags, names, sub, bf, btags)
    except ConfigError as e:
        raise MeshFormatError(f"inconsistent mesh tables: {e}") from None


def _block_count(r: _LineReader, keyword: str) -> int:
    parts = r.next(f"'{keyword} N'").split()
    if len(parts) != 2 or parts[0] != keyword:
        raise r.err(f"expected '{keyword} N'")
    try:
        n = int(parts[1])
    except ValueError:
        raise r.err(f"bad count {parts[1]!r}") from None
    if n < 0:
        raise r.err(f"negative count {n}")
    return n
