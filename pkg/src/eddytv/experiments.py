"""Synthetic experiments: truth fields, data generation, noise, metrics.

Observation data is produced the honest way: the state problem is solved
with the exact conductivity on a uniformly refined mesh, and the fine
tangential trace is evaluated at the coarse mesh's boundary quadrature
points. Reusing the inversion mesh for data (refine_extra=0) is allowed
only as a test shortcut for gradient checks.

Alongside the observation the generator ships a background calibration:
the same fine solve with zero conductivity, as a trace and as an edge
interpolant on the inversion mesh. Inversion then runs in scattered
field form, fitting only the conductivity response. The point-dipole
sources make this split essential at desk scale; see EddyProblem.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .admm import OuterConfig
from .assembly import (TRI_QUAD_RULE, Discretization, dof_map,
                       evaluate_edge_field)
from .errors import ConfigError, MeshFormatError
from .forward import EddyProblem, PhysicalParams, SourceSpec
from .mesh import (_BEY_CHILDREN, OMEGA_C, DomainSpec, Mesh, build_box_mesh,
                   descend_to_children, mesh_hash, nedelec_interpolate,
                   tet_volumes, uniform_refine)

#: x-y grid of dipole positions just above the conductor interface.
DIPOLE_GRID = tuple(
    (-2.0 + 0.1 * i, -2.0 + 0.1 * j, 0.04)
    for i in range(1, 37) for j in range(1, 37)
)

#: Desk-scale resolution for the bundled presets: 8691 edges, and one
#: uniform refinement of it (for data generation) still factorizes in
#: a few GB. Finer bases exhaust memory at the data-generation step.
PRESET_CELLS = (10, 10, 11)


@dataclass(frozen=True)
class ConductivityTruth:
    """Piecewise-constant truth: value per closed box, 0 elsewhere.

    Boxes are ((x0,x1),(y0,y1),(z0,z1)) with closed membership; the
    first matching box wins where boxes overlap.
    """

    boxes: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if len(self.boxes) != len(self.values):
            raise ConfigError("one value per truth box is required")

    def value_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(pts.shape[0])
        unset = np.ones(pts.shape[0], dtype=bool)
        for box, value in zip(self.boxes, self.values):
            (x0, x1), (y0, y1), (z0, z1) = box
            hit = (unset
                   & (pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                   & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
                   & (pts[:, 2] >= z0) & (pts[:, 2] <= z1))
            out[hit] = value
            unset &= ~hit
        return out

    def inside(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hit = np.zeros(pts.shape[0], dtype=bool)
        for box in self.boxes:
            (x0, x1), (y0, y1), (z0, z1) = box
            hit |= ((pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                    & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
                    & (pts[:, 2] >= z0) & (pts[:, 2] <= z1))
        return hit

    def nodal_values(self, mesh: Mesh) -> np.ndarray:
        """Interpolant on the conductivity space (zero outside its dofs)."""
        dm = dof_map(mesh)
        return self.value_at(mesh.vertices[dm.vh_vertices])

    def cell_values(self, mesh: Mesh) -> np.ndarray:
        """Centroid-sampled value per conductor cell (cell order)."""
        cells = mesh.cells_in_region(OMEGA_C)
        centroids = mesh.vertices[mesh.tets[cells]].mean(axis=1)
        return self.value_at(centroids)


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    domain: DomainSpec
    sigma0: float
    truth: ConductivityTruth
    outer: OuterConfig
    noise: float = 0.005
    seed: int = 0
    source_positions: tuple = DIPOLE_GRID
    source_direction: tuple = (1.0, 0.0, 0.0)
    omega: float = 1.0
    mu: float = 1.0
    eps: float = 1.0

    def validate(self) -> None:
        self.domain.validate()
        self.outer.validate(self.sigma0)
        if self.noise < 0:
            raise ConfigError("noise level must be >= 0")
        for box in self.truth.boxes:
            (x0, x1), (y0, y1), (z0, z1) = box
            if not (self.domain.x_range[0] <= x0 <= x1 <= self.domain.x_range[1]
                    and self.domain.y_range[0] <= y0 <= y1 <= self.domain.y_range[1]
                    and self.domain.z_range[0] <= z0 <= z1 <= self.domain.z_interface):
                raise ConfigError(
                    "truth box %s is not contained in the conductor" % (box,))

    def build_mesh(self) -> Mesh:
        return build_box_mesh(self.domain)

    def source(self) -> SourceSpec:
        return SourceSpec(positions=self.source_positions,
                          direction=self.source_direction, omega=self.omega)

    def params(self) -> PhysicalParams:
        return PhysicalParams(mu=self.mu, eps=self.eps, sigma0=self.sigma0)


def preset_example(n: int, cells: tuple = PRESET_CELLS,
                   refine_levels: int = 0) -> ExperimentPreset:
    """The three bundled reconstruction presets.

    Two printed box extents are normalized: example 2's first inclusion
    interval arrives reversed and is sorted, and example 3's first leg
    uses the z-range of its second leg (the lone positive z would poke
    out of the conductor).
    """
    if n not in (1, 2, 3):
        raise ConfigError("preset number must be 1, 2, or 3")
    domain = DomainSpec((-2.0, 2.0), (-2.0, 2.0), (-2.0, 0.2), 0.0,
                        cells, refine_levels)
    if n == 1:
        truth = ConductivityTruth(
            boxes=((((-0.3, 0.3), (-0.3, 0.3), (-1.0, -0.4))),),
            values=(5.0,))
    elif n == 2:
        truth = ConductivityTruth(
            boxes=(((-0.4, -0.1), (-1.0, -0.4), (-0.7, -0.3)),
                   ((0.4, 1.0), (0.4, 1.0), (-0.7, -0.3))),
            values=(10.0, 6.0))
    else:
        truth = ConductivityTruth(
            boxes=(((-1.5, -1.0), (-1.5, 1.5), (-1.0, -0.4)),
                   ((-1.0, 1.5), (-1.5, -1.0), (-1.0, -0.4))),
            values=(10.0, 10.0))
    outer = OuterConfig()
    return ExperimentPreset(name="example%d" % n, domain=domain, sigma0=1.0,
                            truth=truth, outer=outer, noise=0.005, seed=n)


@dataclass
class BoundaryTrace:
    """Tangential data at the boundary quadrature points of one mesh.

    ``values`` is the observation itself. ``primary_values`` and
    ``primary_edges``, when present, carry the conductivity-free
    background of the same instrument: its trace at the same points and
    its edge-circulation interpolant on the inversion mesh. They are
    calibration data, independent of the unknown conductivity, and are
    never noised.
    """

    values: np.ndarray  # (faces, points, 3) complex
    rule: str = TRI_QUAD_RULE
    mesh_digest: str = ""
    noise: float = 0.0
    seed: int | None = None
    primary_values: np.ndarray | None = None  # same shape as values
    primary_edges: np.ndarray | None = None  # complex, per coarse edge

    def response_values(self) -> np.ndarray:
        """Observation minus background trace, the scattered-field data."""
        if self.primary_values is None:
            raise ConfigError("trace carries no background calibration")
        return self.values - self.primary_values

    def check_tangential(self, disc: Discretization, tol: float = 1e-12) -> float:
        worst = 0.0
        for vals in (self.values, self.primary_values):
            if vals is None:
                continue
            normal_part = np.einsum("fqc,fc->fq", vals, disc.gamma_normals)
            bad = float(np.abs(normal_part).max()) if normal_part.size else 0.0
            if bad > tol * max(1.0, float(np.abs(vals).max())):
                raise ConfigError("trace has a normal component of %g" % bad)
            worst = max(worst, bad)
        return worst


def generate_synthetic_data(preset: ExperimentPreset, coarse_mesh: Mesh,
                            refine_extra: int = 1) -> BoundaryTrace:
    """Observation trace from a finer mesh, plus background calibration.

    The observation is the tangential trace of the state solved with the
    exact conductivity (nodal interpolant) on the ``refine_extra`` times
    refined mesh, evaluated at the coarse quadrature points. The same
    fine model is solved once more with zero conductivity to ship the
    background: its trace, and its edge interpolant on the coarse mesh
    for the scattered-field solve.

    ``refine_extra=0`` reuses the inversion mesh (the inverse crime):
    the scattered split is then algebraically exact and the misfit at
    the truth vanishes to solver precision. Test-only shortcut.
    """
    if refine_extra < 0:
        raise ConfigError("refine_extra must be >= 0")
    src = preset.source()
    params = preset.params()
    cdisc = Discretization(coarse_mesh, mu=params.mu, eps=params.eps)

    points = cdisc.gamma_points.reshape(-1, 3)
    coarse_owners = np.repeat(cdisc.gamma_owners, 3)

    levels = [coarse_mesh]
    for _ in range(refine_extra):
        levels.append(uniform_refine(levels[-1]))
    fine = levels[-1]
    fine_tets = (coarse_owners if refine_extra == 0 else
                 descend_to_children(coarse_mesh, fine, coarse_owners, points))

    primary_field = _solved_edges(fine, src, params, None)
    primary_vals = evaluate_edge_field(fine, primary_field, points, fine_tets)
    ep_coarse = primary_field
    for lo, hi in zip(levels[:-1][::-1], levels[1:][::-1]):
        ep_coarse = nedelec_interpolate(lo, hi, ep_coarse)
    del primary_field

    obs_field = _solved_edges(fine, src, params,
                              preset.truth.nodal_values(fine))
    obs_vals = evaluate_edge_field(fine, obs_field, points, fine_tets)
    del obs_field

    shape = (cdisc.gamma_owners.size, 3, 3)
    return BoundaryTrace(values=_tangential(obs_vals.reshape(shape), cdisc),
                         rule=TRI_QUAD_RULE,
                         mesh_digest=mesh_hash(coarse_mesh),
                         primary_values=_tangential(
                             primary_vals.reshape(shape), cdisc),
                         primary_edges=ep_coarse)


def _tangential(vals: np.ndarray, disc: Discretization) -> np.ndarray:
    normals = disc.gamma_normals
    return vals - np.einsum("fqc,fc->fq", vals,
                            normals)[..., None] * normals[:, None, :]


def _solved_edges(mesh: Mesh, src, params, sigma_nodal) -> np.ndarray:
    """One forward solve; returns the edge field and drops the factors."""
    problem = EddyProblem(mesh, src, params, cache_size=1)
    if sigma_nodal is None:
        sigma_nodal = np.zeros(problem.n_sigma)
    state = problem.solve_state(sigma_nodal)
    edge_values = state.edge_values
    del problem, state  # free the factorization before the next solve
    return edge_values


def problem_from_trace(mesh: Mesh, preset: ExperimentPreset,
                       trace: BoundaryTrace, **kwargs) -> EddyProblem:
    """Inversion-ready EddyProblem for a synthetic trace.

    Scattered-field form when the trace carries its background
    calibration, plain form otherwise.
    """
    if trace.primary_edges is not None and trace.primary_values is not None:
        if trace.primary_edges.shape != (mesh.n_edges,):
            raise ConfigError(
                "background edge field does not match the mesh: %d values "
                "for %d edges" % (trace.primary_edges.size, mesh.n_edges))
        return EddyProblem(mesh, preset.source(), preset.params(),
                           obs_values=trace.response_values(),
                           primary_edges=trace.primary_edges, **kwargs)
    return EddyProblem(mesh, preset.source(), preset.params(),
                       obs_values=trace.values, **kwargs)


def add_noise(trace: BoundaryTrace, nu: float, seed: int) -> BoundaryTrace:
    """Multiplicative uniform noise, one draw per quadrature point."""
    if nu < 0:
        raise ConfigError("noise level must be >= 0")
    if nu == 0:
        return replace(trace, values=trace.values.copy(), noise=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-1.0, 1.0, trace.values.shape[:2])
    values = trace.values * (1.0 + nu * xi)[..., None]
    return replace(trace, values=values, noise=nu, seed=seed)


_MIDPOINT_BARY = np.array([
    [0.5, 0.5, 0.0, 0.0], [0.5, 0.0, 0.5, 0.0], [0.5, 0.0, 0.0, 0.5],
    [0.0, 0.5, 0.5, 0.0], [0.0, 0.5, 0.0, 0.5], [0.0, 0.0, 0.5, 0.5]])
# degree-2 tet rule: 4 equal-weight points
_P2A, _P2B = 0.5854101966249685, 0.13819660112501053


def _subcell_rule(levels: int) -> np.ndarray:
    """Barycentric sample points of a virtually red-refined tet, (Q, 4).

    Each of the 8**levels equal-volume children carries the 4-point
    degree-2 rule, so the composite rule has uniform weights V/Q and
    integrates (P1 - constant)^2 exactly while sampling a discontinuous
    truth at resolution h/2**levels.
    """
    cells = np.eye(4)[None, :, :]
    for _ in range(levels):
        mids = np.einsum("mi,cix->cmx", _MIDPOINT_BARY, cells)
        nodes = np.concatenate([cells, mids], axis=1)  # (C, 10, 4)
        cells = nodes[:, _BEY_CHILDREN].reshape(-1, 4, 4)
    ref = np.full((4, 4), _P2B)
    np.fill_diagonal(ref, _P2A)
    return np.einsum("qi,cix->cqx", ref, cells).reshape(-1, 4)


def sigma_l2_error(sigma: np.ndarray, truth: ConductivityTruth,
                   mesh: Mesh, levels: int = 2) -> float:
    """L2 distance between the nodal field and the piecewise-box truth.

    Per-cell quadrature, exact for (P1 - constant)^2 integrands; the
    truth is sampled pointwise, so cells cut by a box boundary are
    resolved at 1/2**levels of the cell size.
    """
    dm = dof_map(mesh)
    full = np.zeros(mesh.n_vertices)
    full[dm.vh_vertices] = sigma
    cells = mesh.cells_in_region(OMEGA_C)
    nodal = full[mesh.tets[cells]]  # (C, 4)
    bary = _subcell_rule(levels)
    sig_at = nodal @ bary.T  # (C, Q)
    pts = np.einsum("qi,cix->cqx", bary, mesh.vertices[mesh.tets[cells]])
    tvals = truth.value_at(pts.reshape(-1, 3)).reshape(sig_at.shape)
    vols = tet_volumes(mesh)[cells]
    per_cell = ((sig_at - tvals) ** 2).mean(axis=1)  # uniform weights V/Q
    return float(np.sqrt(max(float(vols @ per_cell), 0.0)))


def region_means(sigma: np.ndarray, truth: ConductivityTruth,
                 mesh: Mesh) -> tuple[float, float]:
    """Volume-weighted means of sigma inside and outside the inclusions.

    The nodal field is sampled at conductor tet centroids (the mean of
    the four vertex values); membership is the closed-box test on the
    centroid. Centroid sampling keeps the inside average meaningful even
    when a coarse grid leaves few vertices strictly inside a box.
    """
    dm = dof_map(mesh)
    full = np.zeros(mesh.n_vertices)
    full[dm.vh_vertices] = sigma
    cells = mesh.cells_in_region(OMEGA_C)
    centroids = mesh.vertices[mesh.tets[cells]].mean(axis=1)
    values = full[mesh.tets[cells]].mean(axis=1)
    vols = tet_volumes(mesh)[cells]
    hit = truth.inside(centroids)
    if not hit.any() or hit.all():
        raise ConfigError("truth boxes cover none or all of the conductor")
    inside = float((vols[hit] @ values[hit]) / vols[hit].sum())
    outside = float((vols[~hit] @ values[~hit]) / vols[~hit].sum())
    return inside, outside


# ---- trace file round trip ----

def write_trace(path, trace: BoundaryTrace) -> None:
    with open(path, "w", encoding="ascii") as fh:
        _dump_trace(fh, trace)


def _dump_trace(fh, trace: BoundaryTrace) -> None:
    faces, points, _ = trace.values.shape
    fh.write("eddytv-trace v1\n")
    fh.write("mesh %s\n" % (trace.mesh_digest or "-"))
    fh.write("rule %s\n" % trace.rule)
    fh.write("noise %r\n" % float(trace.noise))
    fh.write("seed %s\n" % ("-" if trace.seed is None else int(trace.seed)))
    fh.write("faces %d points %d\n" % (faces, points))
    _dump_triplets(fh, trace.values)
    if trace.primary_values is not None:
        fh.write("primary\n")
        _dump_triplets(fh, trace.primary_values)
    if trace.primary_edges is not None:
        fh.write("primary_edges %d\n" % len(trace.primary_edges))
        for z in trace.primary_edges:
            z = complex(z)
            fh.write("%r %r\n" % (z.real, z.imag))


def _dump_triplets(fh, values: np.ndarray) -> None:
    faces, points, _ = values.shape
    for f in range(faces):
        for q in range(points):
            parts = []
            for c in range(3):
                z = complex(values[f, q, c])
                parts.append("%r %r" % (z.real, z.imag))
            fh.write(" ".join(parts) + "\n")


def trace_to_text(trace: BoundaryTrace) -> str:
    buf = io.StringIO()
    _dump_trace(buf, trace)
    return buf.getvalue()


def read_trace(path) -> BoundaryTrace:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    try:
        if lines[0].strip() != "eddytv-trace v1":
            raise MeshFormatError("line 1: not a trace file")
        digest = _header_field(lines, 1, "mesh")
        rule = _header_field(lines, 2, "rule")
        noise = float(_header_field(lines, 3, "noise"))
        seed_tok = _header_field(lines, 4, "seed")
        seed = None if seed_tok == "-" else int(seed_tok)
        tokens = lines[5].split()
        if tokens[0] != "faces" or tokens[2] != "points":
            raise MeshFormatError("line 6: expected 'faces N points Q'")
        faces, points = int(tokens[1]), int(tokens[3])
        at = 6
        values = _parse_triplets(lines, at, faces, points)
        at += faces * points
        primary_values = None
        primary_edges = None
        if at < len(lines) and lines[at].strip() == "primary":
            primary_values = _parse_triplets(lines, at + 1, faces, points)
            at += 1 + faces * points
        if at < len(lines) and lines[at].startswith("primary_edges"):
            n = int(lines[at].split()[1])
            data = np.loadtxt(io.StringIO("\n".join(lines[at + 1:at + 1 + n])),
                              ndmin=2)
            if data.shape != (n, 2):
                raise MeshFormatError(
                    "edge block has wrong shape %s" % (data.shape,))
            primary_edges = data[:, 0] + 1j * data[:, 1]
    except (IndexError, ValueError) as exc:
        raise MeshFormatError("malformed trace file: %s" % exc) from None
    return BoundaryTrace(values=values, rule=rule,
                         mesh_digest="" if digest == "-" else digest,
                         noise=noise, seed=seed,
                         primary_values=primary_values,
                         primary_edges=primary_edges)


def _parse_triplets(lines, start, faces, points) -> np.ndarray:
    data = np.loadtxt(io.StringIO("\n".join(lines[start:start + faces * points])),
                      ndmin=2)
    if data.shape != (faces * points, 6):
        raise MeshFormatError("trace body has wrong shape %s" % (data.shape,))
    return (data[:, 0::2] + 1j * data[:, 1::2]).reshape(faces, points, 3)


def _header_field(lines, idx, key):
    tokens = lines[idx].split(None, 1)
    if len(tokens) != 2 or tokens[0] != key:
        raise MeshFormatError("line %d: expected '%s <value>'" % (idx + 1, key))
    return tokens[1].strip()
