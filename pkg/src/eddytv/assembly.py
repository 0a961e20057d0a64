"""Finite element assembly for the eddy-current saddle-point system.

Discretization: lowest-order edge (Whitney) elements for the electric
field on the whole box, P1 Lagrange multipliers on the insulating region
enforcing the weighted divergence constraint, and P1 conductivity on the
conducting region. The assembled block system is

    [[A, B], [Bt, 0]],   A = K - i*omega*N(sigma0 + sigma),

with K the curl-curl matrix over the whole domain, N the
conductivity-weighted edge mass over conductor cells only, and B the
coupling of edge functions to multiplier gradients over insulator cells.

All element integrals are exact: integrands are polynomial, and moments
of barycentric monomials over a tet have closed forms. Per-element
blocks are emitted in a fixed order and accumulated over a canonical
sparsity pattern with ``np.bincount``, which makes assembly bitwise
deterministic and the block system exactly symmetric (max|M - Mt| = 0).

Edge orientation: every edge points from its lower to its higher global
vertex id, so shared edges agree across elements without sign tables;
the local basis pair (lo, hi) is arranged per element to match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalError
from .mesh import (GAMMA, OMEGA_0, OMEGA_C, TET_EDGE_VERTS, Mesh,
                   locate_points)

# degree-2 triangle quadrature: 3 interior points, weight area/3 each
TRI_QUAD_RULE = "tri3-deg2"
_TRI_QUAD_BARY = np.array(
    [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]
)

# moments of products of three barycentric coordinates over a tet,
# divided by the volume: distinct 1/120, one repeated 1/60, triple 1/20
_C3 = np.full((4, 4, 4), 1.0 / 120.0)
for _i in range(4):
    for _j in range(4):
        for _k in range(4):
            reps = 3 - len({_i, _j, _k})
            if reps == 1:
                _C3[_i, _j, _k] = 1.0 / 60.0
            elif reps == 2:
                _C3[_i, _j, _k] = 1.0 / 20.0


# ---- geometry ----


@dataclass
class P1Geometry:
    """Per-tet volumes and barycentric gradients."""

    vols: np.ndarray  # (T,)
    grads: np.ndarray  # (T, 4, 3), grads[t, i] = grad of hat function i


def p1_geometry(mesh: Mesh) -> P1Geometry:
    cached = getattr(mesh, "_p1_geometry", None)
    if cached is not None:
        return cached
    x = mesh.vertices[mesh.tets]
    d = x[:, 1:] - x[:, :1]  # (T, 3, 3), rows are edge vectors from v0
    vols = np.abs(np.linalg.det(d)) / 6.0
    inv = np.linalg.inv(d)  # lam_{1..3} = inv @ (x - x0), gradients are rows of inv^T
    g = np.swapaxes(inv, 1, 2)
    grads = np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)
    geo = P1Geometry(vols=vols, grads=grads)
    mesh._p1_geometry = geo
    return geo


# ---- degrees of freedom ----


@dataclass
class DofMap:
    """Index maps between mesh entities and system unknowns.

    Edge DOFs: edges not lying on the lateral/bottom boundary (zero
    tangential trace there). Multiplier DOFs (``uh``): insulator
    vertices strictly above the interface and off the side walls; the
    top plane is free, which enforces the zero normal trace weakly.
    Conductivity DOFs (``vh``): conductor vertices strictly inside the
    conductor region (compact support).
    """

    free_edges: np.ndarray
    edge_dof: np.ndarray
    uh_vertices: np.ndarray
    uh_dof: np.ndarray
    vh_vertices: np.ndarray
    vh_dof: np.ndarray

    @property
    def n_edge(self) -> int:
        return len(self.free_edges)

    @property
    def n_uh(self) -> int:
        return len(self.uh_vertices)

    @property
    def n_vh(self) -> int:
        return len(self.vh_vertices)

    @property
    def n_total(self) -> int:
        return self.n_edge + self.n_uh


def dof_map(mesh: Mesh) -> DofMap:
    cached = getattr(mesh, "_dof_map", None)
    if cached is not None:
        return cached

    # edges of constrained boundary faces carry zero tangential trace
    gd = mesh.boundary_faces[mesh.boundary_face_tags != GAMMA]
    face_edges = np.stack([gd[:, [0, 1]], gd[:, [0, 2]], gd[:, [1, 2]]], axis=1)
    constrained = np.unique(mesh.edge_ids(face_edges.reshape(-1, 2)))
    edge_dof = np.full(mesh.n_edges, -1, dtype=np.int64)
    free = np.setdiff1d(np.arange(mesh.n_edges), constrained)
    edge_dof[free] = np.arange(len(free))

    v = mesh.vertices
    tol = 1e-12 * max(1.0, float(np.abs(v).max()))
    x0, x1 = v[:, 0].min(), v[:, 0].max()
    y0, y1 = v[:, 1].min(), v[:, 1].max()
    z0, z1 = v[:, 2].min(), v[:, 2].max()
    interior_xy = (
        (v[:, 0] > x0 + tol) & (v[:, 0] < x1 - tol)
        & (v[:, 1] > y0 + tol) & (v[:, 1] < y1 - tol)
    )

    has_air = (mesh.cell_tags == OMEGA_0).any()
    if has_air:
        z_int = v[mesh.tets[mesh.cell_tags == OMEGA_0]][:, :, 2].min()
    else:
        z_int = z1
    uh_mask = interior_xy & (v[:, 2] > z_int + tol)
    uh_vertices = np.flatnonzero(uh_mask)
    uh_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
    uh_dof[uh_vertices] = np.arange(len(uh_vertices))

    has_cond = (mesh.cell_tags == OMEGA_C).any()
    z_top_c = v[mesh.tets[mesh.cell_tags == OMEGA_C]][:, :, 2].max() if has_cond else z0
    vh_mask = interior_xy & (v[:, 2] > z0 + tol) & (v[:, 2] < z_top_c - tol)
    vh_vertices = np.flatnonzero(vh_mask)
    vh_dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vh_dof[vh_vertices] = np.arange(len(vh_vertices))

    dm = DofMap(free, edge_dof, uh_vertices, uh_dof, vh_vertices, vh_dof)
    mesh._dof_map = dm
    return dm


# ---- deterministic block accumulation ----


class BlockPattern:
    """Accumulates fixed-order element emissions onto a canonical CSR.

    Entries with negative row or column are dropped (constrained DOFs).
    Summation order within every matrix entry is the emission order, so
    assembly is bitwise deterministic; symmetric emissions produce an
    exactly symmetric matrix.
    """

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.shape = shape
        self.mask = (rows >= 0) & (cols >= 0)
        r, c = rows[self.mask], cols[self.mask]
        key = r * shape[1] + c
        order = np.argsort(key, kind="stable")
        skey = key[order]
        new = np.r_[True, skey[1:] != skey[:-1]] if len(skey) else np.empty(0, bool)
        self.nnz = int(new.sum())
        ids = np.cumsum(new) - 1
        self.pos = np.empty(len(key), dtype=np.int64)
        self.pos[order] = ids
        ukey = skey[new] if len(skey) else skey
        self.indices = (ukey % shape[1]).astype(np.int32)
        counts = np.bincount((ukey // shape[1]).astype(np.int64), minlength=shape[0])
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def assemble(self, values) -> sp.csr_matrix:
        data = self.sum(values)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def sum(self, values) -> np.ndarray:
        """Accumulated canonical data array for one emission pass."""
        v = np.asarray(values).ravel()[self.mask]
        if np.iscomplexobj(v):
            return (np.bincount(self.pos, weights=v.real, minlength=self.nnz)
                    + 1j * np.bincount(self.pos, weights=v.imag, minlength=self.nnz))
        return np.bincount(self.pos, weights=v, minlength=self.nnz)

    def matrix(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


# ---- element blocks ----


def _arranged_pairs(mesh: Mesh):
    """Local (lo, hi) vertex index per tet edge, following global ids."""
    lo_l, hi_l = TET_EDGE_VERTS[:, 0], TET_EDGE_VERTS[:, 1]
    swap = mesh.tets[:, lo_l] > mesh.tets[:, hi_l]
    pair_lo = np.where(swap, hi_l, lo_l)
    pair_hi = np.where(swap, lo_l, hi_l)
    return pair_lo, pair_hi


def _gather(a, idx):
    """a[t, idx[t, e], :] for a (T,4,3) array and (T,E) indices."""
    return np.take_along_axis(a, idx[:, :, None], axis=1)


def curl_curl_blocks(mesh: Mesh) -> np.ndarray:
    """Per-tet 6x6 blocks of the curl-curl form (unit coefficient)."""
    geo = p1_geometry(mesh)
    pl, ph = _arranged_pairs(mesh)
    cross = np.cross(_gather(geo.grads, pl), _gather(geo.grads, ph))  # (T, 6, 3)
    return 4.0 * geo.vols[:, None, None] * np.einsum("tac,tbc->tab", cross, cross)


def edge_mass_blocks(mesh: Mesh, rho_nodal: np.ndarray) -> np.ndarray:
    """Per-tet 6x6 blocks of the weighted edge mass form.

    ``rho_nodal`` holds P1 weight values at the tet's four vertices,
    shape (T, 4); the integral of rho * w_a . w_b is exact.
    """
    geo = p1_geometry(mesh)
    pl, ph = _arranged_pairs(mesh)
    rho = np.asarray(rho_nodal, dtype=np.float64)
    s = rho.sum(axis=1)
    q = (rho[:, :, None] + rho[:, None, :] + s[:, None, None]) / 120.0
    ii = np.arange(4)
    q[:, ii, ii] = (4.0 * rho + 2.0 * s[:, None]) / 120.0
    g = np.einsum("tac,tbc->tab", geo.grads, geo.grads)

    tt = np.arange(mesh.n_tets)[:, None, None]
    a_lo, b_lo = pl[:, :, None], pl[:, None, :]
    a_hi, b_hi = ph[:, :, None], ph[:, None, :]
    direct = q[tt, a_lo, b_lo] * g[tt, a_hi, b_hi] + q[tt, a_hi, b_hi] * g[tt, a_lo, b_lo]
    crossed = q[tt, a_lo, b_hi] * g[tt, a_hi, b_lo] + q[tt, a_hi, b_lo] * g[tt, a_lo, b_hi]
    return geo.vols[:, None, None] * (direct - crossed)


def coupling_blocks(mesh: Mesh, eps: float) -> np.ndarray:
    """Per-tet 6x4 blocks of eps * integral of w_a . grad(phi_n)."""
    geo = p1_geometry(mesh)
    pl, ph = _arranged_pairs(mesh)
    g = np.einsum("tac,tbc->tab", geo.grads, geo.grads)
    tt = np.arange(mesh.n_tets)[:, None, None]
    cols = np.arange(4)[None, None, :]
    blk = g[tt, ph[:, :, None], cols] - g[tt, pl[:, :, None], cols]
    return (eps / 4.0) * geo.vols[:, None, None] * blk


# ---- discretization cache ----


class Discretization:
    """Per-mesh assembly cache for fixed material constants mu, eps.

    Holds the canonical sparsity pattern, the fixed curl-curl data and
    coupling block, the boundary quadrature tables on the measurement
    plane, and index arrays for fast conductivity reassembly.
    """

    def __init__(self, mesh: Mesh, mu: float = 1.0, eps: float = 1.0):
        if mu <= 0 or eps <= 0:
            raise ConfigError(f"mu and eps must be positive, got mu={mu!r} eps={eps!r}")
        self.mesh = mesh
        self.mu = float(mu)
        self.eps = float(eps)
        self.dofs = dof_map(mesh)
        dm = self.dofs

        te_dof = dm.edge_dof[mesh.tet_edges]  # (T, 6)
        self.edge_pattern = BlockPattern(
            np.broadcast_to(te_dof[:, :, None], (mesh.n_tets, 6, 6)),
            np.broadcast_to(te_dof[:, None, :], (mesh.n_tets, 6, 6)),
            (dm.n_edge, dm.n_edge),
        )
        self.curl_data = self.edge_pattern.sum(curl_curl_blocks(mesh) / self.mu)

        self.cond_cells = mesh.cells_in_region(OMEGA_C)
        self.cond_weight = (mesh.cell_tags == OMEGA_C).astype(np.float64)

        air = mesh.cells_in_region(OMEGA_0)
        if dm.n_uh:
            rows = np.broadcast_to(te_dof[air][:, :, None], (len(air), 6, 4))
            cols = np.broadcast_to(
                dm.uh_dof[mesh.tets[air]][:, None, :], (len(air), 6, 4)
            )
            pat = BlockPattern(rows, cols, (dm.n_edge, dm.n_uh))
            self.coupling = pat.assemble(coupling_blocks(mesh, self.eps)[air])
        else:
            self.coupling = None

        self._build_boundary_tables()

    # -- system assembly --

    def sigma_vertex_values(self, sigma: np.ndarray) -> np.ndarray:
        """Expand conductivity DOFs to all vertices (zero outside V_h)."""
        sigma = np.asarray(sigma, dtype=np.float64)
        if sigma.shape != (self.dofs.n_vh,):
            raise ConfigError(
                f"sigma has shape {sigma.shape}, expected ({self.dofs.n_vh},)"
            )
        full = np.zeros(self.mesh.n_vertices)
        full[self.dofs.vh_vertices] = sigma
        return full

    def conductivity_mass_data(self, sigma: np.ndarray, sigma0: float) -> np.ndarray:
        """Canonical data of the (sigma0 + sigma) edge mass on the conductor."""
        full = self.sigma_vertex_values(sigma) + float(sigma0)
        bad = np.flatnonzero(full[self.dofs.vh_vertices] <= 0.0)
        if len(bad):
            node = int(self.dofs.vh_vertices[bad[0]])
            raise NumericalError(
                f"sigma + sigma0 <= 0 at vertex {node}; system would be singular"
            )
        rho = full[self.mesh.tets] * self.cond_weight[:, None]
        return self.edge_pattern.sum(edge_mass_blocks(self.mesh, rho))

    def sigma_edge_mass(self, sigma: np.ndarray) -> sp.csr_matrix:
        """Edge mass weighted by sigma alone (free edges, conductor only)."""
        rho = self.sigma_vertex_values(sigma)[self.mesh.tets]
        rho = rho * self.cond_weight[:, None]
        return self.edge_pattern.assemble(edge_mass_blocks(self.mesh, rho))

    def assemble_saddle(self, sigma: np.ndarray, sigma0: float, omega: float) -> sp.csr_matrix:
        """Block system [[A, B], [Bt, 0]]; exactly symmetric."""
        if omega <= 0:
            raise ConfigError(f"omega must be positive, got {omega!r}")
        data = self.curl_data - 1j * omega * self.conductivity_mass_data(sigma, sigma0)
        a = self.edge_pattern.matrix(data)
        if self.coupling is None:
            return a.tocsr()
        return sp.bmat([[a, self.coupling], [self.coupling.T, None]], format="csr")

    def edge_norm_matrices(self):
        """Unit-coefficient mass and curl-curl over the whole domain.

        Used for H(curl) norm monitors; cached after first call.
        """
        cached = getattr(self, "_norm_mats", None)
        if cached is None:
            ones = np.ones((self.mesh.n_tets, 4))
            mass = self.edge_pattern.assemble(edge_mass_blocks(self.mesh, ones))
            curl = self.edge_pattern.matrix(self.curl_data * self.mu)
            cached = self._norm_mats = (mass, curl)
        return cached

    # -- loads --

    def dipole_load(self, source) -> np.ndarray:
        """Load vector i*omega * sum_p dir . curl(w_a)(x_p), edge block.

        The Whitney curl is constant per tet; a point on a shared face,
        edge, or vertex is assigned to the lowest containing cell id so
        the sampled jump is deterministic.
        """
        mesh = self.mesh
        pts = np.atleast_2d(np.asarray(source.positions, dtype=np.float64))
        owners = locate_points(mesh, pts)
        missing = np.flatnonzero(owners < 0)
        if len(missing):
            raise ConfigError(
                f"source point {pts[missing[0]]} lies outside the mesh")
        geo = p1_geometry(mesh)
        pl, ph = _arranged_pairs(mesh)
        cross = 2.0 * np.cross(
            _gather(geo.grads, pl)[owners], _gather(geo.grads, ph)[owners]
        )  # (P, 6, 3): constant curl of each edge basis in the owner tet
        direction = np.asarray(source.direction, dtype=np.float64)
        vals = cross @ direction
        load = np.zeros(self.dofs.n_total, dtype=np.complex128)
        dofs = self.dofs.edge_dof[mesh.tet_edges[owners]]
        np.add.at(load, np.where(dofs >= 0, dofs, 0), np.where(dofs >= 0, vals, 0.0))
        return 1j * float(source.omega) * load

    # -- boundary quadrature --

    def _build_boundary_tables(self):
        mesh = self.mesh
        sel = np.flatnonzero(mesh.boundary_face_tags == GAMMA)
        self.gamma_faces = sel
        fv = mesh.boundary_faces[sel]
        owners = mesh.boundary_face_tets[sel]
        self.gamma_owners = owners
        self.gamma_owner_edges = mesh.tet_edges[owners]

        corners = mesh.vertices[fv]  # (F, 3, 3)
        cr = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        areas = 0.5 * np.linalg.norm(cr, axis=1)
        self.gamma_weights = areas / 3.0
        normals = cr / np.linalg.norm(cr, axis=1, keepdims=True)
        self.gamma_normals = normals
        self.gamma_points = np.einsum("qi,fic->fqc", _TRI_QUAD_BARY, corners)

        geo = p1_geometry(mesh)
        pl, ph = _arranged_pairs(mesh)
        x0 = mesh.vertices[mesh.tets[owners, 0]]
        d = np.swapaxes(
            mesh.vertices[mesh.tets[owners, 1:]] - x0[:, None, :], 1, 2
        )
        inv = np.linalg.inv(d)
        rhs = self.gamma_points - x0[:, None, :]
        lam123 = np.einsum("fij,fqj->fqi", inv, rhs)
        lam = np.concatenate([1.0 - lam123.sum(axis=2, keepdims=True), lam123], axis=2)

        g_lo = _gather(geo.grads, pl)[owners]  # (F, 6, 3)
        g_hi = _gather(geo.grads, ph)[owners]
        lam_lo = np.take_along_axis(lam, pl[owners][:, None, :], axis=2)  # (F, 3, 6)
        lam_hi = np.take_along_axis(lam, ph[owners][:, None, :], axis=2)
        w = lam_lo[..., None] * g_hi[:, None] - lam_hi[..., None] * g_lo[:, None]
        # tangential projection; Gamma faces are planar so one normal per face
        wn = np.einsum("fqec,fc->fqe", w, normals)
        self.gamma_trace = w - wn[..., None] * normals[:, None, None, :]

    def tangential_trace(self, edge_values: np.ndarray) -> np.ndarray:
        """(F, 3, 3) tangential field at boundary quadrature points."""
        local = edge_values[self.gamma_owner_edges]  # (F, 6)
        return np.einsum("fe,fqec->fqc", local, self.gamma_trace)

    def misfit(self, edge_values: np.ndarray, obs_values: np.ndarray) -> float:
        diff = self.tangential_trace(edge_values) - obs_values
        per_face = np.einsum("fqc,fqc->f", diff, diff.conj()).real
        return 0.5 * float(self.gamma_weights @ per_face)

    def adjoint_load(self, edge_values: np.ndarray, obs_values: np.ndarray) -> np.ndarray:
        """Load pairing conj(obs - trace) with edge basis traces."""
        mismatch = (obs_values - self.tangential_trace(edge_values)).conj()
        local = np.einsum(
            "f,fqc,fqec->fe", self.gamma_weights, mismatch, self.gamma_trace
        )
        load = np.zeros(self.dofs.n_total, dtype=np.complex128)
        dofs = self.dofs.edge_dof[self.gamma_owner_edges]
        np.add.at(load, np.where(dofs >= 0, dofs, 0), np.where(dofs >= 0, local, 0.0))
        return load

    # -- misfit gradient --

    def gradient_dual(self, e_values: np.ndarray, f_values: np.ndarray,
                      omega: float) -> np.ndarray:
        """Dual vector g_m = omega * int Im(E_h . F_h) hat_m over conductor.

        Exact per-cell integration: both fields are expanded in the
        vertex form sum_i lam_i A_i with constant vectors A_i, and
        moments of three barycentric factors are closed-form.
        """
        mesh = self.mesh
        cells = self.cond_cells
        geo = p1_geometry(mesh)
        pl, ph = _arranged_pairs(mesh)
        ae = _vertex_form(e_values, mesh, geo, pl, ph, cells)
        af = _vertex_form(f_values, mesh, geo, pl, ph, cells)
        d = np.einsum("tic,tjc->tij", ae, af)
        contrib = geo.vols[cells, None] * np.einsum("tij,ijm->tm", d.imag, _C3)
        g_full = np.zeros(mesh.n_vertices)
        np.add.at(g_full, mesh.tets[cells], contrib)
        return float(omega) * g_full[self.dofs.vh_vertices]

    # -- edge vector helpers --

    def expand_edges(self, free_values: np.ndarray) -> np.ndarray:
        """Free-DOF coefficients to a full per-edge array (zeros on GammaD)."""
        full = np.zeros(self.mesh.n_edges, dtype=np.complex128)
        full[self.dofs.free_edges] = free_values
        return full


def _vertex_form(edge_values, mesh, geo, pl, ph, cells):
    """Whitney field on selected cells as per-vertex constant vectors A_i."""
    loc = edge_values[mesh.tet_edges[cells]]  # (n, 6)
    a = np.zeros((len(cells), 4, 3), dtype=np.complex128)
    g_lo = _gather(geo.grads, pl)[cells]
    g_hi = _gather(geo.grads, ph)[cells]
    rows = np.arange(len(cells))
    for e in range(6):
        a[rows, pl[cells, e]] += loc[:, e, None] * g_hi[:, e]
        a[rows, ph[cells, e]] -= loc[:, e, None] * g_lo[:, e]
    return a


def _locate_interior(mesh, points):
    from .mesh import locate_points

    owners = locate_points(mesh, points)
    missing = np.flatnonzero(owners < 0)
    if len(missing):
        raise ConfigError(f"point {points[missing[0]]} lies outside the mesh")
    return owners


# ---- field evaluation ----


def evaluate_edge_field(mesh: Mesh, edge_values: np.ndarray, points: np.ndarray,
                        tet_ids: np.ndarray) -> np.ndarray:
    """Point values of a Whitney field, (n, 3) complex."""
    from .mesh import barycentric_coordinates

    geo = p1_geometry(mesh)
    pl, ph = _arranged_pairs(mesh)
    tet_ids = np.asarray(tet_ids, dtype=np.int64)
    lam = barycentric_coordinates(mesh, tet_ids, np.asarray(points, dtype=np.float64))
    lam_lo = np.take_along_axis(lam, pl[tet_ids], axis=1)  # (n, 6)
    lam_hi = np.take_along_axis(lam, ph[tet_ids], axis=1)
    g_lo = _gather(geo.grads, pl)[tet_ids]
    g_hi = _gather(geo.grads, ph)[tet_ids]
    w = lam_lo[..., None] * g_hi - lam_hi[..., None] * g_lo  # (n, 6, 3)
    return np.einsum("ne,nec->nc", edge_values[mesh.tet_edges[tet_ids]], w)


def interpolate_edge_field(mesh: Mesh, func) -> np.ndarray:
    """Edge DOFs of a vector field: circulation along each edge.

    Exact for fields linear along edges; uses the midpoint value times
    the edge vector, which is the exact circulation for affine fields.
    """
    p0 = mesh.vertices[mesh.edges[:, 0]]
    p1 = mesh.vertices[mesh.edges[:, 1]]
    vals = np.asarray(func(0.5 * (p0 + p1)))
    return np.einsum("ec,ec->e", vals, p1 - p0)


# ---- spec-surface wrappers ----


def assemble_state_matrix(mesh: Mesh, sigma, sigma0: float, mu: float,
                          omega: float, eps: float) -> sp.csr_matrix:
    """Saddle block system for given conductivity; see Discretization."""
    disc = Discretization(mesh, mu=mu, eps=eps)
    return disc.assemble_saddle(np.asarray(sigma, dtype=np.float64), sigma0, omega)


def assemble_dipole_load(mesh: Mesh, source) -> np.ndarray:
    return Discretization(mesh).dipole_load(source)


def assemble_adjoint_load(mesh: Mesh, edge_values: np.ndarray, obs_values) -> np.ndarray:
    return Discretization(mesh).adjoint_load(edge_values, np.asarray(obs_values))


def nodal_mass_matrix(mesh: Mesh, constrained: bool = True) -> sp.csr_matrix:
    """P1 mass matrix over the conductor region.

    With ``constrained`` (default) rows/columns are restricted to
    interior conductor vertices; otherwise all conductor vertices.
    """
    dm = dof_map(mesh)
    cells = mesh.cells_in_region(OMEGA_C)
    geo = p1_geometry(mesh)
    blk = geo.vols[cells, None, None] * ((np.ones((4, 4)) + np.eye(4)) / 20.0)
    if constrained:
        vidx = dm.vh_dof[mesh.tets[cells]]
        n = dm.n_vh
    else:
        cond_verts = np.unique(mesh.tets[cells])
        lookup = np.full(mesh.n_vertices, -1, dtype=np.int64)
        lookup[cond_verts] = np.arange(len(cond_verts))
        vidx = lookup[mesh.tets[cells]]
        n = len(cond_verts)
    pat = BlockPattern(
        np.broadcast_to(vidx[:, :, None], (len(cells), 4, 4)),
        np.broadcast_to(vidx[:, None, :], (len(cells), 4, 4)),
        (n, n),
    )
    return pat.assemble(blk)


@dataclass
class CellGradient:
    """Cell-gradient operator on the conductor: nodal -> per-cell vectors.

    ``matrix`` maps interior nodal coefficients to the stacked per-cell
    gradient (3 rows per conductor cell); ``vols`` are the quadrature
    weights of those cells; ``cells`` their tet ids.
    """

    matrix: sp.csr_matrix
    vols: np.ndarray
    cells: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """(n_cells, 3) gradients of the P1 field with coefficients v."""
        return (self.matrix @ v).reshape(-1, 3)

    def weights3(self) -> np.ndarray:
        """Volume weights repeated per component, aligned with matrix rows."""
        return np.repeat(self.vols, 3)

    def stiffness(self) -> sp.csr_matrix:
        """G^T W G, the P1 stiffness on the interior nodes (cached)."""
        cached = getattr(self, "_stiffness", None)
        if cached is None:
            gw = self.matrix.T.multiply(self.weights3()[None, :])
            cached = self._stiffness = (gw @ self.matrix).tocsr()
        return cached


def cell_gradient_operator(mesh: Mesh) -> CellGradient:
    dm = dof_map(mesh)
    cells = mesh.cells_in_region(OMEGA_C)
    geo = p1_geometry(mesh)
    vidx = dm.vh_dof[mesh.tets[cells]]  # (n, 4)
    rows = 3 * np.repeat(np.arange(len(cells)), 4)
    rows = np.stack([rows, rows + 1, rows + 2], axis=1).reshape(-1)
    cols = np.repeat(vidx.reshape(-1), 3)
    vals = geo.grads[cells].reshape(-1)  # (c, i, k) order matches rows/cols
    keep = cols >= 0
    mat = sp.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(3 * len(cells), dm.n_vh)
    )
    mat.sum_duplicates()
    mat.sort_indices()
    return CellGradient(matrix=mat, vols=geo.vols[cells], cells=cells)
