"""Element matrices against independent oracles, DOF maps, assembly.

Two oracles keep the element code honest: exact rational matrices for
two fixed tets (computed symbolically offline, pasted as fractions),
and a Duffy-collapsed Gauss quadrature evaluator built here from
scratch that shares no code with the assembly path.
"""

import numpy as np
import pytest

from eddytv.assembly import (Discretization, coupling_blocks,
                             curl_curl_blocks, dof_map, edge_mass_blocks,
                             evaluate_edge_field, interpolate_edge_field,
                             nodal_mass_matrix)
from eddytv.errors import ConfigError, NumericalError
from eddytv.mesh import (GAMMA, GAMMA_D, OMEGA_C, TET_EDGE_VERTS,
                         TET_FACE_VERTS, Mesh, tet_volumes)

# ---- oracle 1: exact element matrices, frozen fractions ----

F = lambda a, b: a / b

# reference tet (0,0,0),(1,0,0),(0,1,0),(0,0,1); edge order per
# TET_EDGE_VERTS; curl-curl with unit coefficient
K_REF = np.array([
    [F(4, 3), F(-2, 3), F(-2, 3), F(2, 3), F(2, 3), 0],
    [F(-2, 3), F(4, 3), F(-2, 3), F(-2, 3), 0, F(2, 3)],
    [F(-2, 3), F(-2, 3), F(4, 3), 0, F(-2, 3), F(-2, 3)],
    [F(2, 3), F(-2, 3), 0, F(2, 3), 0, 0],
    [F(2, 3), 0, F(-2, 3), 0, F(2, 3), 0],
    [0, F(2, 3), F(-2, 3), 0, 0, F(2, 3)],
])

# weighted edge mass with nodal weights rho = (1, 2, 3, 4)
N_REF = np.array([
    [F(67, 360), F(1, 10), F(19, 180), F(-1, 720), F(-1, 240), F(-1, 720)],
    [F(1, 10), F(37, 180), F(1, 9), F(-1, 180), F(-1, 360), 0],
    [F(19, 180), F(1, 9), F(9, 40), F(-1, 720), F(-7, 720), F(-1, 144)],
    [F(-1, 720), F(-1, 180), F(-1, 720), F(1, 12), F(17, 720), F(-1, 45)],
    [F(-1, 240), F(-1, 360), F(-7, 720), F(17, 720), F(4, 45), F(1, 48)],
    [F(-1, 720), 0, F(-1, 144), F(-1, 45), F(1, 48), F(17, 180)],
])

# coupling integral w_a . grad(phi_n), unit eps
B_REF = np.array([
    [F(-1, 6), F(1, 12), F(1, 24), F(1, 24)],
    [F(-1, 6), F(1, 24), F(1, 12), F(1, 24)],
    [F(-1, 6), F(1, 24), F(1, 24), F(1, 12)],
    [0, F(-1, 24), F(1, 24), 0],
    [0, F(-1, 24), 0, F(1, 24)],
    [0, 0, F(-1, 24), F(1, 24)],
])

# skewed tet (0,0,0),(2,0,0),(1,3,0),(1,1,2) with rho = (2, 0, 1, 5)
SKEW_VERTS = np.array([(0, 0, 0), (2, 0, 0), (1, 3, 0), (1, 1, 2)], float)
SKEW_RHO = np.array([2.0, 0.0, 1.0, 5.0])

K_SKEW = np.array([
    [F(4, 9), F(-1, 9), F(-1, 3), F(1, 9), F(1, 3), 0],
    [F(-1, 9), F(1, 3), F(-2, 9), F(-2, 9), F(1, 9), F(1, 9)],
    [F(-1, 3), F(-2, 9), F(5, 9), F(1, 9), F(-4, 9), F(-1, 9)],
    [F(1, 9), F(-2, 9), F(1, 9), F(1, 3), F(-2, 9), F(1, 9)],
    [F(1, 3), F(1, 9), F(-4, 9), F(-2, 9), F(5, 9), F(-1, 9)],
    [0, F(1, 9), F(-1, 9), F(1, 9), F(-1, 9), F(2, 9)],
])

N_SKEW = np.array([
    [F(29, 108), F(3, 40), F(103, 1080), F(-89, 1080), F(-119, 1080), F(-1, 540)],
    [F(3, 40), F(181, 1080), F(13, 216), F(-7, 216), F(-43, 1080), F(-31, 1080)],
    [F(103, 1080), F(13, 216), F(13, 40), F(-41, 1080), F(-13, 360), F(5, 72)],
    [F(-89, 1080), F(-7, 216), F(-41, 1080), F(53, 360), F(73, 1080), F(-23, 1080)],
    [F(-119, 1080), F(-43, 1080), F(-13, 360), F(73, 1080), F(103, 360), F(7, 120)],
    [F(-1, 540), F(-31, 1080), F(5, 72), F(-23, 1080), F(7, 120), F(37, 180)],
])

B_SKEW = np.array([
    [F(-1, 4), F(1, 4), 0, 0],
    [F(-1, 6), F(1, 12), F(1, 12), 0],
    [F(-7, 36), F(1, 18), F(-1, 36), F(1, 6)],
    [F(1, 12), F(-1, 6), F(1, 12), 0],
    [F(1, 18), F(-7, 36), F(-1, 36), F(1, 6)],
    [F(-1, 36), F(-1, 36), F(-1, 9), F(1, 6)],
])


def one_tet_mesh(verts, order=(0, 1, 2, 3)):
    verts = np.asarray(verts, dtype=np.float64)
    tets = np.array([order], dtype=np.int64)
    faces = np.sort(tets[0][TET_FACE_VERTS], axis=1)
    return Mesh(verts, tets, [OMEGA_C], (), [-1], faces, [GAMMA_D] * 4)


# ---- oracle 2: independent Duffy-collapsed Gauss quadrature ----

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def tet_quadrature(verts):
    """Points and weights integrating degree <= 11 exactly over a tet."""
    u1, u2, u3 = np.meshgrid(_GL_X, _GL_X, _GL_X, indexing="ij")
    w = (_GL_W[:, None, None] * _GL_W[None, :, None] * _GL_W[None, None, :]
         * (1.0 - u1) ** 2 * (1.0 - u2))
    x1 = u1
    x2 = u2 * (1.0 - u1)
    x3 = u3 * (1.0 - u1) * (1.0 - u2)
    lam = np.stack([1.0 - x1 - x2 - x3, x1, x2, x3], axis=-1).reshape(-1, 4)
    verts = np.asarray(verts, dtype=np.float64)
    vol = abs(np.linalg.det(verts[1:] - verts[0])) / 6.0
    return lam @ verts, 6.0 * vol * w.ravel(), lam


def hat_coefficients(verts):
    """lambda_i(x) = c[i, 0] + c[i, 1:] . x by solving the Vandermonde."""
    vm = np.column_stack([np.ones(4), verts])
    return np.linalg.inv(vm).T


def whitney_oracle(verts, order):
    """Per-local-edge callables w_e(x) and constant curls, global-id oriented."""
    coeff = hat_coefficients(verts[list(order)])
    fields, curls = [], []
    for a, b in TET_EDGE_VERTS:
        if order[a] > order[b]:
            a, b = b, a
        ca, cb = coeff[a], coeff[b]
        ga, gb = ca[1:], cb[1:]

        def w(x, ca=ca, cb=cb, ga=ga, gb=gb):
            la = ca[0] + x @ ca[1:]
            lb = cb[0] + x @ cb[1:]
            return la[:, None] * gb - lb[:, None] * ga

        fields.append(w)
        curls.append(2.0 * np.cross(ga, gb))
    return fields, curls


def quadrature_matrices(verts, order, rho):
    pts, w, lam = tet_quadrature(verts[list(order)])
    fields, curls = whitney_oracle(verts, order)
    vals = np.stack([f(pts) for f in fields])       # (6, Q, 3)
    rho_q = lam @ np.asarray(rho, dtype=np.float64)
    k = np.einsum("ac,bc->ab", np.asarray(curls), np.asarray(curls)) * w.sum()
    n = np.einsum("q,aqc,bqc->ab", w * rho_q, vals, vals)
    coeff = hat_coefficients(verts[list(order)])
    b = np.einsum("q,aqc,nc->an", w, vals, coeff[:, 1:])
    return k, n, b


class TestElementBlocks:
    def test_reference_tet_frozen(self):
        mesh = one_tet_mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)])
        np.testing.assert_allclose(curl_curl_blocks(mesh)[0], K_REF, rtol=0, atol=1e-14)
        np.testing.assert_allclose(
            edge_mass_blocks(mesh, np.array([[1.0, 2.0, 3.0, 4.0]]))[0],
            N_REF, rtol=0, atol=1e-15)
        np.testing.assert_allclose(coupling_blocks(mesh, 1.0)[0], B_REF,
                                   rtol=0, atol=1e-15)

    def test_skewed_tet_frozen(self):
        mesh = one_tet_mesh(SKEW_VERTS)
        np.testing.assert_allclose(curl_curl_blocks(mesh)[0], K_SKEW, rtol=0, atol=1e-14)
        np.testing.assert_allclose(edge_mass_blocks(mesh, SKEW_RHO[None, :])[0],
                                   N_SKEW, rtol=0, atol=1e-14)
        np.testing.assert_allclose(coupling_blocks(mesh, 1.0)[0], B_SKEW,
                                   rtol=0, atol=1e-15)

    def test_coupling_scales_with_eps(self):
        mesh = one_tet_mesh(SKEW_VERTS)
        np.testing.assert_allclose(coupling_blocks(mesh, 2.5)[0], 2.5 * B_SKEW,
                                   rtol=1e-15, atol=1e-16)

    @pytest.mark.parametrize("trial", range(5))
    def test_random_tets_match_quadrature(self, trial):
        rng = np.random.default_rng(100 + trial)
        while True:
            verts = rng.uniform(-1, 1, (4, 3))
            vol = abs(np.linalg.det(verts[1:] - verts[0])) / 6.0
            if vol > 0.02:
                break
        rho = rng.uniform(0.1, 5.0, 4)
        mesh = one_tet_mesh(verts)
        k_q, n_q, b_q = quadrature_matrices(verts, (0, 1, 2, 3), rho)
        np.testing.assert_allclose(curl_curl_blocks(mesh)[0], k_q, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(edge_mass_blocks(mesh, rho[None, :])[0], n_q,
                                   rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(coupling_blocks(mesh, 1.0)[0], b_q,
                                   rtol=1e-12, atol=1e-14)

    def test_permuted_vertex_order(self):
        # same physical tet, scrambled global ids: global-id edge
        # orientation must make the blocks match the oracle exactly
        order = (2, 0, 3, 1)
        mesh = one_tet_mesh(SKEW_VERTS, order=order)
        rho_local = SKEW_RHO[list(order)]
        k_q, n_q, b_q = quadrature_matrices(SKEW_VERTS, order, rho_local)
        np.testing.assert_allclose(curl_curl_blocks(mesh)[0], k_q, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(edge_mass_blocks(mesh, rho_local[None, :])[0],
                                   n_q, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(coupling_blocks(mesh, 1.0)[0], b_q,
                                   rtol=1e-12, atol=1e-14)

    def test_mass_positive_definite(self):
        mesh = one_tet_mesh(SKEW_VERTS)
        n = edge_mass_blocks(mesh, np.ones((1, 4)))[0]
        assert (np.linalg.eigvalsh(n) > 0).all()

    def test_curl_curl_rank_three(self):
        # gradients of the 4 hats span a 3-dim curl range on one tet
        mesh = one_tet_mesh(SKEW_VERTS)
        k = curl_curl_blocks(mesh)[0]
        ev = np.linalg.eigvalsh(k)
        assert (ev > -1e-13).all()
        assert (ev > 1e-10).sum() == 3


class TestWhitneyInterpolation:
    def test_affine_field_reproduced(self, tiny_mesh, rng):
        # lowest-order edge space contains exactly the fields c + d x x
        c = rng.normal(size=3)
        d = rng.normal(size=3)
        func = lambda x: c + np.cross(d, x)
        dofs = interpolate_edge_field(tiny_mesh, func)
        pts = rng.uniform(-1, 1, (40, 3)) * np.array([1.9, 1.9, 1.0]) - [0, 0, 0.8]
        from eddytv.mesh import locate_points
        tets = locate_points(tiny_mesh, pts)
        assert (tets >= 0).all()
        vals = evaluate_edge_field(tiny_mesh, dofs.astype(complex), pts, tets)
        np.testing.assert_allclose(vals.real, func(pts), rtol=0, atol=1e-12)
        np.testing.assert_allclose(vals.imag, 0, atol=1e-14)

    def test_tangential_continuity(self, tiny_mesh, rng):
        # random edge field: tangential component agrees across a face
        dofs = (rng.normal(size=tiny_mesh.n_edges)
                + 1j * rng.normal(size=tiny_mesh.n_edges))
        # find an interior face: two tets sharing 3 vertices
        t0, t1 = 0, -1
        for cand in range(1, tiny_mesh.n_tets):
            shared = np.intersect1d(tiny_mesh.tets[0], tiny_mesh.tets[cand])
            if len(shared) == 3:
                t1 = cand
                break
        assert t1 > 0
        tri = tiny_mesh.vertices[shared]
        lam = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [1 / 3, 1 / 3, 1 / 3]])
        pts = lam @ tri
        v0 = evaluate_edge_field(tiny_mesh, dofs, pts, np.full(3, t0))
        v1 = evaluate_edge_field(tiny_mesh, dofs, pts, np.full(3, t1))
        nrm = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        nrm /= np.linalg.norm(nrm)
        jump = v0 - v1
        tang_jump = jump - (jump @ nrm)[:, None] * nrm
        np.testing.assert_allclose(tang_jump, 0, atol=1e-12)


class TestDofMap:
    def test_partition_and_counts(self, tiny_mesh):
        dm = dof_map(tiny_mesh)
        assert dm.n_edge + (tiny_mesh.n_edges - dm.n_edge) == tiny_mesh.n_edges
        assert dm.n_edge > 0 and dm.n_uh > 0 and dm.n_vh > 0
        # maps invert their index lists
        assert np.array_equal(dm.edge_dof[dm.free_edges], np.arange(dm.n_edge))
        assert np.array_equal(dm.uh_dof[dm.uh_vertices], np.arange(dm.n_uh))
        assert np.array_equal(dm.vh_dof[dm.vh_vertices], np.arange(dm.n_vh))

    def test_constrained_edges_on_dirichlet_faces(self, tiny_mesh):
        dm = dof_map(tiny_mesh)
        gd = tiny_mesh.boundary_faces[tiny_mesh.boundary_face_tags == GAMMA_D]
        pairs = np.vstack([gd[:, [0, 1]], gd[:, [0, 2]], gd[:, [1, 2]]])
        ids = tiny_mesh.edge_ids(pairs)
        assert (dm.edge_dof[ids] == -1).all()

    def test_gamma_edges_free(self, tiny_mesh):
        dm = dof_map(tiny_mesh)
        g = tiny_mesh.boundary_faces[tiny_mesh.boundary_face_tags == GAMMA]
        # interior top-face edges are free; only the rim (shared with a
        # side wall) is constrained
        pairs = np.vstack([g[:, [0, 1]], g[:, [0, 2]], g[:, [1, 2]]])
        ids = np.unique(tiny_mesh.edge_ids(pairs))
        v = tiny_mesh.vertices
        on_rim = np.zeros(len(ids), dtype=bool)
        for k, e in enumerate(ids):
            pts = v[tiny_mesh.edges[e]]
            # rim edge: lies wholly in one lateral wall plane
            on_rim[k] = any(
                (np.abs(pts[:, axis] - side) < 1e-12).all()
                for axis in (0, 1) for side in (-2.0, 2.0))
        assert (dm.edge_dof[ids[~on_rim]] >= 0).all()
        assert (dm.edge_dof[ids[on_rim]] == -1).all()

    def test_vh_vertices_interior_conductor(self, tiny_mesh):
        dm = dof_map(tiny_mesh)
        v = tiny_mesh.vertices[dm.vh_vertices]
        assert (np.abs(v[:, 0]) < 2.0).all()
        assert (np.abs(v[:, 1]) < 2.0).all()
        assert (v[:, 2] > -2.0).all() and (v[:, 2] < 0.0).all()

    def test_uh_vertices_strictly_above_interface(self, tiny_mesh):
        dm = dof_map(tiny_mesh)
        v = tiny_mesh.vertices[dm.uh_vertices]
        assert (v[:, 2] > 0.0).all()
        assert (np.abs(v[:, 0]) < 2.0).all() and (np.abs(v[:, 1]) < 2.0).all()


class TestDiscretization:
    def test_saddle_exactly_symmetric(self, small_mesh, rng):
        disc = Discretization(small_mesh)
        sigma = rng.uniform(0.0, 5.0, disc.dofs.n_vh)
        m = disc.assemble_saddle(sigma, 1.0, 1.0)
        d = m - m.T
        assert abs(d.data).max() if d.nnz else 0.0 == 0.0

    def test_rejects_nonpositive_sigma_total(self, small_mesh):
        disc = Discretization(small_mesh)
        sigma = np.zeros(disc.dofs.n_vh)
        sigma[0] = -2.0
        with pytest.raises(NumericalError):
            disc.conductivity_mass_data(sigma, 1.0)

    def test_conductivity_data_zero_on_air(self, small_mesh, rng):
        disc = Discretization(small_mesh)
        sigma = rng.uniform(0.0, 3.0, disc.dofs.n_vh)
        data = disc.conductivity_mass_data(sigma, 1.0)
        mat = disc.edge_pattern.matrix(data).tocoo()
        # every edge fully outside the conductor must see zero mass
        air_only = np.ones(small_mesh.n_edges, dtype=bool)
        cond = small_mesh.cells_in_region(OMEGA_C)
        air_only[np.unique(small_mesh.tet_edges[cond])] = False
        dm = disc.dofs
        dof_air = dm.edge_dof[np.flatnonzero(air_only)]
        dof_air = dof_air[dof_air >= 0]
        touched = np.zeros(dm.n_edge, dtype=bool)
        nz = np.abs(mat.data) > 0
        touched[mat.row[nz]] = True
        assert not touched[dof_air].any()

    def test_boundary_tables(self, tiny_mesh):
        disc = Discretization(tiny_mesh)
        assert disc.gamma_weights.sum() * 3 == pytest.approx(16.0, rel=1e-13)
        np.testing.assert_allclose(disc.gamma_points[:, :, 2], 0.2, rtol=1e-14)
        np.testing.assert_allclose(np.abs(disc.gamma_normals[:, 2]), 1.0, atol=1e-14)
        assert len(disc.gamma_faces) == 2 * 4 * 4

    def test_trace_tangential(self, tiny_mesh, rng):
        disc = Discretization(tiny_mesh)
        edge_full = rng.normal(size=tiny_mesh.n_edges) * (1 + 0j)
        tr = disc.tangential_trace(edge_full)
        normal_part = np.einsum("fqc,fc->fq", tr, disc.gamma_normals)
        np.testing.assert_allclose(normal_part, 0, atol=1e-13)

    def test_trace_matches_point_evaluation(self, tiny_mesh, rng):
        disc = Discretization(tiny_mesh)
        edge_full = (rng.normal(size=tiny_mesh.n_edges)
                     + 1j * rng.normal(size=tiny_mesh.n_edges))
        tr = disc.tangential_trace(edge_full)
        pts = disc.gamma_points.reshape(-1, 3)
        owners = np.repeat(disc.gamma_owners, 3)
        vals = evaluate_edge_field(tiny_mesh, edge_full, pts, owners).reshape(-1, 3, 3)
        nrm = disc.gamma_normals
        vals_t = vals - np.einsum("fqc,fc->fq", vals, nrm)[..., None] * nrm[:, None, :]
        np.testing.assert_allclose(tr, vals_t, rtol=1e-12, atol=1e-13)

    def test_misfit_derivative_is_adjoint_load(self, tiny_mesh, rng):
        disc = Discretization(tiny_mesh)
        n_free = disc.dofs.n_edge
        e = rng.normal(size=n_free) + 1j * rng.normal(size=n_free)
        v = rng.normal(size=n_free) + 1j * rng.normal(size=n_free)
        obs = rng.normal(size=(len(disc.gamma_faces), 3, 3)) * (1 + 0.5j)
        nrm = disc.gamma_normals
        obs = obs - np.einsum("fqc,fc->fq", obs, nrm)[..., None] * nrm[:, None, :]

        def misfit_of(free):
            return disc.misfit(disc.expand_edges(free), obs)

        load = disc.adjoint_load(disc.expand_edges(e), obs)[:n_free]
        t = 1e-6
        fd = (misfit_of(e + t * v) - misfit_of(e - t * v)) / (2 * t)
        assert fd == pytest.approx(-np.real(load @ v), rel=1e-6)

    def test_dipole_load_values(self, tiny_mesh):
        # one dipole in a known tet: entries equal direction . curl w_a
        class Src:
            positions = ((0.3, -0.2, 0.1),)
            direction = (1.0, 0.0, 0.0)
            omega = 2.0

        disc = Discretization(tiny_mesh)
        load = disc.dipole_load(Src())
        from eddytv.mesh import locate_points
        owner = int(locate_points(tiny_mesh, np.array(Src.positions))[0])
        verts = tiny_mesh.tets[owner]
        coeff = hat_coefficients(tiny_mesh.vertices[verts])
        expected = np.zeros(disc.dofs.n_edge, dtype=complex)
        for a, b in TET_EDGE_VERTS:
            if verts[a] > verts[b]:
                a, b = b, a
            eid = tiny_mesh.edge_ids(np.array([[verts[a], verts[b]]]))[0]
            dof = disc.dofs.edge_dof[eid]
            if dof < 0:
                continue
            curl = 2.0 * np.cross(coeff[a][1:], coeff[b][1:])
            expected[dof] += 2j * curl[0]
        np.testing.assert_allclose(load[: disc.dofs.n_edge], expected,
                                   rtol=1e-13, atol=1e-13)


class TestNodalMass:
    def test_total_mass_is_conductor_volume(self, tiny_mesh):
        m = nodal_mass_matrix(tiny_mesh, constrained=False)
        assert m.sum() == pytest.approx(4.0 * 4.0 * 2.0, rel=1e-12)

    def test_symmetric_positive(self, tiny_mesh, rng):
        m = nodal_mass_matrix(tiny_mesh)
        assert (m - m.T).nnz == 0
        x = rng.normal(size=m.shape[0])
        assert x @ (m @ x) > 0

    def test_constant_field_norm(self, tiny_mesh):
        # interior hat functions do not sum to 1, so use the full matrix
        m = nodal_mass_matrix(tiny_mesh, constrained=False)
        ones = np.ones(m.shape[0])
        assert ones @ (m @ ones) == pytest.approx(32.0, rel=1e-12)
