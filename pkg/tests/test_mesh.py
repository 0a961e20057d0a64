"""Mesh construction, refinement, point location, and serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eddytv.errors import ConfigError, MeshFormatError
from eddytv.mesh import (GAMMA, GAMMA_D, OMEGA_0, OMEGA_C, DomainSpec, Mesh,
                         barycentric_coordinates, build_box_mesh,
                         descend_to_children, locate_points, mesh_hash,
                         parse_mesh, serialize_mesh, tet_volumes,
                         uniform_refine)


def box_spec(cells=(4, 4, 4), z_interface=0.0):
    return DomainSpec((-2.0, 2.0), (-2.0, 2.0), (-2.0, 0.2), z_interface, cells, 0)


class TestDomainSpec:
    def test_validates(self, tiny_spec):
        tiny_spec.validate()

    @pytest.mark.parametrize("field,value", [
        ("x_range", (1.0, 1.0)),
        ("x_range", (2.0, -2.0)),
        ("z_range", (float("nan"), 1.0)),
        ("z_interface", 5.0),
        ("cells_per_axis", (0, 4, 4)),
        ("cells_per_axis", (4, 4)),
        ("refine_levels", -1),
    ])
    def test_rejects(self, tiny_spec, field, value):
        import dataclasses
        bad = dataclasses.replace(tiny_spec, **{field: value})
        with pytest.raises(ConfigError):
            bad.validate()

    def test_interface_needs_two_layers(self):
        spec = DomainSpec((-1, 1), (-1, 1), (-1, 1), 0.0, (2, 2, 1), 0)
        with pytest.raises(ConfigError):
            spec.validate()

    def test_z_planes_hit_interface(self):
        spec = DomainSpec((-2, 2), (-2, 2), (-2.0, 0.2), 0.0, (10, 10, 11), 0)
        zs = spec.z_planes()
        assert len(zs) == 12
        assert 0.0 in zs
        assert zs[0] == -2.0 and zs[-1] == 0.2
        assert (np.diff(zs) > 0).all()

    def test_interface_at_top_is_single_region(self):
        spec = DomainSpec((-1, 1), (-1, 1), (-1, 0), 0.0, (2, 2, 2), 0)
        mesh = build_box_mesh(spec)
        assert (mesh.cell_tags == OMEGA_C).all()


class TestBoxMesh:
    def test_counts(self, tiny_mesh):
        nx = ny = nz = 4
        assert tiny_mesh.n_vertices == (nx + 1) * (ny + 1) * (nz + 1)
        assert tiny_mesh.n_tets == 6 * nx * ny * nz

    def test_volumes_fill_box(self, tiny_mesh):
        total = tet_volumes(tiny_mesh).sum()
        assert total == pytest.approx(4.0 * 4.0 * 2.2, rel=1e-13)
        assert (tet_volumes(tiny_mesh) > 0).all()

    def test_euler_characteristic(self, tiny_mesh):
        # ball: V - E + F - T = 1
        m = tiny_mesh
        assert m.n_vertices - m.n_edges + m.n_faces - m.n_tets == 1

    def test_region_split_at_interface(self, tiny_mesh):
        cents = tiny_mesh.vertices[tiny_mesh.tets].mean(axis=1)
        cond = tiny_mesh.cell_tags == OMEGA_C
        assert (cents[cond, 2] < 0).all()
        assert (cents[~cond, 2] > 0).all()
        assert cond.any() and (~cond).any()

    def test_tets_do_not_straddle_interface(self, tiny_mesh):
        z = tiny_mesh.vertices[tiny_mesh.tets][:, :, 2]
        cond = tiny_mesh.cell_tags == OMEGA_C
        assert (z[cond] <= 0).all()
        assert (z[~cond] >= 0).all()

    def test_boundary_face_count(self, tiny_mesh):
        nx = ny = nz = 4
        quads = 2 * (nx * ny + ny * nz + nx * nz)
        assert tiny_mesh.n_boundary_faces == 2 * quads

    def test_gamma_is_exactly_the_top(self, tiny_mesh):
        z = tiny_mesh.vertices[:, 2]
        on_top = tiny_mesh.boundary_face_tags == GAMMA
        assert on_top.sum() == 2 * 4 * 4
        assert (z[tiny_mesh.boundary_faces[on_top]] == 0.2).all()
        assert not (z[tiny_mesh.boundary_faces[~on_top]] == 0.2).all(axis=1).any()

    def test_boundary_faces_owned(self, tiny_mesh):
        owners = tiny_mesh.boundary_face_tets
        tets = tiny_mesh.tets[owners]
        for face, tet in zip(tiny_mesh.boundary_faces[:20], tets[:20]):
            assert set(face) <= set(tet)

    def test_subregion_tagging(self):
        box = ((-0.5, 0.5), (-0.5, 0.5), (-1.0, -0.5))
        mesh = build_box_mesh(box_spec(), subregions=[("blob", box)])
        assert mesh.subregion_names == ("blob",)
        cents = mesh.vertices[mesh.tets].mean(axis=1)
        inside = ((np.abs(cents[:, 0]) <= 0.5) & (np.abs(cents[:, 1]) <= 0.5)
                  & (cents[:, 2] >= -1.0) & (cents[:, 2] <= -0.5))
        assert np.array_equal(mesh.subregion_tags == 0, inside)

    def test_bad_subregion_name(self):
        with pytest.raises(ConfigError):
            build_box_mesh(box_spec(), subregions=[("a b", ((0, 1), (0, 1), (-1, 0)))])

    @given(nx=st.integers(1, 4), ny=st.integers(1, 4), nz=st.integers(2, 4))
    @settings(max_examples=20, deadline=None)
    def test_any_cell_counts(self, nx, ny, nz):
        spec = DomainSpec((0.0, 1.0), (0.0, 2.0), (-1.0, 1.0), 0.0, (nx, ny, nz), 0)
        mesh = build_box_mesh(spec)
        assert mesh.n_tets == 6 * nx * ny * nz
        assert tet_volumes(mesh).sum() == pytest.approx(1.0 * 2.0 * 2.0, rel=1e-12)
        assert mesh.n_vertices - mesh.n_edges + mesh.n_faces - mesh.n_tets == 1


class TestRefine:
    def test_eight_children_preserve_volume(self, tiny_mesh):
        fine = uniform_refine(tiny_mesh)
        assert fine.n_tets == 8 * tiny_mesh.n_tets
        child_vols = tet_volumes(fine).reshape(-1, 8).sum(axis=1)
        assert np.allclose(child_vols, tet_volumes(tiny_mesh), rtol=1e-12)

    def test_parents_and_tags(self, tiny_mesh):
        fine = uniform_refine(tiny_mesh)
        assert np.array_equal(fine.parents, np.repeat(np.arange(tiny_mesh.n_tets), 8))
        assert np.array_equal(fine.cell_tags, np.repeat(tiny_mesh.cell_tags, 8))
        assert fine.parent_mesh is tiny_mesh

    def test_h_halves(self, tiny_mesh):
        fine = uniform_refine(tiny_mesh)
        assert fine.h == pytest.approx(tiny_mesh.h / 2, rel=1e-12)

    def test_children_inside_parent(self, tiny_mesh):
        fine = uniform_refine(tiny_mesh)
        cents = fine.vertices[fine.tets].mean(axis=1)
        lam = barycentric_coordinates(tiny_mesh, fine.parents, cents)
        assert (lam > -1e-12).all() and (lam < 1 + 1e-12).all()


class TestPointLocation:
    def test_roundtrip_random_points(self, tiny_mesh, rng):
        lam = rng.dirichlet(np.ones(4), size=200)
        tets = rng.integers(0, tiny_mesh.n_tets, size=200)
        pts = np.einsum("nk,nkd->nd", lam, tiny_mesh.vertices[tiny_mesh.tets[tets]])
        found = locate_points(tiny_mesh, pts)
        lam2 = barycentric_coordinates(tiny_mesh, found, pts)
        assert (lam2 > -1e-9).all()
        back = np.einsum("nk,nkd->nd", lam2, tiny_mesh.vertices[tiny_mesh.tets[found]])
        assert np.allclose(back, pts, atol=1e-12)

    def test_outside_reports_minus_one(self, tiny_mesh):
        found = locate_points(tiny_mesh, np.array([[10.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
        assert found[0] == -1
        assert found[1] >= 0

    def test_descend_matches_locate(self, tiny_mesh, rng):
        fine = uniform_refine(tiny_mesh)
        lam = rng.dirichlet(np.ones(4), size=100)
        coarse_tets = rng.integers(0, tiny_mesh.n_tets, size=100)
        pts = np.einsum("nk,nkd->nd", lam, tiny_mesh.vertices[tiny_mesh.tets[coarse_tets]])
        kids = descend_to_children(tiny_mesh, fine, coarse_tets, pts)
        assert (fine.parents[kids] == coarse_tets).all()
        lam2 = barycentric_coordinates(fine, kids, pts)
        assert (lam2 > -1e-9).all()


class TestSerialization:
    def test_roundtrip(self, tiny_mesh):
        text = serialize_mesh(tiny_mesh)
        back = parse_mesh(text)
        assert np.array_equal(back.vertices, tiny_mesh.vertices)
        assert np.array_equal(back.tets, tiny_mesh.tets)
        assert np.array_equal(back.cell_tags, tiny_mesh.cell_tags)
        assert np.array_equal(back.boundary_face_tags, tiny_mesh.boundary_face_tags)
        assert serialize_mesh(back) == text

    def test_roundtrip_with_subregions(self):
        mesh = build_box_mesh(box_spec(), subregions=[
            ("left", ((-2.0, 0.0), (-2.0, 2.0), (-2.0, 0.0))),
        ])
        back = parse_mesh(serialize_mesh(mesh))
        assert back.subregion_names == ("left",)
        assert np.array_equal(back.subregion_tags, mesh.subregion_tags)

    def test_hash_stable_and_sensitive(self, tiny_mesh):
        assert mesh_hash(tiny_mesh) == mesh_hash(tiny_mesh)
        other = build_box_mesh(box_spec(cells=(4, 4, 5)))
        assert mesh_hash(other) != mesh_hash(tiny_mesh)

    def test_parse_rejects_garbage(self):
        with pytest.raises(MeshFormatError):
            parse_mesh("not a mesh\n")

    def test_parse_rejects_truncation(self, tiny_mesh):
        text = serialize_mesh(tiny_mesh)
        with pytest.raises(MeshFormatError):
            parse_mesh("\n".join(text.splitlines()[:10]))


class TestMeshClass:
    def test_edge_ids_roundtrip(self, tiny_mesh, rng):
        take = rng.integers(0, tiny_mesh.n_edges, size=50)
        pairs = tiny_mesh.edges[take]
        assert np.array_equal(tiny_mesh.edge_ids(pairs), take)
        # orientation of the query must not matter
        assert np.array_equal(tiny_mesh.edge_ids(pairs[:, ::-1]), take)

    def test_edge_ids_rejects_non_edge(self, tiny_mesh):
        with pytest.raises(ConfigError):
            tiny_mesh.edge_ids(np.array([[0, tiny_mesh.n_vertices - 1]]))

    def test_edges_sorted_canonically(self, tiny_mesh):
        e = tiny_mesh.edges
        assert (e[:, 0] < e[:, 1]).all()
        keys = e[:, 0] * tiny_mesh.n_vertices + e[:, 1]
        assert (np.diff(keys) > 0).all()

    def test_cells_in_region_partition(self, tiny_mesh):
        cond = tiny_mesh.cells_in_region(OMEGA_C)
        air = tiny_mesh.cells_in_region(OMEGA_0)
        assert len(cond) + len(air) == tiny_mesh.n_tets
        assert not np.intersect1d(cond, air).size
