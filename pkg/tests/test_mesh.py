"""Tests for STL parsing and wire-edge extraction."""

import numpy as np
import pytest

from edgepose.errors import EmptyMeshError, MeshParseError
from edgepose.mesh import (
    TriMesh,
    extract_wire_edges,
    load_stl,
    make_box,
    make_cylinder,
    make_lbracket,
    make_primitive,
    save_stl,
)


@pytest.fixture
def cube():
    return make_box(size=(1.0, 1.0, 1.0))


class TestStlIO:
    def test_cube_topology(self, cube):
        data = save_stl(cube, binary=True)
        mesh = load_stl(data)
        assert mesh.vertices.shape == (8, 3)
        assert mesh.triangles.shape == (12, 3)
        assert len(mesh.edge_map()) == 18  # 12 cube edges + 6 face diagonals

    def test_ascii_and_binary_agree(self, cube):
        a = load_stl(save_stl(cube, binary=False))
        b = load_stl(save_stl(cube, binary=True))
        # identical up to float32 quantization of the binary encoding
        np.testing.assert_allclose(a.vertices, b.vertices, atol=1e-6)
        np.testing.assert_array_equal(a.triangles, b.triangles)

    def test_truncated_binary_raises(self, cube):
        data = save_stl(cube, binary=True)
        with pytest.raises(MeshParseError):
            load_stl(data[:-7])

    def test_truncated_ascii_raises(self, cube):
        data = save_stl(cube, binary=False)
        with pytest.raises(MeshParseError) as err:
            load_stl(data[: len(data) // 2])
        assert err.value.offset is not None

    def test_garbage_raises(self):
        with pytest.raises(MeshParseError):
            load_stl(b"definitely not a mesh at all, not even close")

    def test_zero_facet_binary_raises(self):
        import struct

        data = struct.pack("<80sI", b"empty", 0)
        with pytest.raises(EmptyMeshError):
            load_stl(data)

    def test_degenerate_triangles_dropped(self):
        tri = np.array(
            [
                [0, 0, 0], [1, 0, 0], [0, 1, 0],  # real
                [0, 0, 0], [1, 0, 0], [2, 0, 0],  # collinear
            ],
            dtype=float,
        )
        mesh = TriMesh(
            vertices=tri, triangles=np.array([[0, 1, 2], [3, 4, 5]])
        )
        back = load_stl(save_stl(mesh))
        assert back.triangles.shape[0] == 1


class TestWireEdges:
    def test_cube_sharp_edges(self, cube):
        wires = extract_wire_edges(cube, dihedral_threshold=0.52)
        assert len(wires) == 12
        assert all(w.kind == "sharp" for w in wires)
        assert all(abs(w.dihedral - np.pi / 2) < 1e-9 for w in wires)

    def test_coplanar_pair_keeps_boundary_only(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
        mesh = TriMesh(vertices=verts, triangles=np.array([[0, 1, 2], [0, 2, 3]]))
        wires = extract_wire_edges(mesh, dihedral_threshold=0.52)
        assert len(wires) == 4
        assert all(w.kind == "boundary" for w in wires)

    def test_cylinder_keeps_rims_drops_seams(self):
        segments = 32
        mesh = make_cylinder(radius=0.5, height=1.0, segments=segments)
        wires = extract_wire_edges(mesh, dihedral_threshold=0.52)
        # the two cap rims survive; the side seams (2*pi/32 dihedral) do not
        assert len(wires) == 2 * segments
        # independent per-edge dihedral check: every kept edge joins a side
        # face to a cap (one normal has |nz| ~ 1, the other ~ 0)
        normals = mesh.face_normals()
        edge_map = mesh.edge_map()
        for w in wires:
            key = None
            for (i, j), faces in edge_map.items():
                if (
                    np.allclose(mesh.vertices[i], w.p0)
                    and np.allclose(mesh.vertices[j], w.p1)
                ) or (
                    np.allclose(mesh.vertices[i], w.p1)
                    and np.allclose(mesh.vertices[j], w.p0)
                ):
                    key = (i, j)
                    break
            nz = sorted(abs(normals[f][2]) for f in edge_map[key])
            assert nz[0] < 1e-9 and nz[-1] > 1 - 1e-9

    def test_lbracket_shape(self):
        mesh = make_lbracket()
        wires = extract_wire_edges(mesh, dihedral_threshold=0.52)
        # 6 vertical edges + 6 top + 6 bottom outline edges, all right angles
        assert len(wires) == 18

    def test_make_primitive_dispatch(self):
        assert make_primitive("box").triangles.shape[0] == 12
        with pytest.raises(MeshParseError):
            make_primitive("torus")
