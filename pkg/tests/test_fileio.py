import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcatlas.errors import ParseError, StructuralError
from pcatlas.fileio import (atomic_write, load_mesh, parse_mesh, parse_point_cloud, write_mesh,
                            write_point_cloud)
from pcatlas.geometry import PointCloud, pad_with_holes
from pcatlas.seeding import make_rng
from pcatlas.shapes import box_mesh, sample_sphere

TRI_OBJ = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"


def test_obj_minimal():
    mesh = parse_mesh(TRI_OBJ, "obj")
    assert mesh.n_vertices == 3 and mesh.n_faces == 1
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])
    np.testing.assert_array_equal(mesh.vertices[1], [1, 0, 0])


def test_obj_out_of_range_index():
    with pytest.raises(StructuralError):
        parse_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5\n", "obj")


def test_obj_quad_fan_triangulation():
    mesh = parse_mesh(b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n", "obj")
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])


def test_obj_ignores_other_records_and_slashes():
    text = b"# comment\no thing\nvn 0 0 1\nvt 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/1 3/3/1\n"
    mesh = parse_mesh(text, "obj")
    assert mesh.n_faces == 1


def test_obj_negative_indices():
    mesh = parse_mesh(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n", "obj")
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])


def test_obj_malformed_record_reports_line():
    with pytest.raises(ParseError) as info:
        parse_mesh(b"v 0 0 0\nv 1 0 zz\n", "obj")
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_obj_short_face_reports_line():
    with pytest.raises(ParseError) as info:
        parse_mesh(b"v 0 0 0\nv 1 0 0\nf 1 2\n", "obj")
    assert info.value.line == 3


def test_obj_write_parse_roundtrip():
    mesh = box_mesh(0.7, center=(0.1, -0.2, 0.3))
    back = parse_mesh(write_mesh(mesh, "obj"), "obj")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


@pytest.mark.parametrize("fmt", ["ply", "ply-ascii"])
def test_ply_mesh_roundtrip(fmt):
    mesh = box_mesh()
    back = parse_mesh(write_mesh(mesh, fmt), "ply")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_ply_ascii_mixed_polygons():
    text = (
        b"ply\nformat ascii 1.0\ncomment hand written\nelement vertex 4\n"
        b"property float x\nproperty float y\nproperty float z\n"
        b"element face 2\nproperty list uchar int vertex_indices\nend_header\n"
        b"0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n3 0 1 3\n"
    )
    mesh = parse_mesh(text, "ply")
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3], [0, 1, 3]])


def test_ply_binary_mixed_polygons():
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 4\n"
        b"property float x\nproperty float y\nproperty float z\n"
        b"element face 2\nproperty list uchar int vertex_indices\nend_header\n"
    )
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype="<f4").tobytes()
    faces = struct.pack("<B4i", 4, 0, 1, 2, 3) + struct.pack("<B3i", 3, 0, 1, 3)
    mesh = parse_mesh(header + verts + faces, "ply")
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3], [0, 1, 3]])


def test_ply_truncated_binary():
    data = write_point_cloud(sample_sphere(10, 0))
    with pytest.raises(ParseError):
        parse_point_cloud(data[:-5])


def test_ply_big_endian_rejected():
    with pytest.raises(ParseError):
        parse_point_cloud(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")


def test_not_a_ply():
    with pytest.raises(ParseError):
        parse_point_cloud(b"hello")


def test_point_cloud_empty():
    data = write_point_cloud(PointCloud.empty())
    assert b"element vertex 0\n" in data
    assert len(parse_point_cloud(data)) == 0


def test_point_cloud_single_point_roundtrip():
    cloud = PointCloud([[0.1, -0.2, 0.3]], [[0.0, 0.6, 0.8]])
    assert parse_point_cloud(write_point_cloud(cloud)).same_as(cloud)


def test_point_cloud_16384_roundtrip_bitwise():
    cloud = sample_sphere(16384, 5)
    assert parse_point_cloud(write_point_cloud(cloud)).same_as(cloud)


def test_point_cloud_ascii_roundtrip():
    cloud = sample_sphere(100, 6)
    assert parse_point_cloud(write_point_cloud(cloud, "ascii")).same_as(cloud)


def test_point_cloud_holes_roundtrip():
    cloud = pad_with_holes(sample_sphere(5, 1), 8)
    back = parse_point_cloud(write_point_cloud(cloud))
    assert back.same_as(cloud) and back.n_valid == 5


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=200), st.integers(min_value=0, max_value=2**32 - 1))
def test_point_cloud_binary_roundtrip_property(n, seed):
    rng = make_rng(seed)
    pos = rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-6, 6)
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    cloud = PointCloud(pos, nrm)
    assert parse_point_cloud(write_point_cloud(cloud)).same_as(cloud)


def test_load_mesh_by_extension(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_bytes(TRI_OBJ)
    assert load_mesh(p).n_faces == 1
    q = tmp_path / "tri.stl"
    q.write_bytes(TRI_OBJ)
    with pytest.raises(ParseError):
        load_mesh(q)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "out.bin"
    atomic_write(target, b"abc")
    atomic_write(target, b"defg")
    assert target.read_bytes() == b"defg"
    assert [p.name for p in tmp_path.iterdir()] == ["out.bin"]
