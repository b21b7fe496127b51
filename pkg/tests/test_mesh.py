import struct

import numpy as np
import pytest

from shapefocus.exceptions import MeshFormatError, ValidationError
from shapefocus.mesh import Mesh, load_mesh, save_obj, save_ply
from shapefocus.phantoms import box, icosphere

CUBE_OBJ = """# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def test_unit_cube_obj(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ)
    m = load_mesh(p)
    assert len(m.vertices) == 8
    assert len(m.triangles) == 12
    assert m.area == pytest.approx(6.0, abs=1e-12)
    assert m.n_dropped == 0


def test_degenerate_triangle_dropped(tmp_path):
    p = tmp_path / "cube.obj"
    # a 13th face reusing a vertex twice has zero area
    p.write_text(CUBE_OBJ + "f 1 1 2\n")
    m = load_mesh(p)
    assert len(m.triangles) == 12
    assert m.n_dropped == 1


def test_one_zero_area_among_twelve(tmp_path):
    lines = CUBE_OBJ.splitlines()
    lines[-1] = "f 1 2 1"
    p = tmp_path / "cube.obj"
    p.write_text("\n".join(lines) + "\n")
    m = load_mesh(p)
    assert len(m.triangles) == 11 and m.n_dropped == 1


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_mesh("/definitely/not/here.obj")


def test_obj_error_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 x\nf 1 2 3\n")
    with pytest.raises(MeshFormatError, match=r"bad.obj:4:"):
        load_mesh(p)


def test_obj_quads_and_slashes(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
    m = load_mesh(p)
    assert len(m.triangles) == 2
    assert m.area == pytest.approx(1.0)


def test_empty_mesh_is_validation_error(tmp_path):
    p = tmp_path / "empty.obj"
    p.write_text("v 0 0 0\n")
    with pytest.raises(ValidationError):
        load_mesh(p)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_round_trip(tmp_path, binary):
    m = icosphere(50.0, 2)
    p = tmp_path / "s.ply"
    save_ply(m, p, binary=binary)
    back = load_mesh(p)
    np.testing.assert_allclose(back.vertices, m.vertices, atol=1e-5)
    np.testing.assert_array_equal(back.triangles, m.triangles)


def test_obj_round_trip_and_unit_scale(tmp_path):
    m = box((2.0, 3.0, 4.0))
    p = tmp_path / "b.obj"
    save_obj(m, p)
    back = load_mesh(p, unit_scale=1000.0)
    assert back.area == pytest.approx(m.area * 1e6, rel=1e-9)


def test_truncated_binary_ply_reports_offset(tmp_path):
    m = icosphere(10.0, 1)
    p = tmp_path / "t.ply"
    save_ply(m, p, binary=True)
    data = p.read_bytes()
    p.write_bytes(data[:-7])
    with pytest.raises(MeshFormatError, match="offset|byte"):
        load_mesh(p)


def test_binary_ply_with_uchar_counts(tmp_path):
    header = (b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
              b"property float x\nproperty float y\nproperty float z\n"
              b"element face 1\nproperty list uchar int vertex_indices\nend_header\n")
    body = struct.pack("<9f", 0, 0, 0, 2, 0, 0, 0, 2, 0) + struct.pack("<B3i", 3, 0, 1, 2)
    p = tmp_path / "tri.ply"
    p.write_bytes(header + body)
    m = load_mesh(p)
    assert m.area == pytest.approx(2.0)


def test_invariants_on_construction():
    with pytest.raises(ValidationError):
        Mesh(np.zeros((3, 3)), [[0, 1, 5]])
    m = Mesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert m.vertices.flags.writeable is False
    assert m.face_normals[0] @ [0, 0, 1] == pytest.approx(1.0)
