import struct

import numpy as np
import pytest

from corrvote.geometry import PointCloud
from corrvote.plyio import PlyError, read_ply, write_ply


def write(tmp_path, text, name="c.ply"):
    p = tmp_path / name
    p.write_bytes(text if isinstance(text, bytes) else text.encode())
    return p


class TestReadAscii:
    def test_vertices_and_normals(self, tmp_path):
        p = write(tmp_path, "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\n"
                            "property float y\nproperty float z\nproperty float nx\nproperty float ny\n"
                            "property float nz\nend_header\n0 0 0 0 0 1\n1 2 3 0 2 0\n")
        c = read_ply(p)
        np.testing.assert_array_equal(c.points, [[0, 0, 0], [1, 2, 3]])
        np.testing.assert_allclose(c.normals, [[0, 0, 1], [0, 1, 0]])

    def test_unknown_properties_and_faces_ignored(self, tmp_path):
        p = write(tmp_path, "ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty uchar red\n"
                            "property double y\nproperty double z\nelement face 1\n"
                            "property list uchar int vertex_indices\nend_header\n"
                            "0 255 0 0\n1 0 0 0\n0 7 1 0\n3 0 1 2\n")
        c = read_ply(p)
        assert c.normals is None
        np.testing.assert_array_equal(c.points, [[0, 0, 0], [1, 0, 0], [0, 1, 0]])

    def test_malformed_header_names_line(self, tmp_path):
        p = write(tmp_path, "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nbogus line\nend_header\n0\n")
        with pytest.raises(PlyError) as err:
            read_ply(p)
        assert err.value.line == 5
        assert "line 5" in str(err.value)

    def test_missing_magic(self, tmp_path):
        with pytest.raises(PlyError):
            read_ply(write(tmp_path, "not a ply\n"))

    def test_short_body(self, tmp_path):
        p = write(tmp_path, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                            "property float z\nend_header\n0 0 0\n")
        with pytest.raises(PlyError):
            read_ply(p)


class TestBinary:
    def test_little_endian_with_preceding_element(self, tmp_path):
        header = ("ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty list uchar float k\n"
                  "element vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
                  "property int id\nend_header\n").encode()
        body = struct.pack("<B2f", 2, 9.0, 9.0) + struct.pack("<3fi", 1, 2, 3, 7) + struct.pack("<3fi", 4, 5, 6, 8)
        c = read_ply(write(tmp_path, header + body))
        np.testing.assert_array_equal(c.points, [[1, 2, 3], [4, 5, 6]])

    def test_big_endian_rejected(self, tmp_path):
        p = write(tmp_path, "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(PlyError):
            read_ply(p)


@pytest.mark.parametrize("binary", [False, True])
def test_round_trip(tmp_path, rng, binary):
    n = rng.normal(size=(20, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    c = PointCloud(rng.random((20, 3)), n)
    write_ply(tmp_path / "o.ply", c, binary=binary, comments=("seed 1",))
    back = read_ply(tmp_path / "o.ply")
    np.testing.assert_array_equal(back.points, c.points)
    np.testing.assert_allclose(back.normals, c.normals, atol=1e-15)
