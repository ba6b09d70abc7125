import math
import struct

import numpy as np
import pytest

from fluororeg.mesh import (
    EmptyMesh,
    InvalidParams,
    MeshError,
    ParseError,
    TriMesh,
    is_watertight,
    load_mesh,
    make_phantom,
    save_stl_binary,
    weld,
)


def cube_stl_bytes():
    """Unit cube as 12-facet binary STL with duplicated corner vertices."""
    v, f = cube_arrays()
    out = bytearray(b"\x00" * 80)
    out += struct.pack("<I", len(f))
    for tri in f:
        a, b, c = v[tri[0]], v[tri[1]], v[tri[2]]
        out += struct.pack("<12fH", 0, 0, 0, *a, *b, *c, 0)
    return bytes(out)


def cube_arrays():
    v = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            (0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7),
            (0, 1, 5), (0, 5, 4), (2, 3, 7), (2, 7, 6),
            (1, 2, 6), (1, 6, 5), (0, 4, 7), (0, 7, 3),
        ],
        dtype=np.int32,
    )
    return v, f


def cube_obj_bytes():
    v, f = cube_arrays()
    lines = [f"v {x:g} {y:g} {z:g}" for x, y, z in v]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in f]
    return ("\n".join(lines) + "\n").encode()


class TestLoadStl:
    def test_unit_cube_welds_to_8_vertices(self):
        m = load_mesh(cube_stl_bytes(), "stl-binary")
        assert len(m.vertices) == 8
        assert len(m.faces) == 12
        assert m.watertight

    def test_truncated(self):
        data = cube_stl_bytes()[:200]
        with pytest.raises(ParseError) as e:
            load_mesh(data, "stl-binary")
        assert e.value.offset == 200

    def test_short_header(self):
        with pytest.raises(ParseError):
            load_mesh(b"\x00" * 40, "stl-binary")

    def test_zero_facets(self):
        with pytest.raises(EmptyMesh):
            load_mesh(b"\x00" * 80 + struct.pack("<I", 0), "stl-binary")

    def test_unknown_format(self):
        with pytest.raises(MeshError):
            load_mesh(b"", "ply")


class TestLoadObj:
    def test_cube_matches_stl_vertex_set(self):
        a = load_mesh(cube_stl_bytes(), "stl-binary")
        b = load_mesh(cube_obj_bytes(), "obj")
        sa = sorted(map(tuple, a.vertices))
        sb = sorted(map(tuple, b.vertices))
        assert np.allclose(sa, sb)
        assert abs(a.volume() - b.volume()) < 1e-12

    def test_quad_fan_triangulation(self):
        data = b"v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
        m = load_mesh(data, "obj")
        assert len(m.faces) == 2

    def test_short_vertex_line(self):
        with pytest.raises(ParseError) as e:
            load_mesh(b"# header\nv 1 2\n", "obj")
        assert e.value.offset == len(b"# header\n")

    def test_empty(self):
        with pytest.raises(EmptyMesh):
            load_mesh(b"# nothing\n", "obj")


class TestWeld:
    def test_merges_close_vertices(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1e-9, 0, 0]])
        f = np.array([[0, 1, 2], [3, 2, 1]])
        wv, wf = weld(v, f)
        assert len(wv) == 3

    def test_drops_degenerate_faces(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]])
        f = np.array([[0, 1, 2], [0, 1, 3]])  # second face is collinear
        _, wf = weld(v, f)
        assert len(wf) == 1

    def test_all_degenerate(self):
        v = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
        with pytest.raises(EmptyMesh):
            weld(v, np.array([[0, 1, 2]]))


class TestWatertight:
    def test_cube_closed(self):
        v, f = cube_arrays()
        assert is_watertight(v, f)

    def test_missing_face_open(self):
        v, f = cube_arrays()
        assert not is_watertight(v, f[:-1])

    def test_single_triangle_open(self):
        v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        assert not is_watertight(v, np.array([[0, 1, 2]]))


class TestSaveStl:
    def test_roundtrip(self):
        m = make_phantom("condyle_pair")
        back = load_mesh(save_stl_binary(m), "stl-binary")
        assert len(back.vertices) == len(m.vertices)
        # STL stores float32 coordinates, so volume matches only to that grain
        assert abs(back.volume() - m.volume()) / m.volume() < 1e-6
        assert back.watertight


class TestPhantoms:
    def test_sphere_volume(self):
        r = 20.0
        m = make_phantom("sphere", radius=r, subdivisions=3)
        assert m.watertight
        want = 4.0 / 3.0 * math.pi * r**3
        assert abs(m.volume() - want) / want < 0.02

    def test_box_volume(self):
        m = make_phantom("box", sx=10, sy=20, sz=30)
        assert m.watertight
        assert abs(m.volume() - 6000.0) < 1e-6

    def test_condyle_pair(self):
        m = make_phantom("condyle_pair")
        assert m.watertight
        assert m.volume() > 0
        # two lobes straddle the x axis
        assert m.vertices[:, 0].min() < -5 and m.vertices[:, 0].max() > 5

    @pytest.mark.parametrize("wings", ["flat", "round", "absent"])
    def test_tray_variants(self, wings):
        m = make_phantom("tray_with_wings", wings=wings)
        assert m.watertight
        assert m.volume() > 0

    def test_tray_absent_smaller(self):
        full = make_phantom("tray_with_wings", wings="flat")
        bare = make_phantom("tray_with_wings", wings="absent")
        assert len(bare.faces) < len(full.faces)

    def test_invalid_params(self):
        with pytest.raises(InvalidParams):
            make_phantom("sphere", radius=-1)
        with pytest.raises(InvalidParams):
            make_phantom("box", sx=0)
        with pytest.raises(InvalidParams):
            make_phantom("condyle_pair", asymmetry=0.0)
        with pytest.raises(InvalidParams):
            make_phantom("tray_with_wings", wings="spiky")
        with pytest.raises(InvalidParams):
            make_phantom("torus")


class TestTriMesh:
    def test_face_index_out_of_range(self):
        with pytest.raises(MeshError):
            TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_volume_sign(self):
        v, f = cube_arrays()
        assert abs(TriMesh(v, f).volume() - 1.0) < 1e-12
        assert abs(TriMesh(v, f[:, ::-1]).volume() + 1.0) < 1e-12
