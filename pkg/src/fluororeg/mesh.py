"""Triangle meshes: STL/OBJ loading, welding, and procedural phantom shapes."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


class ParseError(MeshError):
    def __init__(self, msg, offset=None):
        super().__init__(f"{msg}" + (f" (byte offset {offset})" if offset is not None else ""))
        self.offset = offset


class EmptyMesh(MeshError):
    pass


class InvalidParams(MeshError):
    pass


WELD_TOL = 1e-6  # mm
DEGENERATE_AREA = 1e-12  # mm^2


@dataclass
class TriMesh:
    vertices: np.ndarray  # (n, 3) mm
    faces: np.ndarray  # (m, 3) int32
    name: str = ""
    watertight: bool = field(default=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        if self.faces.size and int(self.faces.max()) >= len(self.vertices):
            raise MeshError("face index out of range")

    def volume(self) -> float:
        """Signed-tetrahedron volume; positive for outward-oriented closed meshes."""
        v = self.vertices
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _face_areas(vertices, faces):
    a = vertices[faces[:, 0]]
    ab = vertices[faces[:, 1]] - a
    ac = vertices[faces[:, 2]] - a
    return 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)


def weld(vertices: np.ndarray, faces: np.ndarray, tol: float = WELD_TOL):
    """Merge vertices within tol and drop degenerate faces."""
    if len(vertices) == 0:
        raise EmptyMesh("no vertices")
    key = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    new_vertices = vertices[np.sort(first)]
    # remap through sorted-first order so vertex order follows file order
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    faces = rank[inverse][faces]
    ok = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    faces = faces[ok]
    if len(faces):
        faces = faces[_face_areas(new_vertices, faces) > DEGENERATE_AREA]
    if len(faces) == 0:
        raise EmptyMesh("all faces degenerate")
    return new_vertices, faces.astype(np.int32)


def is_watertight(vertices: np.ndarray, faces: np.ndarray) -> bool:
    """Every undirected edge used exactly twice, once per direction."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    fwd = {}
    for i, j in e:
        k = (int(i), int(j))
        fwd[k] = fwd.get(k, 0) + 1
    if any(c != 1 for c in fwd.values()):
        return False
    return all((j, i) in fwd for (i, j) in fwd)


def _finish(vertices, faces, name) -> TriMesh:
    vertices, faces = weld(np.asarray(vertices, dtype=np.float64), np.asarray(faces))
    m = TriMesh(vertices, faces, name=name)
    m.watertight = is_watertight(m.vertices, m.faces)
    return m


# --- file formats ---


def load_mesh(data: bytes, fmt: str, name: str = "") -> TriMesh:
    if fmt == "stl-binary":
        return _load_stl_binary(data, name)
    if fmt == "obj":
        return _load_obj(data, name)
    raise MeshError(f"unknown mesh format {fmt!r}")


def _load_stl_binary(data: bytes, name: str) -> TriMesh:
    if len(data) < 84:
        raise ParseError("binary STL shorter than header", offset=len(data))
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        raise ParseError(f"truncated STL: {count} facets need {need} bytes", offset=len(data))
    if count == 0:
        raise EmptyMesh("STL with zero facets")
    raw = np.frombuffer(data, dtype=np.uint8, offset=84, count=50 * count).reshape(count, 50)
    tri = raw[:, 12:48].copy().view("<f4").reshape(count, 3, 3).astype(np.float64)
    vertices = tri.reshape(-1, 3)
    faces = np.arange(3 * count, dtype=np.int32).reshape(count, 3)
    return _finish(vertices, faces, name)


def _load_obj(data: bytes, name: str) -> TriMesh:
    vertices = []
    faces = []
    offset = 0
    for line in data.splitlines(keepends=True):
        stripped = line.strip()
        if stripped.startswith(b"v "):
            parts = stripped.split()
            if len(parts) < 4:
                raise ParseError("short vertex line", offset=offset)
            vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif stripped.startswith(b"f "):
            parts = stripped.split()[1:]
            if len(parts) < 3:
                raise ParseError("face with < 3 vertices", offset=offset)
            idx = [int(p.split(b"/")[0]) - 1 for p in parts]
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[k], idx[k + 1]])
        offset += len(line)
    if not vertices or not faces:
        raise EmptyMesh("OBJ without vertices or faces")
    return _finish(vertices, faces, name)


def save_stl_binary(mesh: TriMesh) -> bytes:
    out = bytearray(b"\x00" * 80)
    out += struct.pack("<I", len(mesh.faces))
    v = mesh.vertices
    for f in mesh.faces:
        a, b, c = v[f[0]], v[f[1]], v[f[2]]
        n = np.cross(b - a, c - a)
        nn = np.linalg.norm(n)
        n = n / nn if nn > 0 else n
        out += struct.pack("<12fH", *n, *a, *b, *c, 0)
    return bytes(out)


# --- procedural phantoms ---


def _icosphere(radius: float, subdivisions: int):
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts) * radius, np.array(faces, dtype=np.int32)


def _box_mesh(sx, sy, sz, center=(0.0, 0.0, 0.0)):
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    cx, cy, cz = center
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    ) + np.array([cx, cy, cz])
    f = np.array(
        [
            (0, 2, 1), (0, 3, 2),  # -z
            (4, 5, 6), (4, 6, 7),  # +z
            (0, 1, 5), (0, 5, 4),  # -y
            (2, 3, 7), (2, 7, 6),  # +y
            (1, 2, 6), (1, 6, 5),  # +x
            (0, 4, 7), (0, 7, 3),  # -x
        ],
        dtype=np.int32,
    )
    return v, f


def _capsule(radius: float, length: float, segments: int = 16, rings: int = 8):
    """Closed capsule along the z axis: cylinder of given length + hemi caps."""
    verts = []
    faces = []
    # stacked rings: lower cap (pole..equator), cylinder, upper cap
    zs = []
    rs = []
    for i in range(rings + 1):  # lower hemisphere
        a = -math.pi / 2 + (math.pi / 2) * i / rings
        zs.append(-length / 2 + radius * math.sin(a))
        rs.append(radius * math.cos(a))
    for i in range(rings + 1):  # upper hemisphere, starting at the +z/2 wall ring
        a = (math.pi / 2) * i / rings
        zs.append(length / 2 + radius * math.sin(a))
        rs.append(radius * math.cos(a))
    nrings = len(zs)
    for z, r in zip(zs, rs):
        for k in range(segments):
            t = 2 * math.pi * k / segments
            verts.append([r * math.cos(t), r * math.sin(t), z])
    for i in range(nrings - 1):
        for k in range(segments):
            k2 = (k + 1) % segments
            a = i * segments + k
            b = i * segments + k2
            c = (i + 1) * segments + k2
            d = (i + 1) * segments + k
            faces += [(a, b, c), (a, c, d)]
    return np.array(verts), np.array(faces, dtype=np.int32)


def _transform(verts, rot=None, offset=(0.0, 0.0, 0.0)):
    if rot is not None:
        verts = verts @ np.asarray(rot).T
    return verts + np.asarray(offset, dtype=np.float64)


def _rot_x(deg):
    a = math.radians(deg)
    return np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])


def _merge(parts):
    verts = []
    faces = []
    base = 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + base)
        base += len(v)
    return np.concatenate(verts), np.concatenate(faces)


def make_phantom(kind: str, **params) -> TriMesh:
    """Procedural watertight phantom meshes (dimensions in mm).

    kinds:
      sphere(radius, subdivisions=3)
      box(sx, sy, sz)
      condyle_pair(lobe_radius=11, lobe_length=38, lobe_gap=22, asymmetry=0.75,
                   splay_deg=12): two offset capsule lobes, femur-like; the
                   medial lobe is scaled by `asymmetry`.
      tray_with_wings(plate=(65, 45, 4), keel=(10, 10, 14), wings='round'|
                      'flat'|'absent', wing_size=(16, 10, 4), asymmetry=0.8):
                   tibial-tray-like plate + keel + optional wings.
    """
    if kind == "sphere":
        radius = params.get("radius", 20.0)
        sub = params.get("subdivisions", 3)
        if radius <= 0 or sub < 0:
            raise InvalidParams("sphere needs radius > 0, subdivisions >= 0")
        v, f = _icosphere(radius, sub)
        return _finish(v, f, f"sphere_r{radius:g}")
    if kind == "box":
        sx, sy, sz = params.get("sx", 10.0), params.get("sy", 20.0), params.get("sz", 30.0)
        if min(sx, sy, sz) <= 0:
            raise InvalidParams("box dimensions must be positive")
        v, f = _box_mesh(sx, sy, sz)
        return _finish(v, f, "box")
    if kind == "condyle_pair":
        r = params.get("lobe_radius", 11.0)
        length = params.get("lobe_length", 38.0)
        gap = params.get("lobe_gap", 22.0)
        asym = params.get("asymmetry", 0.75)
        splay = params.get("splay_deg", 12.0)
        if r <= 0 or length <= 0 or gap <= 0 or not (0 < asym <= 1):
            raise InvalidParams("condyle_pair params out of range")
        lat_v, lat_f = _capsule(r, length)
        med_v, med_f = _capsule(r * asym, length * asym)
        lat_v = _transform(lat_v, rot=_rot_x(90 - splay), offset=(-gap / 2, 0, 0))
        med_v = _transform(med_v, rot=_rot_x(90 + splay), offset=(gap / 2, 0, 0))
        v, f = _merge([(lat_v, lat_f), (med_v, med_f)])
        return _finish(v, f, "condyle_pair")
    if kind == "tray_with_wings":
        px, py, pz = params.get("plate", (65.0, 45.0, 4.0))
        kx, ky, kz = params.get("keel", (10.0, 10.0, 14.0))
        wings = params.get("wings", "flat")
        wx, wy, wz = params.get("wing_size", (16.0, 10.0, 4.0))
        asym = params.get("asymmetry", 0.8)
        if min(px, py, pz, kx, ky, kz) <= 0:
            raise InvalidParams("tray dimensions must be positive")
        if wings not in ("flat", "round", "absent"):
            raise InvalidParams(f"unknown wing shape {wings!r}")
        parts = [
            _box_mesh(px, py, pz),
            # keel overlaps the plate underside; interpenetration keeps parity even
            _box_mesh(kx, ky, kz, center=(0, 0, -(kz / 2))),
        ]
        if wings != "absent":
            if wings == "round":
                wv, wf = _icosphere(wz, 2)
                wv = wv * np.array([wx / (2 * wz), wy / (2 * wz), 1.0])
            else:
                wv, wf = _box_mesh(wx, wy, wz)
            left = _transform(wv.copy(), offset=(-px / 2 + wx / 4, 0, -wz / 2))
            right = _transform(
                wv * np.array([asym, asym, 1.0]), offset=(px / 2 - wx / 4, 0, -wz / 2)
            )
            parts += [(left, wf), (right, wf.copy())]
        v, f = _merge(parts)
        return _finish(v, f, f"tray_{wings}")
    raise InvalidParams(f"unknown phantom kind {kind!r}")
