"""Rigid transforms, projection camera model and dual-plane rig construction.

Conventions: camera A's detector center sits at the world origin with its
principal ray along -z and the vertical axis along +y; camera B is the same
assembly rotated about +y by the inter-plane angle.  Rotations are stored as
unit quaternions (w, x, y, z); translations are in millimetres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


class RayParallelToDetector(GeometryError):
    pass


class BehindSource(GeometryError):
    pass


class InvalidGeometry(GeometryError):
    pass


_QUAT_NORM_TOL = 1e-9


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise GeometryError("zero quaternion")
    # leave already-unit quaternions untouched so parse/format round trips
    # are bit-stable (renormalizing can shift the last ulp)
    if abs(n - 1.0) > 1e-12:
        q = q / n
    # canonical sign: w >= 0 keeps serialization stable
    if q[0] < 0.0:
        q = -q
    return q


@dataclass(frozen=True)
class RigidPose:
    """Element of SE(3): unit quaternion rotation + translation in mm."""

    q: np.ndarray  # (4,) w, x, y, z
    t: np.ndarray  # (3,) mm

    def __post_init__(self):
        object.__setattr__(self, "q", _normalize_quat(np.array(self.q, dtype=float)))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).copy())
        self.q.flags.writeable = False
        self.t.flags.writeable = False

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidPose":
        return RigidPose(quat_from_matrix(np.asarray(m, dtype=float)[:3, :3]), m[:3, 3])

    @staticmethod
    def from_axis_angle(axis_angle: np.ndarray, t=(0.0, 0.0, 0.0)) -> "RigidPose":
        return RigidPose(quat_from_axis_angle(np.asarray(axis_angle, dtype=float)), t)

    def rotation_matrix(self) -> np.ndarray:
        return matrix_from_quat(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.t
        return m


def quat_from_axis_angle(v: np.ndarray) -> np.ndarray:
    """Quaternion for a rotation of |v| radians about v/|v|."""
    theta = math.sqrt(float(v @ v))
    if theta < 1e-12:
        # first-order expansion is exact to round-off here
        return _normalize_quat(np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]))
    s = math.sin(0.5 * theta) / theta
    return np.array([math.cos(0.5 * theta), s * v[0], s * v[1], s * v[2]])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return _normalize_quat(q)


def matrix_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def pose_compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """a∘b: apply b first, then a."""
    return RigidPose(_quat_mul(a.q, b.q), pose_apply(a, b.t))


def pose_invert(a: RigidPose) -> RigidPose:
    qc = np.array([a.q[0], -a.q[1], -a.q[2], -a.q[3]])
    rt = matrix_from_quat(qc)
    return RigidPose(qc, -(rt @ a.t))


def pose_apply(p: RigidPose, x: np.ndarray) -> np.ndarray:
    """R·x + t; x may be (3,) or (n, 3)."""
    x = np.asarray(x, dtype=float)
    return x @ p.rotation_matrix().T + p.t


def geodesic_angle(a: RigidPose, b: RigidPose) -> float:
    """Shortest-path rotation angle between the two poses, in degrees.

    Equals arccos((trace(Ra^T Rb) - 1) / 2) but evaluated through the
    relative quaternion with atan2, which is stable near 0 and 180 degrees.
    """
    qa, qb = a.q, b.q
    # relative quaternion conj(qa) * qb
    w = qa[0] * qb[0] + qa[1] * qb[1] + qa[2] * qb[2] + qa[3] * qb[3]
    x = qa[0] * qb[1] - qa[1] * qb[0] - qa[2] * qb[3] + qa[3] * qb[2]
    y = qa[0] * qb[2] + qa[1] * qb[3] - qa[2] * qb[0] - qa[3] * qb[1]
    z = qa[0] * qb[3] - qa[1] * qb[2] + qa[2] * qb[1] - qa[3] * qb[0]
    return math.degrees(2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w)))


@dataclass(frozen=True)
class CameraModel:
    """Point X-ray source plus planar intensifier.

    detector_origin is the corner of pixel (0, 0); detector_u/detector_v are
    orthonormal in-plane directions; pixel centers sit at origin +
    (i + 0.5)·pitch·u + (j + 0.5)·pitch·v for pixel (i, j).
    """

    source: np.ndarray
    detector_origin: np.ndarray
    detector_u: np.ndarray
    detector_v: np.ndarray
    pixel_pitch: float
    width: int
    height: int
    sid: float

    def __post_init__(self):
        for name in ("source", "detector_origin", "detector_u", "detector_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).copy())
            getattr(self, name).flags.writeable = False
        u, v = self.detector_u, self.detector_v
        if abs(float(u @ v)) > 1e-12 or abs(float(u @ u) - 1) > 1e-9 or abs(float(v @ v) - 1) > 1e-9:
            raise InvalidGeometry("detector basis not orthonormal")
        n = self.normal()
        if abs(abs(float((self.source - self.detector_origin) @ n)) - self.sid) > 1e-9:
            raise InvalidGeometry("source-to-plane distance does not match sid")

    def normal(self) -> np.ndarray:
        return np.cross(self.detector_u, self.detector_v)

    def principal_ray(self) -> np.ndarray:
        """Unit direction from the source toward the detector plane."""
        n = self.normal()
        if float((self.detector_origin - self.source) @ n) < 0:
            n = -n
        return n

    def principal_point(self) -> np.ndarray:
        """Pixel coordinates of the orthogonal projection of the source."""
        d = self.detector_origin - self.source
        n = self.principal_ray()
        foot = self.source + self.sid * n
        rel = foot - self.detector_origin
        return np.array(
            [float(rel @ self.detector_u) / self.pixel_pitch, float(rel @ self.detector_v) / self.pixel_pitch]
        )

    def pixel_center_world(self, xy: np.ndarray) -> np.ndarray:
        """World position of continuous pixel coordinate(s) (x, y)."""
        xy = np.asarray(xy, dtype=float)
        return (
            self.detector_origin
            + np.multiply.outer(xy[..., 0] * self.pixel_pitch, self.detector_u)
            + np.multiply.outer(xy[..., 1] * self.pixel_pitch, self.detector_v)
        )


def project(cam: CameraModel, x: np.ndarray) -> np.ndarray:
    """Project a 3D point (mm) to continuous pixel coordinates."""
    x = np.asarray(x, dtype=float)
    d = x - cam.source
    n = cam.normal()
    denom = float(d @ n)
    if abs(denom) < 1e-12:
        raise RayParallelToDetector("ray orthogonal to detector normal")
    s = float((cam.detector_origin - cam.source) @ n) / denom
    if s <= 0.0:
        raise BehindSource("intersection parameter <= 0")
    hit = cam.source + s * d
    rel = hit - cam.detector_origin
    return np.array(
        [float(rel @ cam.detector_u) / cam.pixel_pitch, float(rel @ cam.detector_v) / cam.pixel_pitch]
    )


@dataclass(frozen=True)
class DualPlaneRig:
    camera_a: CameraModel
    camera_b: CameraModel
    inter_plane_angle: float  # degrees

    def __post_init__(self):
        got = math.degrees(
            math.acos(
                min(1.0, max(-1.0, float(self.camera_a.principal_ray() @ self.camera_b.principal_ray())))
            )
        )
        if abs(got - self.inter_plane_angle) > 1e-6:
            raise InvalidGeometry(
                f"principal rays meet at {got:.8f} deg, expected {self.inter_plane_angle}"
            )

    def cameras(self):
        return {"a": self.camera_a, "b": self.camera_b}


def _make_camera(sid: float, detector_mm: float, width: int, height: int) -> CameraModel:
    pitch = detector_mm / width
    # detector centered at origin in the x-y plane, source up the +z axis
    origin = np.array([-width * pitch / 2.0, -height * pitch / 2.0, 0.0])
    return CameraModel(
        source=np.array([0.0, 0.0, sid]),
        detector_origin=origin,
        detector_u=np.array([1.0, 0.0, 0.0]),
        detector_v=np.array([0.0, 1.0, 0.0]),
        pixel_pitch=pitch,
        width=width,
        height=height,
        sid=sid,
    )


def _rotate_camera(cam: CameraModel, r: np.ndarray) -> CameraModel:
    return CameraModel(
        source=r @ cam.source,
        detector_origin=r @ cam.detector_origin,
        detector_u=r @ cam.detector_u,
        detector_v=r @ cam.detector_v,
        pixel_pitch=cam.pixel_pitch,
        width=cam.width,
        height=cam.height,
        sid=cam.sid,
    )


def build_rig(
    angle_deg: float,
    sid_a: float,
    sid_b: float,
    detector_mm: float,
    width: int,
    height: int,
) -> DualPlaneRig:
    """Two cameras whose principal rays meet at angle_deg about the world y axis."""
    if not (0.0 < angle_deg < 180.0):
        raise InvalidGeometry(f"inter-plane angle must be in (0, 180), got {angle_deg}")
    if sid_a <= 0 or sid_b <= 0 or detector_mm <= 0 or width <= 0 or height <= 0:
        raise InvalidGeometry("rig dimensions must be positive")
    cam_a = _make_camera(sid_a, detector_mm, width, height)
    a = math.radians(angle_deg)
    ry = np.array(
        [
            [math.cos(a), 0.0, math.sin(a)],
            [0.0, 1.0, 0.0],
            [-math.sin(a), 0.0, math.cos(a)],
        ]
    )
    cam_b = _rotate_camera(_make_camera(sid_b, detector_mm, width, height), ry)
    return DualPlaneRig(camera_a=cam_a, camera_b=cam_b, inter_plane_angle=angle_deg)


def inplane_l1(estimate: RigidPose, truth: RigidPose, rig: DualPlaneRig) -> float:
    """Translation error within the detector planes, averaged over both planes.

    The translation difference is projected onto each camera's (u, v) basis;
    per plane the value is |Δt·u| + |Δt·v|.
    """
    dt = estimate.t - truth.t
    total = 0.0
    for cam in (rig.camera_a, rig.camera_b):
        total += abs(float(dt @ cam.detector_u)) + abs(float(dt @ cam.detector_v))
    return total / 2.0


def format_pose_line(p: RigidPose) -> str:
    """`qw qx qy qz tx ty tz`, 15 significant digits."""
    vals = list(p.q) + list(p.t)
    return " ".join(f"{v:.15g}" for v in vals)


def parse_pose_line(line: str) -> RigidPose:
    parts = line.split()
    if len(parts) != 7:
        raise GeometryError(f"pose line needs 7 fields, got {len(parts)}")
    vals = [float(s) for s in parts]
    return RigidPose(np.array(vals[:4]), np.array(vals[4:]))
