"""Ray-cast projection of triangle meshes through the point-source camera.

Silhouette mode marks any-hit pixels; thickness mode integrates the inside
chord length of each ray through a watertight mesh and maps it through
1 - exp(-mu * t).  A median-split BVH accelerates intersection; the
brute-force linear sweep over all triangles is kept as the correctness
oracle (use_bvh=False) and must produce bit-identical images.

The per-ray kernel is a compiled extension when available, with a numpy
fallback selected at import (FLUOROREG_FORCE_FALLBACK=1 forces the latter).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, RigidPose, matrix_from_quat
from .imaging import gaussian_blur, gaussian_kernel
from .mesh import TriMesh
from scipy import ndimage

if os.environ.get("FLUOROREG_FORCE_FALLBACK"):
    from . import _raycast_py as _kernel

    USING_COMPILED_KERNEL = False
else:
    try:
        from . import _raycast as _kernel  # type: ignore[attr-defined]

        USING_COMPILED_KERNEL = True
    except ImportError:
        from . import _raycast_py as _kernel

        USING_COMPILED_KERNEL = False

MODE_ANYHIT = 0
MODE_CHORD = 1
MODE_COUNT = 2


class RenderError(ValueError):
    pass


class NotWatertight(RenderError):
    pass


@dataclass
class RenderConfig:
    mode: str = "silhouette"  # silhouette | thickness
    mu: float = 0.05  # 1/mm, thickness mode
    blur_sigma: float = 1.0  # px, at output resolution
    supersample: int = 1  # 1 | 2 per axis
    downscale: int = 1

    def __post_init__(self):
        if self.mode not in ("silhouette", "thickness"):
            raise RenderError(f"unknown render mode {self.mode!r}")
        if self.mode == "thickness" and self.mu <= 0:
            raise RenderError("mu must be positive in thickness mode")
        if self.supersample not in (1, 2):
            raise RenderError("supersample must be 1 or 2")
        if self.downscale < 1:
            raise RenderError("downscale must be >= 1")


@dataclass
class BVH:
    bounds: np.ndarray  # (n, 6) min xyz, max xyz
    meta: np.ndarray  # (n, 4) int32: left, right, start, count
    v0: np.ndarray  # reordered triangle data
    e1: np.ndarray
    e2: np.ndarray


_LEAF_SIZE = 4


def build_bvh(mesh: TriMesh) -> BVH:
    """Median-split BVH, leaf <= 4 triangles, flattened to arrays."""
    v = mesh.vertices
    f = mesh.faces
    tv0 = v[f[:, 0]]
    tv1 = v[f[:, 1]]
    tv2 = v[f[:, 2]]
    tmin = np.minimum(np.minimum(tv0, tv1), tv2)
    tmax = np.maximum(np.maximum(tv0, tv1), tv2)
    cent = (tmin + tmax) * 0.5
    order = np.arange(len(f))
    bounds = []
    meta = []

    def add_node():
        bounds.append(np.zeros(6))
        meta.append([0, 0, 0, 0])
        return len(meta) - 1

    root = add_node()
    stack = [(root, 0, len(f))]
    while stack:
        node, lo, hi = stack.pop()
        idx = order[lo:hi]
        bounds[node][:3] = tmin[idx].min(axis=0)
        bounds[node][3:] = tmax[idx].max(axis=0)
        if hi - lo <= _LEAF_SIZE:
            meta[node][2] = lo
            meta[node][3] = hi - lo
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (hi - lo) // 2
        part = np.argpartition(c[:, axis], mid)
        order[lo:hi] = idx[part]
        left = add_node()
        right = add_node()
        meta[node][0] = left
        meta[node][1] = right
        stack.append((left, lo, lo + mid))
        stack.append((right, lo + mid, hi))

    ordered = order
    return BVH(
        bounds=np.ascontiguousarray(bounds, dtype=np.float64),
        meta=np.ascontiguousarray(meta, dtype=np.int32),
        v0=np.ascontiguousarray(tv0[ordered]),
        e1=np.ascontiguousarray((tv1 - tv0)[ordered]),
        e2=np.ascontiguousarray((tv2 - tv0)[ordered]),
    )


_BVH_CACHE: dict[int, tuple[TriMesh, BVH]] = {}


def _bvh_for(mesh: TriMesh) -> BVH:
    entry = _BVH_CACHE.get(id(mesh))
    if entry is not None and entry[0] is mesh:
        return entry[1]
    bvh = build_bvh(mesh)
    if len(_BVH_CACHE) > 8:
        _BVH_CACHE.clear()
    _BVH_CACHE[id(mesh)] = (mesh, bvh)
    return bvh


def _triangle_soup(mesh: TriMesh):
    v = mesh.vertices
    f = mesh.faces
    tv0 = np.ascontiguousarray(v[f[:, 0]])
    return (
        tv0,
        np.ascontiguousarray(v[f[:, 1]] - tv0),
        np.ascontiguousarray(v[f[:, 2]] - tv0),
    )


def cast_rays(mesh: TriMesh, origin: np.ndarray, dirs: np.ndarray, mode: int, use_bvh: bool = True):
    """Low-level ray cast in mesh coordinates; dirs should be unit-norm for
    chord lengths in mm."""
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    if use_bvh:
        bvh = _bvh_for(mesh)
        return _kernel.cast(origin, dirs, bvh.v0, bvh.e1, bvh.e2, bvh.bounds, bvh.meta, mode)
    v0, e1, e2 = _triangle_soup(mesh)
    return _kernel.cast(origin, dirs, v0, e1, e2, None, None, mode)


def count_hits(mesh: TriMesh, origin, dirs, use_bvh: bool = True) -> np.ndarray:
    """Merged intersection count per ray (parity diagnostics)."""
    return cast_rays(mesh, origin, dirs, MODE_COUNT, use_bvh=use_bvh)


def _project_points(cam: CameraModel, pts: np.ndarray) -> np.ndarray | None:
    """Vectorized projection to pixel coords; None when any point is at or
    behind the source plane (caller falls back to a full-frame render)."""
    d = pts - cam.source
    n = cam.normal()
    denom = d @ n
    num = float((cam.detector_origin - cam.source) @ n)
    if np.any(np.abs(denom) < 1e-12):
        return None
    s = num / denom
    if np.any(s <= 0):
        return None
    hit = cam.source + s[:, None] * d
    rel = hit - cam.detector_origin
    return np.stack([rel @ cam.detector_u, rel @ cam.detector_v], axis=1) / cam.pixel_pitch


def render(
    mesh: TriMesh,
    pose: RigidPose,
    cam: CameraModel,
    cfg: RenderConfig,
    use_bvh: bool = True,
) -> np.ndarray:
    """Render the posed mesh through the camera; output is camera
    resolution divided by cfg.downscale."""
    return render_ex(mesh, pose, cam, cfg, use_bvh=use_bvh)[0]


def render_ex(
    mesh: TriMesh,
    pose: RigidPose,
    cam: CameraModel,
    cfg: RenderConfig,
    use_bvh: bool = True,
):
    """render() plus the (x0, y0, x1, y1) region that may contain nonzero
    pixels, for sparse downstream similarity computation."""
    if cfg.mode == "thickness" and not mesh.watertight:
        raise NotWatertight(f"thickness render needs a watertight mesh ({mesh.name!r})")
    ds = cfg.downscale
    ow = cam.width // ds
    oh = cam.height // ds
    img = np.zeros((oh, ow))

    r = matrix_from_quat(pose.q)
    origin_mesh = r.T @ (cam.source - pose.t)

    # restrict ray casting to the projected bounding box of the mesh
    proj = _project_points(cam, pose_verts(mesh, pose))
    radius = math.ceil(3.0 * cfg.blur_sigma) if cfg.blur_sigma > 0 else 0
    margin = 2 + radius
    if proj is None:
        x0, y0, x1, y1 = 0, 0, ow, oh
    else:
        x0 = max(0, int(proj[:, 0].min() / ds) - margin)
        y0 = max(0, int(proj[:, 1].min() / ds) - margin)
        x1 = min(ow, int(proj[:, 0].max() / ds) + margin + 1)
        y1 = min(oh, int(proj[:, 1].max() / ds) + margin + 1)
        if x0 >= x1 or y0 >= y1:
            return img, (0, 0, 0, 0)  # fully outside the frame

    bw = x1 - x0
    bh = y1 - y0
    ss = cfg.supersample
    # sample positions in original (full-resolution) pixel coordinates
    offs = (np.arange(ss) + 0.5) * (ds / ss)
    px = (x0 + np.arange(bw))[:, None] * ds + offs[None, :]  # (bw, ss)
    py = (y0 + np.arange(bh))[:, None] * ds + offs[None, :]
    xs = np.broadcast_to(px[None, :, None, :, None], (bh, bw, ss, ss, 1))
    ys = np.broadcast_to(py[:, None, :, None, None], (bh, bw, ss, ss, 1))
    xy = np.concatenate([xs, ys], axis=-1).reshape(-1, 2)
    world = cam.pixel_center_world(xy)
    dirs = (world - cam.source) @ r  # rows: R^T @ dir
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    if cfg.mode == "silhouette":
        vals = cast_rays(mesh, origin_mesh, dirs, MODE_ANYHIT, use_bvh=use_bvh).astype(np.float64)
    else:
        chord = cast_rays(mesh, origin_mesh, dirs, MODE_CHORD, use_bvh=use_bvh)
        vals = 1.0 - np.exp(-cfg.mu * chord)
    block = vals.reshape(bh, bw, ss * ss).mean(axis=2)
    img[y0:y1, x0:x1] = block

    if cfg.blur_sigma > 0:
        interior = x0 - radius >= 0 and y0 - radius >= 0 and x1 + radius <= ow and y1 + radius <= oh
        if interior:
            sx0, sy0, sx1, sy1 = x0 - radius, y0 - radius, x1 + radius, y1 + radius
            k = gaussian_kernel(cfg.blur_sigma)
            sub = img[sy0:sy1, sx0:sx1]
            # region is zero-bordered, so constant padding equals the full blur
            sub = ndimage.correlate1d(sub, k, axis=0, mode="constant")
            sub = ndimage.correlate1d(sub, k, axis=1, mode="constant")
            img[sy0:sy1, sx0:sx1] = sub
            return img, (sx0, sy0, sx1, sy1)
        img = gaussian_blur(img, cfg.blur_sigma)
        return img, (0, 0, ow, oh)
    return img, (x0, y0, x1, y1)


def pose_verts(mesh: TriMesh, pose: RigidPose) -> np.ndarray:
    return mesh.vertices @ matrix_from_quat(pose.q).T + pose.t
