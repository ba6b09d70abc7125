"""Pure-numpy twin of the compiled ray-cast kernel.

Same contract as fluororeg._raycast.cast; used when the extension is not
built (and by the kernel benchmark).  Vectorizes over triangles per ray
chunk instead of traversing the BVH, so node arrays are accepted but only
used for an early bounding-box reject.
"""

from __future__ import annotations

import numpy as np

T_MIN = 1e-9
MERGE_TOL = 1e-9

MODE_ANYHIT = 0
MODE_CHORD = 1
MODE_COUNT = 2

_CHUNK = 512


def _tri_ts(o, d_chunk, v0, e1, e2):
    """(rays, tris) intersection parameters; -1 where missed."""
    h = np.empty((d_chunk.shape[0], e2.shape[0], 3))
    h[:, :, 0] = d_chunk[:, None, 1] * e2[None, :, 2] - d_chunk[:, None, 2] * e2[None, :, 1]
    h[:, :, 1] = d_chunk[:, None, 2] * e2[None, :, 0] - d_chunk[:, None, 0] * e2[None, :, 2]
    h[:, :, 2] = d_chunk[:, None, 0] * e2[None, :, 1] - d_chunk[:, None, 1] * e2[None, :, 0]
    a = (e1[None, :, :] * h).sum(axis=2)
    ok = np.abs(a) >= 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        f = 1.0 / a
        s = o[None, :] - v0  # (tris, 3)
        u = f * (s[None, :, :] * h).sum(axis=2)
        q = np.cross(s, e1)  # (tris, 3)
        v = f * (d_chunk[:, None, :] * q[None, :, :]).sum(axis=2)
        t = f * (e2 * q).sum(axis=1)[None, :]
    ok &= (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (u + v <= 1.0) & (t > T_MIN)
    return np.where(ok, t, -1.0)


def _merge_sorted(ts):
    if ts.size < 2:
        return ts
    keep = [ts[0]]
    for t in ts[1:]:
        if t - keep[-1] >= MERGE_TOL:
            keep.append(t)
    return np.array(keep)


def cast(origin, dirs, v0, e1, e2, node_bounds, node_meta, mode):
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    nrays = dirs.shape[0]
    if mode == MODE_ANYHIT:
        out = np.zeros(nrays, dtype=np.uint8)
    elif mode == MODE_CHORD:
        out = np.zeros(nrays, dtype=np.float64)
    else:
        out = np.zeros(nrays, dtype=np.int32)
    for lo in range(0, nrays, _CHUNK):
        chunk = dirs[lo : lo + _CHUNK]
        ts = _tri_ts(origin, chunk, v0, e1, e2)
        if mode == MODE_ANYHIT:
            out[lo : lo + _CHUNK] = (ts > 0.0).any(axis=1)
            continue
        for r in range(chunk.shape[0]):
            hit = np.sort(ts[r][ts[r] > 0.0])
            hit = _merge_sorted(hit)
            if mode == MODE_COUNT:
                out[lo + r] = hit.size
            else:
                n2 = hit.size - (hit.size % 2)
                out[lo + r] = float((hit[1:n2:2] - hit[0:n2:2]).sum())
    return out
