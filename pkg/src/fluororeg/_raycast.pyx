# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ray-cast kernel: Moller-Trumbore against a flattened BVH.

Hot inner loop of the renderer.  The pure-Python twin in _raycast_py.py
implements the same contract and is selected at import when this extension
is unavailable.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, INFINITY

DEF T_MIN = 1e-9
DEF MERGE_TOL = 1e-9
DEF MAX_HITS = 256
DEF STACK_SIZE = 128

MODE_ANYHIT = 0
MODE_CHORD = 1
MODE_COUNT = 2


cdef inline double _tri_t(const double* o, const double* d,
                          const double* v0, const double* e1,
                          const double* e2) nogil:
    """Ray/triangle intersection parameter, or -1 on miss."""
    cdef double hx = d[1] * e2[2] - d[2] * e2[1]
    cdef double hy = d[2] * e2[0] - d[0] * e2[2]
    cdef double hz = d[0] * e2[1] - d[1] * e2[0]
    cdef double a = e1[0] * hx + e1[1] * hy + e1[2] * hz
    if fabs(a) < 1e-14:
        return -1.0
    cdef double f = 1.0 / a
    cdef double sx = o[0] - v0[0]
    cdef double sy = o[1] - v0[1]
    cdef double sz = o[2] - v0[2]
    cdef double u = f * (sx * hx + sy * hy + sz * hz)
    if u < 0.0 or u > 1.0:
        return -1.0
    cdef double qx = sy * e1[2] - sz * e1[1]
    cdef double qy = sz * e1[0] - sx * e1[2]
    cdef double qz = sx * e1[1] - sy * e1[0]
    cdef double v = f * (d[0] * qx + d[1] * qy + d[2] * qz)
    if v < 0.0 or u + v > 1.0:
        return -1.0
    cdef double t = f * (e2[0] * qx + e2[1] * qy + e2[2] * qz)
    if t > T_MIN:
        return t
    return -1.0


cdef inline bint _aabb_hit(const double* o, const double* d, const double* bounds) nogil:
    cdef double tmin = -INFINITY
    cdef double tmax = INFINITY
    cdef double inv, t1, t2, tmp
    cdef int k
    for k in range(3):
        if d[k] == 0.0:
            if o[k] < bounds[k] or o[k] > bounds[3 + k]:
                return False
        else:
            inv = 1.0 / d[k]
            t1 = (bounds[k] - o[k]) * inv
            t2 = (bounds[3 + k] - o[k]) * inv
            if t1 > t2:
                tmp = t1; t1 = t2; t2 = tmp
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax:
                return False
    return tmax > T_MIN


cdef inline void _sort_hits(double* ts, int n) nogil:
    cdef int i, j
    cdef double key
    for i in range(1, n):
        key = ts[i]
        j = i - 1
        while j >= 0 and ts[j] > key:
            ts[j + 1] = ts[j]
            j -= 1
        ts[j + 1] = key


cdef inline int _merge_hits(double* ts, int n) nogil:
    """Collapse sorted parameters closer than MERGE_TOL (edge-adjacent dupes)."""
    if n < 2:
        return n
    cdef int out = 1
    cdef int i
    for i in range(1, n):
        if ts[i] - ts[out - 1] >= MERGE_TOL:
            ts[out] = ts[i]
            out += 1
    return out


def cast(double[::1] origin, double[:, ::1] dirs,
         double[:, ::1] v0, double[:, ::1] e1, double[:, ::1] e2,
         node_bounds, node_meta, int mode):
    """Cast rays from a common origin; returns per-ray result for `mode`.

    node_bounds (n, 6) / node_meta (n, 4: left, right, start, count) describe
    the flattened BVH over reordered triangles; pass None for both to use a
    linear all-triangles sweep (the acceleration-structure-free oracle).
    """
    cdef Py_ssize_t nrays = dirs.shape[0]
    cdef Py_ssize_t ntris = v0.shape[0]
    cdef bint use_bvh = node_bounds is not None
    cdef double[:, ::1] nb
    cdef int[:, ::1] nm
    if use_bvh:
        nb = node_bounds
        nm = node_meta
    else:
        nb = np.zeros((1, 6))
        nm = np.zeros((1, 4), dtype=np.int32)

    cdef cnp.ndarray out_any = None
    cdef cnp.ndarray out_f = None
    cdef cnp.ndarray out_i = None
    cdef cnp.uint8_t[::1] ra
    cdef double[::1] rf
    cdef int[::1] ri
    if mode == 0:
        out_any = np.zeros(nrays, dtype=np.uint8)
        ra = out_any
    elif mode == 1:
        out_f = np.zeros(nrays, dtype=np.float64)
        rf = out_f
    else:
        out_i = np.zeros(nrays, dtype=np.int32)
        ri = out_i

    cdef double hits[MAX_HITS]
    cdef int stack[STACK_SIZE]
    cdef Py_ssize_t r, j
    cdef int nhit, sp, node, left, right, start, count, k
    cdef double t, chord
    cdef const double* o = &origin[0]
    cdef const double* d

    with nogil:
        for r in range(nrays):
            d = &dirs[r, 0]
            nhit = 0
            if use_bvh:
                sp = 0
                stack[sp] = 0
                sp += 1
                while sp > 0:
                    sp -= 1
                    node = stack[sp]
                    if not _aabb_hit(o, d, &nb[node, 0]):
                        continue
                    count = nm[node, 3]
                    if count > 0:
                        start = nm[node, 2]
                        for k in range(start, start + count):
                            t = _tri_t(o, d, &v0[k, 0], &e1[k, 0], &e2[k, 0])
                            if t > 0.0:
                                if mode == 0:
                                    nhit = 1
                                    break
                                if nhit < MAX_HITS:
                                    hits[nhit] = t
                                    nhit += 1
                        if mode == 0 and nhit:
                            break
                    else:
                        stack[sp] = nm[node, 0]
                        stack[sp + 1] = nm[node, 1]
                        sp += 2
            else:
                for j in range(ntris):
                    t = _tri_t(o, d, &v0[j, 0], &e1[j, 0], &e2[j, 0])
                    if t > 0.0:
                        if mode == 0:
                            nhit = 1
                            break
                        if nhit < MAX_HITS:
                            hits[nhit] = t
                            nhit += 1
            if mode == 0:
                ra[r] = 1 if nhit else 0
                continue
            _sort_hits(hits, nhit)
            nhit = _merge_hits(hits, nhit)
            if mode == 2:
                ri[r] = nhit
            else:
                chord = 0.0
                k = 0
                while k + 1 < nhit:
                    chord += hits[k + 1] - hits[k]
                    k += 2
                rf[r] = chord

    if mode == 0:
        return out_any
    if mode == 1:
        return out_f
    return out_i
