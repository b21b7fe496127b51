"""Axis-aligned bounding volume hierarchy over mesh triangles.

Construction and traversal are compiled with numba; the ``Bvh`` object is
immutable once built and can be shared by readers.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .mesh import Mesh

_JIT = dict(cache=True, error_model="numpy", fastmath=False)
_STACK = 128


@njit(**_JIT)
def _build(tri_lo, tri_hi, centroids, leaf_size):
    n_tri = centroids.shape[0]
    order = np.arange(n_tri)
    cap = 2 * n_tri + 1
    lo = np.empty((cap, 3))
    hi = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_s = np.empty(cap, dtype=np.int64)
    stack_e = np.empty(cap, dtype=np.int64)
    sp = 0
    stack_node[0] = 0
    stack_s[0] = 0
    stack_e[0] = n_tri
    n_nodes = 1
    while sp >= 0:
        node = stack_node[sp]
        s = stack_s[sp]
        e = stack_e[sp]
        sp -= 1
        for a in range(3):
            lo[node, a] = np.inf
            hi[node, a] = -np.inf
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(s, e):
            t = order[k]
            for a in range(3):
                lo[node, a] = min(lo[node, a], tri_lo[t, a])
                hi[node, a] = max(hi[node, a], tri_hi[t, a])
                cmin[a] = min(cmin[a], centroids[t, a])
                cmax[a] = max(cmax[a], centroids[t, a])
        ext = cmax - cmin
        axis = np.argmax(ext)
        if e - s <= leaf_size or ext[axis] <= 0.0:
            start[node] = s
            count[node] = e - s
            continue
        sub = order[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = centroids[sub[k], axis]
        idx = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            order[s + k] = sub[idx[k]]
        mid = (s + e) // 2
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        left[node] = l_node
        right[node] = r_node
        sp += 1
        stack_node[sp] = r_node
        stack_s[sp] = mid
        stack_e[sp] = e
        sp += 1
        stack_node[sp] = l_node
        stack_s[sp] = s
        stack_e[sp] = mid
    return order, lo[:n_nodes], hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes]


@njit(inline="always", **_JIT)
def _tri_t(o, d, v0, e1, e2):
    """Moller-Trumbore; returns the ray parameter of the hit or inf."""
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if det == 0.0:
        return np.inf
    inv = 1.0 / det
    tx = o[0] - v0[0]
    ty = o[1] - v0[1]
    tz = o[2] - v0[2]
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    return (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv


@njit(inline="always", **_JIT)
def _box_hit(o, d, lo, hi, tmin, tmax):
    t0 = -np.inf
    t1 = np.inf
    for a in range(3):
        pad = 1e-9 * (1.0 + abs(lo[a]) + abs(hi[a]))
        blo = lo[a] - pad
        bhi = hi[a] + pad
        if d[a] == 0.0:
            if o[a] < blo or o[a] > bhi:
                return False
            continue
        ta = (blo - o[a]) / d[a]
        tb = (bhi - o[a]) / d[a]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    span = abs(tmin)
    if tmax < np.inf:
        span += abs(tmax)
    slack = 1e-9 * (1.0 + span)
    return t0 <= t1 + slack and t1 >= tmin - slack and t0 <= tmax + slack


@njit(**_JIT)
def _any_hit(o, d, tmin, tmax, lo, hi, left, right, start, count, v0, e1, e2):
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 0
    stack[0] = 0
    while sp >= 0:
        node = stack[sp]
        sp -= 1
        if not _box_hit(o, d, lo[node], hi[node], tmin, tmax):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                t = _tri_t(o, d, v0[i], e1[i], e2[i])
                if t > tmin and t < tmax:
                    return True
        else:
            sp += 1
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
    return False


@njit(**_JIT)
def _closest_hit(o, d, tmax, lo, hi, left, right, start, count, v0, e1, e2):
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 0
    stack[0] = 0
    best = tmax
    best_i = -1
    while sp >= 0:
        node = stack[sp]
        sp -= 1
        if not _box_hit(o, d, lo[node], hi[node], 0.0, best):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                t = _tri_t(o, d, v0[i], e1[i], e2[i])
                if t > 0.0 and t < best:
                    best = t
                    best_i = i
        else:
            sp += 1
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
    return best, best_i


@njit(**_JIT)
def _count_hits(o, d, lo, hi, left, right, start, count, v0, e1, e2):
    stack = np.empty(_STACK, dtype=np.int64)
    sp = 0
    stack[0] = 0
    n = 0
    while sp >= 0:
        node = stack[sp]
        sp -= 1
        if not _box_hit(o, d, lo[node], hi[node], 0.0, np.inf):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                t = _tri_t(o, d, v0[i], e1[i], e2[i])
                if t > 0.0 and t < np.inf:
                    n += 1
        else:
            sp += 1
            stack[sp] = right[node]
            sp += 1
            stack[sp] = left[node]
    return n


@njit(parallel=True, **_JIT)
def _occluded_batch(origins, targets, eps, lo, hi, left, right, start, count, v0, e1, e2):
    n = origins.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for k in prange(n):
        d = targets[k] - origins[k]
        length = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if length <= eps:
            continue
        out[k] = _any_hit(origins[k], d, 0.0, 1.0 - eps / length,
                          lo, hi, left, right, start, count, v0, e1, e2)
    return out


@njit(parallel=True, **_JIT)
def _closest_batch(origins, dirs, tmax, lo, hi, left, right, start, count, v0, e1, e2):
    n = origins.shape[0]
    t_out = np.empty(n)
    i_out = np.empty(n, dtype=np.int64)
    for k in prange(n):
        t, i = _closest_hit(origins[k], dirs[k], tmax, lo, hi, left, right, start, count, v0, e1, e2)
        t_out[k] = t
        i_out[k] = i
    return t_out, i_out


@njit(parallel=True, **_JIT)
def _count_batch(origins, dirs, lo, hi, left, right, start, count, v0, e1, e2):
    n = origins.shape[0]
    out = np.empty(n, dtype=np.int64)
    for k in prange(n):
        out[k] = _count_hits(origins[k], dirs[k], lo, hi, left, right, start, count, v0, e1, e2)
    return out


class Bvh:
    """Bounding-volume hierarchy over the triangles of a mesh.

    Nodes are stored as flat arrays. ``left[i] < 0`` marks a leaf that owns
    ``order[start[i]:start[i] + count[i]]`` (indices into the mesh triangles).
    """

    def __init__(self, mesh: Mesh, leaf_size: int = 4):
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        self.mesh = mesh
        self.leaf_size = int(leaf_size)
        corners = mesh.corners
        order, lo, hi, left, right, start, count = _build(
            corners.min(axis=1), corners.max(axis=1), corners.mean(axis=1), self.leaf_size)
        self.order = order
        self.lo, self.hi = lo, hi
        self.left, self.right = left, right
        self.start, self.count = start, count
        c = corners[order]
        self._v0 = np.ascontiguousarray(c[:, 0])
        self._e1 = np.ascontiguousarray(c[:, 1] - c[:, 0])
        self._e2 = np.ascontiguousarray(c[:, 2] - c[:, 0])
        for arr in (order, lo, hi, left, right, start, count, self._v0, self._e1, self._e2):
            arr.setflags(write=False)
        self.default_eps = 1e-3 * mesh.diagonal

    def __len__(self):
        return len(self.lo)

    @property
    def _nodes(self):
        return (self.lo, self.hi, self.left, self.right, self.start, self.count,
                self._v0, self._e1, self._e2)

    def occluded(self, origins, targets, eps: float | None = None) -> np.ndarray:
        """Vectorised segment test; see :meth:`is_occluded`."""
        origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
        targets = np.ascontiguousarray(np.atleast_2d(targets), dtype=np.float64)
        origins, targets = np.broadcast_arrays(origins, targets)
        eps = self.default_eps if eps is None else float(eps)
        return _occluded_batch(np.ascontiguousarray(origins), np.ascontiguousarray(targets),
                               eps, *self._nodes)

    def is_occluded(self, origin, target, eps: float | None = None) -> bool:
        """True when a triangle crosses the open segment origin->target.

        Hits closer than ``eps`` to ``target`` are ignored so a surface point
        does not shadow itself.
        """
        origin = np.asarray(origin, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if np.array_equal(origin, target):
            raise ValueError("origin and target coincide")
        return bool(self.occluded(origin[None], target[None], eps)[0])

    def closest_hits(self, origins, dirs, tmax: float = np.inf):
        """Nearest intersection along each ray.

        Returns:
            (t, triangle) where ``t`` is in units of ``dirs`` (inf on a miss)
            and ``triangle`` indexes the mesh triangles (-1 on a miss).
        """
        origins, dirs = np.broadcast_arrays(np.atleast_2d(np.asarray(origins, dtype=np.float64)),
                                            np.atleast_2d(np.asarray(dirs, dtype=np.float64)))
        t, i = _closest_batch(np.ascontiguousarray(origins), np.ascontiguousarray(dirs),
                              float(tmax), *self._nodes)
        tri = np.where(i >= 0, self.order[np.maximum(i, 0)], -1)
        return t, tri

    def count_hits(self, origins, dirs) -> np.ndarray:
        """Number of triangles crossed by each half-line (t > 0)."""
        origins, dirs = np.broadcast_arrays(np.atleast_2d(np.asarray(origins, dtype=np.float64)),
                                            np.atleast_2d(np.asarray(dirs, dtype=np.float64)))
        return _count_batch(np.ascontiguousarray(origins), np.ascontiguousarray(dirs), *self._nodes)

    def leaves(self):
        """Yield (node, triangle indices) for every leaf."""
        for node in np.flatnonzero(self.left < 0):
            s, c = self.start[node], self.count[node]
            yield node, self.order[s:s + c]
