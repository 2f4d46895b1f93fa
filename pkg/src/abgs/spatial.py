"""Axis-aligned bounding volume hierarchy over triangles.

Supports exact nearest-face queries: for every query point the globally
closest triangle, the closest point on it, its barycentric coordinates and
the Euclidean distance are returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_STACK_DEPTH = 128


@dataclass(frozen=True)
class NearestFaces:
    """Result of a batched nearest-face query (one row per query point)."""

    face: np.ndarray  # (n,) int64
    distance: np.ndarray  # (n,) float64
    bary: np.ndarray  # (n, 3) float64, rows sum to 1
    closest: np.ndarray  # (n, 3) float64


@njit(cache=True)
def _closest_scalar(p0, p1, p2, a0, a1, a2, b0, b1, b2, c0, c1, c2):
    """Closest point on triangle ``abc`` to ``p`` as barycentric weights.

    Region classification follows the Voronoi-region walk of Ericson,
    *Real-Time Collision Detection*.  Returns ``(l0, l1, l2)`` with ``l0 + l1 + l2 == 1``.
    Takes scalars so the hot loops never build array views.
    """
    ab0 = b0 - a0
    ab1 = b1 - a1
    ab2 = b2 - a2
    ac0 = c0 - a0
    ac1 = c1 - a1
    ac2 = c2 - a2
    ap0 = p0 - a0
    ap1 = p1 - a1
    ap2 = p2 - a2
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        return 1.0, 0.0, 0.0

    bp0 = p0 - b0
    bp1 = p1 - b1
    bp2 = p2 - b2
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        return 0.0, 1.0, 0.0

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        den = d1 - d3
        v = d1 / den if den > 0.0 else 0.0
        return 1.0 - v, v, 0.0

    cp0 = p0 - c0
    cp1 = p1 - c1
    cp2 = p2 - c2
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        return 0.0, 0.0, 1.0

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        den = d2 - d6
        w = d2 / den if den > 0.0 else 0.0
        return 1.0 - w, 0.0, w

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / den if den > 0.0 else 0.0
        return 0.0, 1.0 - w, w

    den = va + vb + vc
    if den <= 0.0:
        # degenerate triangle: fall back to vertex a
        return 1.0, 0.0, 0.0
    v = vb / den
    w = vc / den
    return 1.0 - v - w, v, w


@njit(cache=True)
def closest_point_barycentric(p, a, b, c):
    """Array front end of :func:`_closest_scalar` for ``(3,)`` points."""
    return _closest_scalar(p[0], p[1], p[2], a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2])


@njit(cache=True)
def covered_distance(points, tri, eps):
    """Largest distance from ``points`` to the triangle set ``tri`` ``(m, 3, 3)``.

    A point counts only if the closest point on its nearest triangle lies
    strictly inside it (all barycentrics above ``eps``), i.e. the point sits
    over the patch rather than beside it.  Returns 0 if no point counts.
    """
    worst = 0.0
    for i in range(points.shape[0]):
        p = points[i]
        best = np.inf
        inside = False
        for j in range(tri.shape[0]):
            l0, l1, l2 = closest_point_barycentric(p, tri[j, 0], tri[j, 1], tri[j, 2])
            d2 = 0.0
            for k in range(3):
                q = l0 * tri[j, 0, k] + l1 * tri[j, 1, k] + l2 * tri[j, 2, k]
                d2 += (p[k] - q) * (p[k] - q)
            if d2 < best:
                best = d2
                inside = l0 > eps and l1 > eps and l2 > eps
        if inside and best > worst:
            worst = best
    return np.sqrt(worst)


@njit(cache=True)
def _box_dist2(p0, p1, p2, lo, hi, node):
    d = 0.0
    t = lo[node, 0] - p0
    if t > 0.0:
        d += t * t
    t = p0 - hi[node, 0]
    if t > 0.0:
        d += t * t
    t = lo[node, 1] - p1
    if t > 0.0:
        d += t * t
    t = p1 - hi[node, 1]
    if t > 0.0:
        d += t * t
    t = lo[node, 2] - p2
    if t > 0.0:
        d += t * t
    t = p2 - hi[node, 2]
    if t > 0.0:
        d += t * t
    return d


@njit(cache=True)
def _query(points, tri, lo, hi, left, right, start, count, order, out_face, out_d2, out_bary, out_pt):
    stack = np.empty(_STACK_DEPTH, dtype=np.int64)
    for i in range(points.shape[0]):
        p0 = points[i, 0]
        p1 = points[i, 1]
        p2 = points[i, 2]
        best = np.inf
        best_f = -1
        b0 = 1.0
        b1 = 0.0
        b2 = 0.0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if _box_dist2(p0, p1, p2, lo, hi, node) > best:
                continue
            if left[node] < 0:
                for j in range(start[node], start[node] + count[node]):
                    f = order[j]
                    l0, l1, l2 = _closest_scalar(p0, p1, p2,
                                                 tri[f, 0, 0], tri[f, 0, 1], tri[f, 0, 2],
                                                 tri[f, 1, 0], tri[f, 1, 1], tri[f, 1, 2],
                                                 tri[f, 2, 0], tri[f, 2, 1], tri[f, 2, 2])
                    q0 = l0 * tri[f, 0, 0] + l1 * tri[f, 1, 0] + l2 * tri[f, 2, 0]
                    q1 = l0 * tri[f, 0, 1] + l1 * tri[f, 1, 1] + l2 * tri[f, 2, 1]
                    q2 = l0 * tri[f, 0, 2] + l1 * tri[f, 1, 2] + l2 * tri[f, 2, 2]
                    d = (p0 - q0) ** 2 + (p1 - q1) ** 2 + (p2 - q2) ** 2
                    if d < best or (d == best and f < best_f):
                        best = d
                        best_f = f
                        b0 = l0
                        b1 = l1
                        b2 = l2
                continue
            l = left[node]
            r = right[node]
            dl = _box_dist2(p0, p1, p2, lo, hi, l)
            dr = _box_dist2(p0, p1, p2, lo, hi, r)
            # push the farther child first so the nearer one is popped next
            if dl <= dr:
                if dr <= best:
                    stack[top] = r
                    top += 1
                if dl <= best:
                    stack[top] = l
                    top += 1
            else:
                if dl <= best:
                    stack[top] = l
                    top += 1
                if dr <= best:
                    stack[top] = r
                    top += 1
        out_face[i] = best_f
        out_d2[i] = best
        out_bary[i, 0] = b0
        out_bary[i, 1] = b1
        out_bary[i, 2] = b2
        for k in range(3):
            out_pt[i, k] = b0 * tri[best_f, 0, k] + b1 * tri[best_f, 1, k] + b2 * tri[best_f, 2, k]


class FaceBVH:
    """Median-split AABB tree over the faces of a triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) array
    faces : (m, 3) int array
    leaf_size : int
        Maximum number of triangles stored in a leaf.
    """

    def __init__(self, vertices, faces, leaf_size: int = 4):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[0] == 0:
            raise ValueError("cannot index an empty mesh")
        self.tri = np.ascontiguousarray(vertices[faces])  # (m, 3, 3)
        self.n_faces = faces.shape[0]
        self._build(max(1, int(leaf_size)))

    def _build(self, leaf_size):
        tri_lo = self.tri.min(axis=1)
        tri_hi = self.tri.max(axis=1)
        centroid = self.tri.mean(axis=1)
        order = np.arange(self.n_faces, dtype=np.int64)

        cap = 2 * self.n_faces
        lo = np.empty((cap, 3))
        hi = np.empty((cap, 3))
        left = np.full(cap, -1, dtype=np.int64)
        right = np.full(cap, -1, dtype=np.int64)
        start = np.zeros(cap, dtype=np.int64)
        count = np.zeros(cap, dtype=np.int64)

        n_nodes = 1
        work = [(0, 0, self.n_faces, 0)]
        max_depth = 0
        while work:
            node, s, e, depth = work.pop()
            max_depth = max(max_depth, depth)
            idx = order[s:e]
            lo[node] = tri_lo[idx].min(axis=0)
            hi[node] = tri_hi[idx].max(axis=0)
            if e - s <= leaf_size:
                start[node] = s
                count[node] = e - s
                continue
            c = centroid[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (e - s) // 2
            part = np.argsort(c[:, axis], kind="stable")
            order[s:e] = idx[part]
            l, r = n_nodes, n_nodes + 1
            n_nodes += 2
            left[node] = l
            right[node] = r
            work.append((r, s + mid, e, depth + 1))
            work.append((l, s, s + mid, depth + 1))

        if max_depth + 2 > _STACK_DEPTH // 2:
            raise RuntimeError("BVH too deep for the traversal stack")
        self.lo = lo[:n_nodes].copy()
        self.hi = hi[:n_nodes].copy()
        self.left = left[:n_nodes].copy()
        self.right = right[:n_nodes].copy()
        self.start = start[:n_nodes].copy()
        self.count = count[:n_nodes].copy()
        self.order = order
        self.depth = max_depth

    def nearest(self, points) -> NearestFaces:
        """Exact nearest face for each row of ``points`` (shape ``(n, 3)``).

        Ties between equidistant faces resolve to the lowest face index.
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        n = pts.shape[0]
        face = np.empty(n, dtype=np.int64)
        d2 = np.empty(n)
        bary = np.empty((n, 3))
        closest = np.empty((n, 3))
        if n:
            _query(pts, self.tri, self.lo, self.hi, self.left, self.right, self.start,
                   self.count, self.order, face, d2, bary, closest)
        return NearestFaces(face=face, distance=np.sqrt(d2), bary=bary, closest=closest)
