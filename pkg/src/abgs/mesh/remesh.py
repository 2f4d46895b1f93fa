"""Local post-collapse cleanup: Delaunay flips and tangential smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trimesh import TriMesh, cross3

DEFAULT_FEATURE_ANGLE = np.radians(30.0)
_EPS_ANGLE = 1e-12


@dataclass
class RemeshStats:
    flips: int = 0
    moves: int = 0
    rejected_flips: int = 0
    rejected_moves: int = 0


def _angle(p, q, r) -> float:
    """Angle at ``p`` in triangle ``pqr``."""
    a = q - p
    b = r - p
    c = cross3(a, b)
    return math.atan2(math.sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]),
                      a[0] * b[0] + a[1] * b[1] + a[2] * b[2])


def _unit(n):
    norm = np.linalg.norm(n)
    return n / norm if norm > 0 else n


def opposite_angle_sum(mesh: TriMesh, u: int, v: int) -> float | None:
    """Sum of the two angles opposite interior edge ``(u, v)``; ``None`` on the boundary."""
    fs = mesh.edge_faces(u, v)
    if len(fs) != 2:
        return None
    p = mesh.vertices
    total = 0.0
    for f in fs:
        w = mesh.opposite_vertex(f, u, v)
        total += _angle(p[w], p[u], p[v])
    return total


def is_delaunay_violation(mesh: TriMesh, u: int, v: int) -> bool:
    s = opposite_angle_sum(mesh, u, v)
    return s is not None and s > np.pi + _EPS_ANGLE


def dihedral_angle(mesh: TriMesh, u: int, v: int) -> float:
    fs = mesh.edge_faces(u, v)
    if len(fs) != 2:
        return 0.0
    n1 = _unit(mesh.face_normal(fs[0]))
    n2 = _unit(mesh.face_normal(fs[1]))
    return float(np.arccos(np.clip(np.dot(n1, n2), -1.0, 1.0)))


def _star_edges(mesh: TriMesh, faces) -> set[tuple[int, int]]:
    out = set()
    for f in faces:
        a, b, c = (int(x) for x in mesh.faces[f])
        for x, y in ((a, b), (b, c), (c, a)):
            out.add((x, y) if x < y else (y, x))
    return out


def _violations(mesh: TriMesh, edges) -> int:
    return sum(is_delaunay_violation(mesh, u, v) for u, v in edges)


def region_violations(mesh: TriMesh, region_vertices: set[int]) -> int:
    """Delaunay violations among interior edges whose two faces lie in the region."""
    return _violations(mesh, _region_edges(mesh, region_vertices))


def _region_edges(mesh: TriMesh, region_vertices: set[int]) -> list[tuple[int, int]]:
    faces = set()
    for v in region_vertices:
        for f in mesh.vertex_faces(v):
            if all(int(w) in region_vertices for w in mesh.faces[f]):
                faces.add(f)
    edges = []
    for u, v in sorted(_star_edges(mesh, faces)):
        fs = mesh.edge_faces(u, v)
        if len(fs) == 2 and all(f in faces for f in fs):
            edges.append((u, v))
    return edges


def try_flip(mesh: TriMesh, u: int, v: int, feature_angle: float = DEFAULT_FEATURE_ANGLE,
             guard=None) -> bool:
    """Flip interior edge ``(u, v)`` if that is valid and reduces local violations.

    ``guard(tris)``, if given, may veto the two new triangles ``(2, 3, 3)``.
    """
    fs = mesh.edge_faces(u, v)
    if len(fs) != 2:
        return False
    f1, f2 = fs
    t1 = [int(x) for x in mesh.faces[f1]]
    # orient so that f1 holds the directed edge u -> v
    i = t1.index(u)
    if t1[(i + 1) % 3] != v:
        f1, f2 = f2, f1
        t1 = [int(x) for x in mesh.faces[f1]]
    a = mesh.opposite_vertex(f1, u, v)
    b = mesh.opposite_vertex(f2, u, v)
    if a == b or mesh.has_edge(a, b):
        return False
    if dihedral_angle(mesh, u, v) > feature_angle:
        return False

    p = mesh.vertices
    n_old = _unit(mesh.face_normal(f1)) + _unit(mesh.face_normal(f2))
    new1, new2 = (u, b, a), (b, v, a)
    n1 = cross3(p[new1[1]] - p[new1[0]], p[new1[2]] - p[new1[0]])
    n2 = cross3(p[new2[1]] - p[new2[0]], p[new2[2]] - p[new2[0]])
    if 0.5 * min(np.linalg.norm(n1), np.linalg.norm(n2)) <= mesh.tol.area:
        return False
    if np.dot(n1, n_old) <= 0 or np.dot(n2, n_old) <= 0:
        return False
    if np.dot(_unit(n1), _unit(n2)) < np.cos(feature_angle):
        return False
    if guard is not None and not guard(p[[new1, new2]]):
        return False

    local_before = {(min(x, y), max(x, y)) for x, y in ((u, a), (a, v), (v, b), (b, u))}
    before = _violations(mesh, local_before | {(min(u, v), max(u, v))})
    old1, old2 = mesh.faces[f1].copy(), mesh.faces[f2].copy()
    mesh._set_face(f1, new1)
    mesh._set_face(f2, new2)
    after = _violations(mesh, local_before | {(min(a, b), max(a, b))})
    if after >= before:
        mesh._set_face(f1, old1)
        mesh._set_face(f2, old2)
        return False
    return True


def _is_feature_vertex(mesh: TriMesh, v: int, feature_angle: float) -> bool:
    return any(dihedral_angle(mesh, v, w) > feature_angle for w in mesh.neighbors(v))


def _try_move(mesh: TriMesh, v: int, target, index, factor: float, guard=None) -> bool:
    p = mesh.vertices
    faces = sorted(mesh.vertex_faces(v))
    normals = np.array([mesh.face_normal(f) for f in faces])
    n = _unit(normals.sum(axis=0))
    step = factor * (target - p[v])
    step -= np.dot(step, n) * n
    moved = p[v] + step
    if index is not None:
        moved = index.nearest(moved[None, :]).closest[0]
    if np.array_equal(moved, p[v]):
        return False

    edges = _star_edges(mesh, faces)
    before = _violations(mesh, edges)
    old = p[v].copy()
    p[v] = moved
    ok = True
    for f, nb in zip(faces, normals):
        na = mesh.face_normal(f)
        if 0.5 * np.linalg.norm(na) <= mesh.tol.area or np.dot(na, nb) <= 0:
            ok = False
            break
    if ok and _violations(mesh, edges) > before:
        ok = False
    if ok and guard is not None and not guard(p[mesh.faces[faces]]):
        ok = False
    if not ok:
        p[v] = old
    return ok


def local_remesh(mesh: TriMesh, region, surface=None, iterations: int = 3,
                 smooth_factor: float = 0.5, feature_angle: float = DEFAULT_FEATURE_ANGLE,
                 max_flip_passes: int = 10, guard=None) -> RemeshStats:
    """Improve the faces in ``region`` in place.

    Each iteration runs guarded Delaunay flips (an interior edge is flipped
    when its opposite angles sum past pi) followed by one uniform-weight
    tangential smoothing sweep over the region's interior vertices, each
    moved vertex being reprojected onto ``surface``.  Any flip or move that
    would invert a face, cross a feature edge, or add a Delaunay violation
    is skipped.

    Parameters
    ----------
    region : iterable of face ids
    surface : object with a ``nearest(points)`` method or an ``index``
        attribute holding one (e.g. a sizing field); ``None`` disables
        reprojection.
    guard : callable, optional
        ``guard(tris)`` receives the triangles ``(k, 3, 3)`` a flip or move
        would produce and returns False to veto it.
    """
    stats = RemeshStats()
    index = getattr(surface, "index", surface)
    region_vertices = set()
    for f in region:
        if mesh.face_alive[f]:
            region_vertices.update(int(x) for x in mesh.faces[f])
    if not region_vertices:
        return stats
    boundary = {v for v in region_vertices if mesh.is_boundary_vertex(v)}

    for _ in range(iterations):
        for _ in range(max_flip_passes):
            flipped = 0
            for u, v in _region_edges(mesh, region_vertices):
                if not mesh.has_edge(u, v) or not is_delaunay_violation(mesh, u, v):
                    continue
                if try_flip(mesh, u, v, feature_angle, guard):
                    flipped += 1
                else:
                    stats.rejected_flips += 1
            stats.flips += flipped
            if not flipped:
                break

        for v in sorted(region_vertices - boundary):
            if _is_feature_vertex(mesh, v, feature_angle):
                continue
            nbrs = sorted(mesh.neighbors(v))
            target = mesh.vertices[nbrs].mean(axis=0)
            if _try_move(mesh, v, target, index, smooth_factor, guard):
                stats.moves += 1
            else:
                stats.rejected_moves += 1
    return stats
