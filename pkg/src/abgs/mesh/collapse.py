"""Edge collapse with link-condition and normal-flip guards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trimesh import MeshError, TriMesh, canonical_edge, cross3

PLACEMENTS = ("midpoint", "keep-first", "keep-second")

# boundary vertices turning more sharply than this are never moved or removed
DEFAULT_CORNER_ANGLE = np.radians(20.0)


class CollapseError(MeshError):
    """The requested edge cannot be collapsed; the mesh is left untouched."""

    def __init__(self, edge, reason: str):
        self.edge = edge
        self.reason = reason
        super().__init__(f"edge {edge} not collapsible: {reason}")


@dataclass(frozen=True)
class CollapsePlan:
    """A validated collapse that has not been applied yet."""

    edge: tuple[int, int]
    survivor: int
    removed: int
    position: np.ndarray
    removed_faces: tuple[int, ...]
    # faces kept after the collapse that touch the survivor, with their
    # post-collapse vertex triples
    star_faces: tuple[int, ...]
    star_triples: np.ndarray
    boundary: bool
    # new position = (1 - t) * p[u] + t * p[v] for the canonical edge (u, v)
    t: float


@dataclass(frozen=True)
class CollapseResult:
    surviving: int
    removed: int
    removed_faces: tuple[int, ...]
    affected_faces: tuple[int, ...]


def boundary_turning_angle(mesh: TriMesh, v: int) -> float:
    """Turning angle of the boundary polyline at ``v`` (``pi`` if irregular)."""
    nb = mesh.boundary_neighbors(v)
    if len(nb) != 2:
        return float(np.pi)
    p = mesh.vertices
    a = p[v] - p[nb[0]]
    b = p[nb[1]] - p[v]
    na, nb_ = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb_ == 0:
        return float(np.pi)
    return float(np.arccos(np.clip(np.dot(a, b) / (na * nb_), -1.0, 1.0)))


def plan_collapse(mesh: TriMesh, edge, placement: str = "midpoint",
                  corner_angle: float = DEFAULT_CORNER_ANGLE, snap=None) -> CollapsePlan:
    """Validate a collapse of ``edge`` without mutating ``mesh``.

    ``snap``, if given, maps a merged midpoint ``(3,)`` onto a reference
    surface before the geometric checks run.

    Raises
    ------
    CollapseError
        On link-condition violation, normal flip, degenerate output, or a
        collapse that would move the mesh boundary illegally.
    """
    if placement not in PLACEMENTS:
        raise ValueError(f"unknown placement {placement!r}")
    u, v = canonical_edge(*edge)
    key = (u, v)
    if not (mesh.vertex_alive[u] and mesh.vertex_alive[v]):
        raise CollapseError(key, "dead endpoint")
    shared = mesh.edge_faces(u, v)
    if len(shared) not in (1, 2):
        raise CollapseError(key, "edge does not exist")
    boundary_edge = len(shared) == 1

    bu = mesh.is_boundary_vertex(u)
    bv = mesh.is_boundary_vertex(v)
    if bu and bv and not boundary_edge:
        raise CollapseError(key, "interior edge joins two boundary vertices")

    nu = mesh.neighbors(u)
    nv = mesh.neighbors(v)
    opposite = {mesh.opposite_vertex(f, u, v) for f in shared}
    if (nu & nv) != opposite:
        raise CollapseError(key, "link condition violated")
    if boundary_edge and len(nu | nv) <= 3:
        raise CollapseError(key, "collapse would leave a degenerate component")

    p = mesh.vertices
    if bu or bv:
        # boundary edges collapse onto boundary vertices only; sharp corners stay put
        lock_u = bu and boundary_turning_angle(mesh, u) > corner_angle
        lock_v = bv and boundary_turning_angle(mesh, v) > corner_angle
        if boundary_edge:
            if lock_u and lock_v:
                raise CollapseError(key, "both endpoints are boundary corners")
            if lock_u:
                placement = "keep-first"
            elif lock_v:
                placement = "keep-second"
        else:
            placement = "keep-first" if bu else "keep-second"

    if placement == "keep-second":
        survivor, removed, t = v, u, 1.0
        position = p[v].copy()
    elif placement == "keep-first":
        survivor, removed, t = u, v, 0.0
        position = p[u].copy()
    else:
        survivor, removed, t = u, v, 0.5
        position = 0.5 * (p[u] + p[v])
        if snap is not None:
            position = np.asarray(snap(position), dtype=np.float64)

    star = sorted((mesh.vertex_faces(u) | mesh.vertex_faces(v)) - set(shared))
    triples = mesh.faces[star].copy()
    triples[triples == removed] = survivor

    keys = {tuple(sorted(t)) for t in triples.tolist()}
    if len(keys) != len(star):
        raise CollapseError(key, "collapse creates duplicate faces")

    for f, tri in zip(star, triples):
        before = mesh.face_normal(f)
        pts = [position if w == survivor else p[w] for w in tri]
        after = cross3(pts[1] - pts[0], pts[2] - pts[0])
        if 0.5 * np.linalg.norm(after) <= mesh.tol.area:
            raise CollapseError(key, "collapse creates a zero-area face")
        if np.dot(before, after) <= 0.0:
            raise CollapseError(key, "face normal flips by more than 90 degrees")

    return CollapsePlan(edge=key, survivor=survivor, removed=removed, position=position,
                        removed_faces=tuple(shared), star_faces=tuple(star),
                        star_triples=triples, boundary=boundary_edge, t=t)


def apply_collapse(mesh: TriMesh, plan: CollapsePlan) -> CollapseResult:
    s, r = plan.survivor, plan.removed
    for f in plan.removed_faces:
        mesh._kill_face(f)
    for f in list(mesh.vertex_faces(r)):
        mesh._replace_in_face(f, r, s)
    mesh.vertices[s] = plan.position
    mesh.vertex_alive[r] = False
    return CollapseResult(surviving=s, removed=r, removed_faces=plan.removed_faces,
                          affected_faces=tuple(sorted(mesh.vertex_faces(s))))


def edge_collapse(mesh: TriMesh, edge, placement: str = "midpoint",
                  corner_angle: float = DEFAULT_CORNER_ANGLE, snap=None) -> CollapseResult:
    """Merge the endpoints of ``edge`` into one vertex, in place."""
    return apply_collapse(mesh, plan_collapse(mesh, edge, placement, corner_angle, snap))


def can_collapse(mesh: TriMesh, edge, placement: str = "midpoint",
                 corner_angle: float = DEFAULT_CORNER_ANGLE, snap=None) -> bool:
    try:
        plan_collapse(mesh, edge, placement, corner_angle, snap)
    except CollapseError:
        return False
    return True
