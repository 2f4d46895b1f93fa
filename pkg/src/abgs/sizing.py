"""Per-vertex sizing fields on triangular background grids.

A background grid carries one positive size per vertex; sizes at arbitrary
points are obtained by projecting onto the nearest face and interpolating
the corner sizes barycentrically.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .mesh.trimesh import MeshError, TriMesh, bbox_diagonal, face_edges
from .spatial import FaceBVH, covered_distance

logger = logging.getLogger(__name__)

BGM_VERSION = 1
# barycentric margin for a vertex to count as lying over a patch
COVER_EPS = 1e-9


class SizingError(ValueError):
    """Invalid sizes or sizing-field parameters."""


def check_sizes(sizes, n_vertices: int) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.shape != (n_vertices,):
        raise SizingError(f"expected {n_vertices} sizes, got shape {sizes.shape}")
    if not np.all(np.isfinite(sizes)) or np.any(sizes <= 0):
        raise SizingError("sizes must be finite and strictly positive")
    return sizes


@dataclass(frozen=True)
class QueryResult:
    """Batched size query; one row per point."""

    face: np.ndarray
    bary: np.ndarray
    distance: np.ndarray
    size: np.ndarray
    projected: np.ndarray


@dataclass(frozen=True, eq=False)
class SizingField:
    """A background grid with vertex sizes and a face index.

    ``mesh`` must be compact (no dead slots); use :meth:`from_mesh` to
    normalize an edited mesh.
    """

    mesh: TriMesh
    sizes: np.ndarray
    beta: float = 1.2

    def __post_init__(self):
        if self.beta < 1.0:
            raise SizingError(f"beta must be >= 1, got {self.beta}")
        if not (self.mesh.vertex_alive.all() and self.mesh.face_alive.all()):
            raise SizingError("SizingField needs a compact mesh")
        sizes = check_sizes(self.sizes, len(self.mesh.vertices)).copy()
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def from_mesh(cls, mesh: TriMesh, sizes, beta: float = 1.2) -> "SizingField":
        if mesh.vertex_alive.all() and mesh.face_alive.all():
            return cls(mesh, sizes, beta)
        m, remap = mesh.compact()
        keep = remap >= 0
        return cls(m, np.asarray(sizes)[keep], beta)

    @cached_property
    def index(self) -> FaceBVH:
        return build_index(self.mesh)

    def query(self, points) -> QueryResult:
        return query(self, points)

    def with_sizes(self, sizes) -> "SizingField":
        return SizingField(self.mesh, sizes, self.beta)

    @cached_property
    def vertex_tree(self) -> cKDTree:
        return cKDTree(self.mesh.vertices)

    def covered_vertex_distance(self, tris, center, radius) -> float:
        """Reverse deviation of a patch: largest distance from this grid's vertices
        within ``radius`` of ``center`` that sit over the triangles ``tris``."""
        idx = self.vertex_tree.query_ball_point(center, radius)
        if not idx:
            return 0.0
        return float(covered_distance(self.mesh.vertices[idx], np.ascontiguousarray(tris, dtype=np.float64),
                                      COVER_EPS))

    def closest_point(self, point) -> np.ndarray:
        """Closest point of the grid surface to a single ``(3,)`` point."""
        return self.index.nearest(np.asarray(point, dtype=np.float64)[None, :]).closest[0]


# -- initialization ------------------------------------------------------
def init_uniform(mesh: TriMesh, h0: float) -> np.ndarray:
    if not (np.isfinite(h0) and h0 > 0):
        raise SizingError(f"uniform size must be positive, got {h0}")
    return np.full(len(mesh.vertices), float(h0))


def _two_ring(mesh: TriMesh, v: int) -> list[int]:
    ring1 = mesh.neighbors(v)
    ring2 = set(ring1)
    for w in ring1:
        ring2 |= mesh.neighbors(w)
    ring2.discard(v)
    return sorted(ring2)


def principal_curvatures(mesh: TriMesh, v: int, normal=None) -> tuple[float, float] | None:
    """Principal curvatures at ``v`` from a quadric fit over its 2-ring.

    The 2-ring is expressed in a tangent frame and fitted in the least
    squares sense with ``z = a x^2 + b x y + c y^2 + d x + e y``; the
    curvatures are the eigenvalues of the shape operator of that patch at
    the origin.  Returns ``None`` when fewer than 5 neighbours exist.
    """
    ring = _two_ring(mesh, v)
    if len(ring) < 5:
        return None
    n = mesh.vertex_normals()[v] if normal is None else normal
    if not np.any(n):
        return None
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    d = mesh.vertices[ring] - mesh.vertices[v]
    x, y, z = d @ t1, d @ t2, d @ n
    A = np.column_stack([x * x, x * y, y * y, x, y])
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    a, b, c, dx, dy = coef
    E, F, G = 1 + dx * dx, dx * dy, 1 + dy * dy
    w = np.sqrt(1 + dx * dx + dy * dy)
    L, M, N = 2 * a / w, b / w, 2 * c / w
    first = np.array([[E, F], [F, G]])
    second = np.array([[L, M], [M, N]])
    k = np.linalg.eigvals(np.linalg.solve(first, second)).real
    return float(k.max()), float(k.min())


def _proximity_gap(mesh: TriMesh, layers: int) -> np.ndarray:
    """Distance to the nearest vertex that is far away along the surface.

    Vertices closer in space than a third of their graph distance are
    treated as lying on a separate, facing sheet.
    """
    edges = face_edges(mesh.faces)
    p = mesh.vertices
    w = np.linalg.norm(p[edges[:, 0]] - p[edges[:, 1]], axis=1)
    n = len(p)
    g = coo_matrix((np.r_[w, w], (np.r_[edges[:, 0], edges[:, 1]], np.r_[edges[:, 1], edges[:, 0]])),
                   shape=(n, n)).tocsr()
    tree = cKDTree(p)
    gap = np.full(n, np.inf)
    k = min(n, 32)
    dist, idx = tree.query(p, k=k)
    for v in range(n):
        geo = dijkstra(g, indices=v, limit=3.0 * dist[v, -1] + 1e-300)
        for d, j in zip(dist[v, 1:], idx[v, 1:]):
            if geo[j] > 3.0 * d:
                gap[v] = d / layers
                break
    return gap


def init_geometric(mesh: TriMesh, segments_per_circle: int, h_min: float, h_max: float,
                   proximity_layers: int | None = None, curvature_eps: float | None = None) -> np.ndarray:
    """Curvature-based sizes ``clamp(2 pi / (n_seg * kappa_max), h_min, h_max)``.

    ``kappa_max`` is the larger absolute principal curvature from a 2-ring
    quadric fit.  Vertices with fewer than 5 neighbours fall back to
    ``h_max`` with a warning.  ``proximity_layers`` enables an optional cap
    of ``gap / layers`` where ``gap`` is the distance to a facing sheet.
    """
    if segments_per_circle < 3:
        raise SizingError("segments_per_circle must be >= 3")
    if not (0 < h_min <= h_max):
        raise SizingError("need 0 < h_min <= h_max")
    if curvature_eps is None:
        curvature_eps = 1e-6 / max(mesh.bbox_diagonal(), 1e-300)
    normals = mesh.vertex_normals()
    sizes = np.full(len(mesh.vertices), float(h_max))
    degenerate = 0
    for v in range(len(mesh.vertices)):
        if not mesh.vertex_alive[v]:
            continue
        k = principal_curvatures(mesh, v, normals[v])
        if k is None:
            degenerate += 1
            continue
        kmax = max(abs(k[0]), abs(k[1]))
        if kmax >= curvature_eps:
            sizes[v] = 2 * np.pi / (segments_per_circle * kmax)
    if degenerate:
        warnings.warn(f"{degenerate} vertices have a degenerate 2-ring; using h_max there", stacklevel=2)
    if proximity_layers:
        sizes = np.minimum(sizes, _proximity_gap(mesh, proximity_layers))
    return np.clip(sizes, h_min, h_max)


# -- gradient limiting ---------------------------------------------------
def limit_gradient(vertices, edges, sizes, beta: float) -> np.ndarray:
    """Largest field ``H <= sizes`` with ``H(v) <= H(u) + beta * |uv|`` on every edge.

    Solved exactly as a multi-source shortest path: a virtual source is
    linked to each vertex with weight ``sizes[v]``, mesh edges weigh
    ``beta * length``.
    """
    if beta < 1.0:
        raise SizingError(f"beta must be >= 1, got {beta}")
    sizes = np.asarray(sizes, dtype=np.float64)
    vertices = np.asarray(vertices, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = len(sizes)
    w = beta * np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
    src = np.full(n, n)
    rows = np.concatenate([edges[:, 0], edges[:, 1], src])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    data = np.concatenate([w, w, sizes])
    graph = coo_matrix((data, (rows, cols)), shape=(n + 1, n + 1)).tocsr()
    out = dijkstra(graph, directed=True, indices=n)[:n]
    # never exceed the input, even by rounding
    return np.minimum(out, sizes)


def gradient_limit_smooth(field: SizingField) -> np.ndarray:
    """Gradient-limited copy of ``field.sizes`` (slope ``field.beta`` along edges)."""
    return limit_gradient(field.mesh.vertices, face_edges(field.mesh.faces), field.sizes, field.beta)


# -- queries -------------------------------------------------------------
def build_index(mesh: TriMesh) -> FaceBVH:
    m = mesh if mesh.face_alive.all() else mesh.compact()[0]
    if m.n_faces == 0:
        raise MeshError("cannot index an empty mesh")
    return FaceBVH(m.vertices, m.faces)


def query(field: SizingField, points) -> QueryResult:
    """Project ``points`` onto the grid and interpolate sizes."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    hit = field.index.nearest(pts)
    bary = np.clip(hit.bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    corner = field.sizes[field.mesh.faces[hit.face]]
    size = np.einsum("ij,ij->i", bary, corner)
    return QueryResult(face=hit.face, bary=bary, distance=hit.distance, size=size,
                       projected=hit.closest)


# -- .bgm files ----------------------------------------------------------
def save_bgm(field: SizingField, path) -> None:
    doc = {
        "version": BGM_VERSION,
        "beta": float(field.beta),
        "vertices": field.mesh.vertices.tolist(),
        "faces": field.mesh.faces.tolist(),
        "sizes": field.sizes.tolist(),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_bgm(path, validate: bool = True) -> SizingField:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SizingError(f"{path}: not a valid .bgm file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("version") != BGM_VERSION:
        raise SizingError(f"{path}: unsupported .bgm version {doc.get('version') if isinstance(doc, dict) else None}")
    for key in ("beta", "vertices", "faces", "sizes"):
        if key not in doc:
            raise SizingError(f"{path}: missing field {key!r}")
    mesh = TriMesh(np.array(doc["vertices"], dtype=np.float64).reshape(-1, 3),
                   np.array(doc["faces"], dtype=np.int64).reshape(-1, 3), validate=validate)
    return SizingField(mesh, np.array(doc["sizes"], dtype=np.float64), float(doc["beta"]))


def validate_field(field: SizingField) -> None:
    """Self-check run before a command writes a grid."""
    field.mesh.audit()
    check_sizes(field.sizes, len(field.mesh.vertices))


def field_element_proxy(field: SizingField, target: TriMesh) -> float:
    """Estimated element count ``sum(area / (sqrt(3)/4 * H^2))`` over ``target`` faces.

    ``H`` is this field's size at each target face centroid.  Stands in for
    the element count of a downstream surface mesher.
    """
    tm = target if target.face_alive.all() else target.compact()[0]
    centroids = tm.vertices[tm.faces].mean(axis=1)
    h = query(field, centroids).size
    return float(np.sum(tm.face_areas() / (np.sqrt(3) / 4 * h * h)))


__all__ = [
    "BGM_VERSION",
    "QueryResult",
    "SizingError",
    "SizingField",
    "bbox_diagonal",
    "build_index",
    "check_sizes",
    "field_element_proxy",
    "gradient_limit_smooth",
    "init_geometric",
    "init_uniform",
    "limit_gradient",
    "load_bgm",
    "principal_curvatures",
    "query",
    "save_bgm",
    "validate_field",
]
