"""Triangle surface mesh with incremental topology editing."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np


class MeshError(ValueError):
    """Raised for malformed or invalid meshes."""


class NonManifoldError(MeshError):
    """An edge is shared by three or more faces."""

    def __init__(self, edges):
        self.edges = [tuple(int(i) for i in e) for e in edges]
        shown = ", ".join(str(e) for e in self.edges[:10])
        more = "" if len(self.edges) <= 10 else f" (+{len(self.edges) - 10} more)"
        super().__init__(f"non-manifold edges: {shown}{more}")


def canonical_edge(u: int, v: int) -> tuple[int, int]:
    u, v = int(u), int(v)
    if u == v:
        raise MeshError(f"degenerate edge ({u}, {v})")
    return (u, v) if u < v else (v, u)


def face_edges(faces: np.ndarray) -> np.ndarray:
    """Sorted unique undirected edges of ``faces`` as an ``(E, 2)`` array."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors; much cheaper than ``np.cross`` on single rows."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def bbox_diagonal(vertices: np.ndarray) -> float:
    vertices = np.asarray(vertices, dtype=np.float64)
    if len(vertices) == 0:
        return 0.0
    return float(np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0)))


@dataclass(frozen=True)
class Tolerances:
    weld: float
    area: float

    @classmethod
    def for_vertices(cls, vertices) -> "Tolerances":
        diag = bbox_diagonal(vertices)
        return cls(weld=1e-6 * diag, area=1e-12 * diag * diag)


class TriMesh:
    """Triangle mesh supporting collapse and flip edits.

    Vertex and face slots are never renumbered while editing; removed
    elements are flagged dead and :meth:`compact` produces a densely
    indexed copy.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
    faces : array_like, shape (m, 3)
        Counter-clockwise vertex index triples.
    validate : bool
        Run :meth:`audit` on construction.
    """

    def __init__(self, vertices, faces, validate: bool = True):
        self.vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
        self.vertex_alive = np.ones(len(self.vertices), dtype=bool)
        self.face_alive = np.ones(len(self.faces), dtype=bool)
        self.tol = Tolerances.for_vertices(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face references an out-of-range vertex")
        self._vf: list[set[int]] = [set() for _ in range(len(self.vertices))]
        for f, tri in enumerate(self.faces):
            for v in tri:
                self._vf[v].add(f)
        if validate:
            self.audit()

    # -- counts -----------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return int(self.vertex_alive.sum())

    @property
    def n_faces(self) -> int:
        return int(self.face_alive.sum())

    @property
    def n_edges(self) -> int:
        return len(self.edges())

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    # -- adjacency --------------------------------------------------------
    def live_faces(self) -> np.ndarray:
        return self.faces[self.face_alive]

    def live_face_ids(self) -> np.ndarray:
        return np.flatnonzero(self.face_alive)

    def edges(self) -> np.ndarray:
        """Canonical ``(E, 2)`` edge array, lexicographically sorted."""
        return face_edges(self.live_faces())

    def vertex_faces(self, v: int) -> set[int]:
        return self._vf[v]

    def neighbors(self, v: int) -> set[int]:
        out = set()
        for f in self._vf[v]:
            out.update(int(x) for x in self.faces[f])
        out.discard(v)
        return out

    def edge_faces(self, u: int, v: int) -> list[int]:
        return sorted(self._vf[u] & self._vf[v])

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self._vf[u] & self._vf[v])

    def opposite_vertex(self, f: int, u: int, v: int) -> int:
        for w in self.faces[f]:
            if w != u and w != v:
                return int(w)
        raise MeshError(f"face {f} is degenerate")

    def is_boundary_edge(self, u: int, v: int) -> bool:
        return len(self._vf[u] & self._vf[v]) == 1

    def is_boundary_vertex(self, v: int) -> bool:
        return any(self.is_boundary_edge(v, w) for w in self.neighbors(v))

    def boundary_neighbors(self, v: int) -> list[int]:
        return sorted(w for w in self.neighbors(v) if self.is_boundary_edge(v, w))

    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        e = np.concatenate([self.live_faces()[:, [0, 1]], self.live_faces()[:, [1, 2]],
                            self.live_faces()[:, [2, 0]]])
        e.sort(axis=1)
        uniq, cnt = np.unique(e, axis=0, return_counts=True)
        mask[uniq[cnt == 1].ravel()] = True
        return mask

    # -- geometry ---------------------------------------------------------
    def face_normal(self, f: int, positions=None) -> np.ndarray:
        """Unnormalized normal (twice the area vector) of face ``f``."""
        p = self.vertices if positions is None else positions
        a, b, c = self.faces[f]
        return cross3(p[b] - p[a], p[c] - p[a])

    def face_normals(self, unit: bool = True) -> np.ndarray:
        tri = self.vertices[self.live_faces()]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        if unit:
            n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals (dead slots are zero)."""
        n = self.face_normals(unit=False)
        out = np.zeros_like(self.vertices)
        faces = self.live_faces()
        for k in range(3):
            np.add.at(out, faces[:, k], n)
        norm = np.linalg.norm(out, axis=1, keepdims=True)
        return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)

    def bbox_diagonal(self) -> float:
        return bbox_diagonal(self.vertices[self.vertex_alive])

    # -- editing support --------------------------------------------------
    def _replace_in_face(self, f: int, old: int, new: int) -> None:
        tri = self.faces[f]
        tri[tri == old] = new
        self._vf[old].discard(f)
        self._vf[new].add(f)

    def _kill_face(self, f: int) -> None:
        for v in self.faces[f]:
            self._vf[v].discard(f)
        self.face_alive[f] = False

    def _set_face(self, f: int, tri) -> None:
        for v in self.faces[f]:
            self._vf[v].discard(f)
        self.faces[f] = tri
        for v in tri:
            self._vf[int(v)].add(f)

    def copy(self) -> "TriMesh":
        out = TriMesh.__new__(TriMesh)
        out.vertices = self.vertices.copy()
        out.faces = self.faces.copy()
        out.vertex_alive = self.vertex_alive.copy()
        out.face_alive = self.face_alive.copy()
        out.tol = self.tol
        out._vf = [set(s) for s in self._vf]
        return out

    def compact(self) -> tuple["TriMesh", np.ndarray]:
        """Drop dead slots.

        Returns the new mesh and an ``old -> new`` vertex index map (``-1``
        for removed vertices).
        """
        used = self.vertex_alive.copy()
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(int(used.sum()))
        faces = remap[self.live_faces()]
        out = TriMesh(self.vertices[used], faces, validate=False)
        out.tol = self.tol
        return out, remap

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        h.update(self.vertex_alive.tobytes())
        h.update(self.face_alive.tobytes())
        return h.hexdigest()

    # -- validation -------------------------------------------------------
    def audit(self, check_fans: bool = True) -> None:
        """Full consistency check; raises :class:`MeshError` on violation."""
        faces = self.live_faces()
        ids = self.live_face_ids()
        if len(faces) and (faces.min() < 0 or faces.max() >= len(self.vertices)):
            raise MeshError("face references an out-of-range vertex")
        if np.any(~self.vertex_alive[faces.ravel()]):
            raise MeshError("live face references a dead vertex")
        bad = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if bad.any():
            raise MeshError(f"face {int(ids[np.argmax(bad)])} repeats a vertex")
        key = np.sort(faces, axis=1)
        _, first, cnt = np.unique(key, axis=0, return_index=True, return_counts=True)
        if np.any(cnt > 1):
            raise MeshError(f"duplicate face {int(ids[first[np.argmax(cnt > 1)]])}")
        area2 = np.linalg.norm(self.face_normals(unit=False), axis=1)
        if np.any(0.5 * area2 <= self.tol.area):
            raise MeshError(f"zero-area face {int(ids[np.argmax(0.5 * area2 <= self.tol.area)])}")

        e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        e.sort(axis=1)
        uniq, cnt = np.unique(e, axis=0, return_counts=True)
        if np.any(cnt > 2):
            raise NonManifoldError(uniq[cnt > 2])

        expect: dict[int, set[int]] = defaultdict(set)
        for f, tri in zip(ids, faces):
            for v in tri:
                expect[int(v)].add(int(f))
        for v in range(len(self.vertices)):
            if self._vf[v] != expect.get(v, set()):
                raise MeshError(f"vertex-face adjacency out of sync at vertex {v}")
            if self.vertex_alive[v] and not self._vf[v] and len(faces):
                raise MeshError(f"live vertex {v} has no incident faces")

        if check_fans:
            for v in np.unique(faces):
                if not self._is_single_fan(int(v)):
                    raise MeshError(f"vertex {int(v)} is non-manifold (disconnected fans)")

    def _is_single_fan(self, v: int) -> bool:
        fs = list(self._vf[v])
        if len(fs) <= 1:
            return True
        # faces around v connect when they share an edge through v
        by_nb: dict[int, list[int]] = defaultdict(list)
        for f in fs:
            for w in self.faces[f]:
                if w != v:
                    by_nb[int(w)].append(f)
        seen = {fs[0]}
        stack = [fs[0]]
        while stack:
            f = stack.pop()
            for w in self.faces[f]:
                if w == v:
                    continue
                for g in by_nb[int(w)]:
                    if g not in seen:
                        seen.add(g)
                        stack.append(g)
        return len(seen) == len(fs)
