"""Node and edge feature tables for the edge-scoring network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..lbo import LboValues, lbo_values
from ..mesh.trimesh import TriMesh

RATIO_CAP = 1e6

NODE_COLUMNS = ("size", "vertex_lbo")
EDGE_COLUMNS = (
    "edge_lbo",
    "dihedral",
    "inner_angle_1",
    "inner_angle_2",
    "length_height_1",
    "length_height_2",
    "global_ratio",
    "normal_angle",
)


# heavy-tailed columns (cotangent terms blow up on slivers) enter the
# network as sign(x) * log(1 + |x|) before standardization
NODE_LOG = np.array([c == "vertex_lbo" for c in NODE_COLUMNS])
EDGE_LOG = np.array([c in ("edge_lbo", "length_height_1", "length_height_2") for c in EDGE_COLUMNS])


def _compress(x, mask):
    out = np.array(x, dtype=np.float64)
    out[:, mask] = np.sign(out[:, mask]) * np.log1p(np.abs(out[:, mask]))
    return out


@dataclass(frozen=True)
class GraphFeatures:
    node: np.ndarray  # (N, 2)
    edge: np.ndarray  # (E, 8)
    edge_index: np.ndarray  # (E, 2) canonical, lexicographic

    @property
    def n_nodes(self) -> int:
        return len(self.node)

    @property
    def n_edges(self) -> int:
        return len(self.edge)

    def normalized(self, stats: "FeatureStats") -> "GraphFeatures":
        return GraphFeatures(node=(_compress(self.node, NODE_LOG) - stats.node_mean) / stats.node_std,
                             edge=(_compress(self.edge, EDGE_LOG) - stats.edge_mean) / stats.edge_std,
                             edge_index=self.edge_index)


@dataclass(frozen=True)
class FeatureStats:
    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray

    @classmethod
    def fit(cls, graphs) -> "FeatureStats":
        node = _compress(np.concatenate([g.node for g in graphs]), NODE_LOG)
        edge = _compress(np.concatenate([g.edge for g in graphs]), EDGE_LOG)

        def std(x):
            s = x.std(axis=0)
            return np.where(s > 1e-12, s, 1.0)

        return cls(node.mean(axis=0), std(node), edge.mean(axis=0), std(edge))

    @classmethod
    def identity(cls) -> "FeatureStats":
        return cls(np.zeros(2), np.ones(2), np.zeros(8), np.ones(8))


def _angle_between(a, b):
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.einsum("...k,...k->...", a, b)
    return np.arctan2(cross, dot)


def extract_features(mesh: TriMesh, sizes, lbo: LboValues | None = None) -> GraphFeatures:
    """Build the ``[size, vertex LBO]`` node table and the 8-column edge table.

    Edge columns follow :data:`EDGE_COLUMNS`.  The two faces of an edge are
    ordered by inner angle (smaller first), so the table does not depend
    on vertex numbering; on boundary edges the single face fills both
    slots.
    """
    if not (mesh.vertex_alive.all() and mesh.face_alive.all()):
        raise ValueError("extract_features needs a compact mesh")
    sizes = np.asarray(sizes, dtype=np.float64)
    lbo = lbo or lbo_values(mesh, sizes)
    p, faces = mesh.vertices, mesh.faces
    edges = lbo.edges
    n_e = len(edges)

    # half-edges a -> b with opposite corner c
    a = faces.ravel()
    b = faces[:, [1, 2, 0]].ravel()
    c = faces[:, [2, 0, 1]].ravel()
    f = np.repeat(np.arange(len(faces)), 3)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    eid = np.searchsorted(edges[:, 0] * (len(p) + 1) + edges[:, 1], lo * (len(p) + 1) + hi)
    slot = (a > b).astype(np.int64)

    face_of = np.full((n_e, 2), -1, dtype=np.int64)
    opp = np.full((n_e, 2), -1, dtype=np.int64)
    for s in (0, 1):
        m = slot == s
        face_of[eid[m], s] = f[m]
        opp[eid[m], s] = c[m]
    # inconsistent orientation: both half-edges landed in the same slot
    clash = np.flatnonzero(np.bincount(eid, minlength=n_e) != (face_of >= 0).sum(axis=1))
    for e in clash:
        hs = np.flatnonzero(eid == e)
        face_of[e] = f[hs][:2] if len(hs) > 1 else f[hs[0]]
        opp[e] = c[hs][:2] if len(hs) > 1 else c[hs[0]]
    for s in (0, 1):
        missing = face_of[:, s] < 0
        face_of[missing, s] = face_of[missing, 1 - s]
        opp[missing, s] = opp[missing, 1 - s]

    pu, pv = p[edges[:, 0]], p[edges[:, 1]]
    length = np.linalg.norm(pv - pu, axis=1)

    fn = np.cross(p[faces[:, 1]] - p[faces[:, 0]], p[faces[:, 2]] - p[faces[:, 0]])
    farea2 = np.linalg.norm(fn, axis=1)
    fn_unit = fn / np.maximum(farea2, 1e-300)[:, None]
    dihedral = _angle_between(fn_unit[face_of[:, 0]], fn_unit[face_of[:, 1]])

    inner = np.empty((n_e, 2))
    ratio = np.empty((n_e, 2))
    for s in (0, 1):
        pc = p[opp[:, s]]
        inner[:, s] = _angle_between(pu - pc, pv - pc)
        area2 = farea2[face_of[:, s]]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(area2 > 0, length ** 2 / area2, RATIO_CAP)
        ratio[:, s] = np.minimum(r, RATIO_CAP)
    swap = inner[:, 0] > inner[:, 1]
    inner[swap] = inner[swap][:, ::-1]
    ratio[swap] = ratio[swap][:, ::-1]

    vn = np.zeros_like(p)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    normal_angle = _angle_between(vn[edges[:, 0]], vn[edges[:, 1]])

    mean_len = length.mean() if n_e else 1.0
    edge = np.column_stack([lbo.edge, dihedral, inner[:, 0], inner[:, 1], ratio[:, 0], ratio[:, 1],
                            length / mean_len, normal_angle])
    node = np.column_stack([sizes, lbo.vertex])
    return GraphFeatures(node=node, edge=edge, edge_index=edges.copy())
