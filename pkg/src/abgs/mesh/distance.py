"""Surface sampling and sampled Hausdorff distance between meshes."""

from __future__ import annotations

import numpy as np

from ..spatial import FaceBVH
from .trimesh import TriMesh


def barycentric_lattice(samples_per_face: int, margin: float = 0.0) -> np.ndarray:
    """Deterministic barycentric sample pattern.

    Uses the largest triangular lattice of order ``k`` with
    ``(k + 1)(k + 2) / 2 <= samples_per_face`` points (``k = 0`` is the
    centroid), shrunk so that every weight is at least ``margin``.

    Returns
    -------
    (s, 3) array whose rows sum to one.
    """
    n = int(samples_per_face)
    if n < 1:
        raise ValueError("samples_per_face must be >= 1")
    if not 0.0 <= margin < 1.0 / 3.0:
        raise ValueError("margin must lie in [0, 1/3)")
    k = 0
    while (k + 2) * (k + 3) // 2 <= n:
        k += 1
    if k == 0:
        return np.full((1, 3), 1.0 / 3.0)
    pts = np.array([(i, j, k - i - j) for i in range(k, -1, -1) for j in range(k - i, -1, -1)],
                   dtype=np.float64) / k
    return margin + (1.0 - 3.0 * margin) * pts


def sample_faces(vertices, faces, lattice: np.ndarray) -> np.ndarray:
    """Sample points, ``(len(faces) * len(lattice), 3)``, face-major order."""
    tri = np.asarray(vertices, dtype=np.float64)[np.asarray(faces, dtype=np.int64)]
    return np.einsum("sk,fkd->fsd", lattice, tri).reshape(-1, 3)


def point_mesh_distance(points, mesh: TriMesh, index: FaceBVH | None = None) -> np.ndarray:
    """Exact Euclidean distance from each point to the surface of ``mesh``."""
    if index is None:
        m, _ = mesh.compact()
        index = FaceBVH(m.vertices, m.faces)
    return index.nearest(points).distance


def hausdorff_distance(a: TriMesh, b: TriMesh, samples_per_face: int = 6,
                       index_a: FaceBVH | None = None, index_b: FaceBVH | None = None) -> float:
    """Symmetric sampled Hausdorff distance.

    Each mesh is sampled on a fixed barycentric lattice (face corners
    included) and every sample is projected exactly onto the other mesh.
    """
    ma, _ = a.compact()
    mb, _ = b.compact()
    if ma.n_faces == 0 or mb.n_faces == 0:
        raise ValueError("hausdorff_distance needs two non-empty meshes")
    if np.array_equal(ma.vertices, mb.vertices) and np.array_equal(ma.faces, mb.faces):
        # same surface; skip the projection so rounding cannot leave 1e-16
        return 0.0
    lattice = barycentric_lattice(samples_per_face)
    index_a = index_a or FaceBVH(ma.vertices, ma.faces)
    index_b = index_b or FaceBVH(mb.vertices, mb.faces)
    d_ab = index_b.nearest(sample_faces(ma.vertices, ma.faces, lattice)).distance.max()
    d_ba = index_a.nearest(sample_faces(mb.vertices, mb.faces, lattice)).distance.max()
    return float(max(d_ab, d_ba))
