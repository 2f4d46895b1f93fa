"""Reading and writing OBJ and STL triangle meshes."""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .trimesh import MeshError, TriMesh, bbox_diagonal

logger = logging.getLogger(__name__)

FORMATS = ("obj", "stl-ascii", "stl-binary")


class MeshFormatError(MeshError):
    """File contents do not parse under the declared format."""


def detect_format(path) -> str:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return "obj"
    if suffix == ".stl":
        with open(path, "rb") as fh:
            head = fh.read(512)
        if head.lstrip().lower().startswith(b"solid"):
            size = path.stat().st_size
            if size >= 84:
                with open(path, "rb") as fh:
                    fh.seek(80)
                    (n,) = struct.unpack("<I", fh.read(4))
                if 84 + 50 * n == size:
                    return "stl-binary"
            return "stl-ascii"
        return "stl-binary"
    raise MeshFormatError(f"cannot infer mesh format from {path.name!r}")


def weld_vertices(points: np.ndarray, tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Merge points closer than ``tol``.

    Clusters are the connected components of the "closer than ``tol``"
    graph; each cluster is represented by its first point.  Output order
    follows first occurrence.

    Returns
    -------
    unique : (k, 3) array
    inverse : (n,) int array mapping input rows to rows of ``unique``
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if tol is None:
        tol = 1e-6 * bbox_diagonal(points)
    if n == 0:
        return points.reshape(0, 3), np.zeros(0, dtype=np.int64)
    pairs = cKDTree(points).query_pairs(r=tol, output_type="ndarray") if tol > 0 else np.zeros((0, 2), int)
    exact = _exact_duplicate_pairs(points)
    pairs = np.concatenate([pairs.reshape(-1, 2), exact])
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, label = connected_components(graph, directed=False)
    # relabel clusters in order of first occurrence
    _, first = np.unique(label, return_index=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    inverse = rank[label]
    unique = points[np.sort(first)]
    return unique, inverse.astype(np.int64)


def _exact_duplicate_pairs(points):
    _, inv = np.unique(points, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    same = inv[order[1:]] == inv[order[:-1]]
    return np.stack([order[:-1][same], order[1:][same]], axis=1)


def _triangles_to_mesh(tri: np.ndarray, weld_tol=None) -> TriMesh:
    if len(tri) == 0:
        raise MeshFormatError("file contains no triangles")
    verts, inv = weld_vertices(tri.reshape(-1, 3), weld_tol)
    faces = inv.reshape(-1, 3)
    degenerate = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    if degenerate.any():
        logger.warning("dropping %d triangles collapsed by welding", int(degenerate.sum()))
        faces = faces[~degenerate]
    return TriMesh(verts, faces)


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError("vertex needs three coordinates")
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    if len(idx) != 3:
                        raise ValueError(f"only triangles are supported, got {len(idx)}-gon")
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{lineno}: {exc}") from None
    if not faces:
        raise MeshFormatError(f"{path}: no faces")
    return TriMesh(np.array(verts), np.array(faces))


def read_stl_ascii(path, weld_tol=None) -> TriMesh:
    pts = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if parts and parts[0] == "vertex":
                try:
                    pts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex record") from None
    if len(pts) % 3:
        raise MeshFormatError(f"{path}: vertex count {len(pts)} is not a multiple of 3")
    return _triangles_to_mesh(np.array(pts, dtype=np.float64).reshape(-1, 3, 3), weld_tol)


_STL_RECORD = np.dtype([("normal", "<f4", 3), ("tri", "<f4", (3, 3)), ("attr", "<u2")])


def read_stl_binary(path, weld_tol=None) -> TriMesh:
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise MeshFormatError(f"{path}: truncated STL header")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * n:
        raise MeshFormatError(f"{path}: expected {n} triangles, file is truncated")
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=n, offset=84)
    return _triangles_to_mesh(rec["tri"].astype(np.float64), weld_tol)


def load_mesh(path, format: str | None = None) -> TriMesh:
    """Load a triangle mesh; STL input is welded at ``1e-6`` of the bbox diagonal."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fmt = format or detect_format(path)
    if fmt == "obj":
        return read_obj(path)
    if fmt == "stl-ascii":
        return read_stl_ascii(path)
    if fmt == "stl-binary":
        return read_stl_binary(path)
    raise ValueError(f"unknown mesh format {fmt!r}")


def save_mesh(mesh: TriMesh, path, format: str | None = None) -> None:
    """Write ``mesh`` (dead slots are dropped). Floats use 9 significant digits."""
    path = Path(path)
    m, _ = mesh.compact()
    if m.n_faces == 0:
        raise MeshError("refusing to write an empty mesh")
    fmt = format or ("obj" if path.suffix.lower() == ".obj" else "stl-binary")
    if fmt == "obj":
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in m.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in m.faces]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "stl-ascii":
        tri = m.vertices[m.faces]
        normals = m.face_normals()
        out = ["solid mesh"]
        for n, t in zip(normals, tri):
            out.append(f"  facet normal {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
            out.append("    outer loop")
            out.extend(f"      vertex {x:.9g} {y:.9g} {z:.9g}" for x, y, z in t)
            out.append("    endloop")
            out.append("  endfacet")
        out.append("endsolid mesh")
        path.write_text("\n".join(out) + "\n", encoding="utf-8")
    elif fmt == "stl-binary":
        rec = np.zeros(m.n_faces, dtype=_STL_RECORD)
        rec["normal"] = m.face_normals()
        rec["tri"] = m.vertices[m.faces]
        header = b"binary STL".ljust(80, b" ")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(struct.pack("<I", m.n_faces))
            fh.write(rec.tobytes())
    else:
        raise ValueError(f"unknown mesh format {fmt!r}")
