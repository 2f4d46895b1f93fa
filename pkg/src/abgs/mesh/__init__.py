from .collapse import (
    CollapseError,
    CollapsePlan,
    CollapseResult,
    apply_collapse,
    can_collapse,
    edge_collapse,
    plan_collapse,
)
from .distance import barycentric_lattice, hausdorff_distance, point_mesh_distance, sample_faces
from .io import MeshFormatError, load_mesh, save_mesh, weld_vertices
from .remesh import local_remesh, region_violations
from .trimesh import MeshError, NonManifoldError, TriMesh, canonical_edge, face_edges

__all__ = [
    "CollapseError",
    "CollapsePlan",
    "CollapseResult",
    "MeshError",
    "MeshFormatError",
    "NonManifoldError",
    "TriMesh",
    "apply_collapse",
    "barycentric_lattice",
    "can_collapse",
    "canonical_edge",
    "edge_collapse",
    "face_edges",
    "hausdorff_distance",
    "load_mesh",
    "local_remesh",
    "plan_collapse",
    "point_mesh_distance",
    "region_violations",
    "sample_faces",
    "save_mesh",
    "weld_vertices",
]
