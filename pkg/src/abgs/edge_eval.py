"""Per-edge collapse evaluation and candidate selection.

Each candidate collapse is simulated on a scratch star around the merged
vertex.  Interior sample points of the new faces are compared against the
original dense grid: the size ratio between the coarse and target fields
and the distance between the coarse and target surfaces, measured both
ways.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .mesh.collapse import CollapseError, CollapsePlan, plan_collapse
from .mesh.distance import barycentric_lattice
from .mesh.trimesh import TriMesh, canonical_edge
from .sizing import SizingField

SAMPLE_MARGIN = 0.1


@dataclass(frozen=True)
class SelectionConfig:
    """Thresholds and weights for edge screening.

    ``t_dis=None`` resolves to ``1e-3`` of the target's bounding-box diagonal.
    """

    n_percent: float = 0.10
    t_size: float = 1.2
    t_dis: float | None = None
    w_s: float = 0.5
    w_d: float = 0.5

    def __post_init__(self):
        if not 0 < self.n_percent <= 1:
            raise ValueError(f"n_percent must lie in (0, 1], got {self.n_percent}")
        if not self.t_size > 1:
            raise ValueError(f"t_size must exceed 1, got {self.t_size}")
        if self.t_dis is not None and not self.t_dis > 0:
            raise ValueError(f"t_dis must be positive, got {self.t_dis}")
        if self.w_s < 0 or self.w_d < 0 or self.w_s + self.w_d == 0:
            raise ValueError("weights must be non-negative and not both zero")

    def resolved(self, target: SizingField) -> "SelectionConfig":
        if self.t_dis is not None:
            return self
        return replace(self, t_dis=1e-3 * target.mesh.bbox_diagonal())


@dataclass(frozen=True)
class EdgeEvaluation:
    edge: tuple[int, int]
    delta_s: float
    delta_d: float
    score: float
    collapsible: bool
    valid: bool = True


def size_ratio(s_data, s_target):
    """Symmetric size deviation ``max(a / b, b / a)``, elementwise."""
    s_data = np.asarray(s_data, dtype=np.float64)
    s_target = np.asarray(s_target, dtype=np.float64)
    return np.maximum(s_data / s_target, s_target / s_data)


def composite_score(delta_s: float, delta_d: float, config: SelectionConfig) -> float:
    """Both deviations normalized by their thresholds, weighted, clamped to [0, 1]."""
    raw = config.w_s * (delta_s - 1.0) / (config.t_size - 1.0) + config.w_d * delta_d / config.t_dis
    return float(min(max(raw, 0.0), 1.0))


def _invalid(edge) -> EdgeEvaluation:
    return EdgeEvaluation(edge=edge, delta_s=math.inf, delta_d=math.inf, score=1.0,
                          collapsible=False, valid=False)


def _segment_distance(p, a, b) -> float:
    ab = b - a
    den = float(np.dot(ab, ab))
    t = 0.0 if den == 0 else float(np.clip(np.dot(p - a, ab) / den, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _boundary_deviation(mesh: TriMesh, plan: CollapsePlan) -> float:
    """Distance from the old endpoints to the boundary polyline after a boundary collapse."""
    u, v = plan.edge
    p = mesh.vertices
    ends = {w for w in mesh.boundary_neighbors(u) + mesh.boundary_neighbors(v)} - {u, v}
    if not ends:
        return 0.0
    worst = 0.0
    for x in (u, v):
        if np.array_equal(p[x], plan.position):
            continue
        worst = max(worst, min(_segment_distance(p[x], plan.position, p[w]) for w in ends))
    return worst


def _scratch_samples(mesh: TriMesh, sizes, plan: CollapsePlan, lattice):
    """Sample points and interpolated sizes on the post-collapse star."""
    u, v = plan.edge
    s_new = (1.0 - plan.t) * sizes[u] + plan.t * sizes[v]
    tri = mesh.vertices[plan.star_triples]
    corner = np.asarray(sizes)[plan.star_triples].astype(np.float64)
    moved = plan.star_triples == plan.survivor
    tri[moved] = plan.position
    corner[moved] = s_new
    pts = np.einsum("sk,fkd->fsd", lattice, tri).reshape(-1, 3)
    s_data = (corner @ lattice.T).reshape(-1)
    return pts, s_data, tri


def deviation_guard(target: SizingField, limit: float, samples_per_face: int = 10):
    """Veto for remeshing: ``accept(tris)`` is False if the triangles ``(k, 3, 3)``
    stray farther than ``limit`` from the target, in either direction."""
    lattice = barycentric_lattice(samples_per_face)

    def accept(tris) -> bool:
        tris = np.asarray(tris, dtype=np.float64)
        pts = np.einsum("sk,fkd->fsd", lattice, tris).reshape(-1, 3)
        if target.index.nearest(pts).distance.max() > limit:
            return False
        corners = tris.reshape(-1, 3)
        center = corners.mean(axis=0)
        radius = float(np.sqrt(((corners - center) ** 2).sum(axis=1).max()))
        return target.covered_vertex_distance(tris, center, radius) <= limit

    return accept


def evaluate_plans(mesh: TriMesh, sizes, plans, target: SizingField, config: SelectionConfig,
                   samples_per_face: int = 6) -> list[EdgeEvaluation]:
    """Score already validated collapse plans on ``mesh`` (which may hold dead slots).

    ``config`` must be resolved.  All samples go to the target in one query.
    """
    lattice = barycentric_lattice(samples_per_face, SAMPLE_MARGIN)
    if not plans:
        return []
    chunks, s_chunks, reverse = [], [], []
    for plan in plans:
        pts, s_data, tri = _scratch_samples(mesh, sizes, plan, lattice)
        chunks.append(pts)
        s_chunks.append(s_data)
        radius = float(np.sqrt(((tri - plan.position) ** 2).sum(axis=2).max()))
        reverse.append(target.covered_vertex_distance(tri, plan.position, radius))
    hit = target.query(np.concatenate(chunks))
    ratio = size_ratio(np.concatenate(s_chunks), hit.size)
    bounds = np.cumsum([0] + [len(c) for c in chunks])
    out = []
    for k, plan in enumerate(plans):
        lo, hi = bounds[k], bounds[k + 1]
        delta_s = float(ratio[lo:hi].max())
        delta_d = max(float(hit.distance[lo:hi].max()), reverse[k])
        if plan.boundary:
            delta_d = max(delta_d, _boundary_deviation(mesh, plan))
        ok = delta_s < config.t_size and delta_d < config.t_dis
        out.append(EdgeEvaluation(edge=plan.edge, delta_s=delta_s, delta_d=delta_d,
                                  score=composite_score(delta_s, delta_d, config), collapsible=ok))
    return out


def evaluate_edges(edges, current: SizingField, target: SizingField, config: SelectionConfig | None = None,
                   samples_per_face: int = 6, placement: str = "midpoint",
                   snap: bool = True) -> list[EdgeEvaluation]:
    """Evaluate a batch of candidate collapses against the dense target grid.

    The current grid is never modified.  Topologically invalid collapses
    come back with ``valid=False`` and the worst score.  With ``snap`` the
    merged midpoint is moved onto the target surface first, as the
    coarsening loop does.
    """
    config = (config or SelectionConfig()).resolved(target)
    mesh = current.mesh
    snapper = target.closest_point if snap else None
    plans: list[CollapsePlan | None] = []
    for e in edges:
        try:
            plans.append(plan_collapse(mesh, e, placement, snap=snapper))
        except CollapseError:
            plans.append(None)
    scored = iter(evaluate_plans(mesh, current.sizes, [p for p in plans if p is not None], target, config,
                                 samples_per_face))
    return [next(scored) if plan is not None else _invalid(canonical_edge(*e)) for e, plan in zip(edges, plans)]


def evaluate_edge(edge, current: SizingField, target: SizingField, config: SelectionConfig | None = None,
                  samples_per_face: int = 6, placement: str = "midpoint", snap: bool = True) -> EdgeEvaluation:
    return evaluate_edges([edge], current, target, config, samples_per_face, placement, snap)[0]


def select_candidates(evals, config: SelectionConfig, mesh: TriMesh) -> list[tuple[int, int]]:
    """Collapsible edges, best first, cut to ``ceil(n_percent * |E|)`` and 1-ring filtered.

    An empty result means the adaptive loop should stop.
    """
    pool = [ev for ev in evals if ev.collapsible]
    pool.sort(key=lambda ev: (ev.score, ev.delta_d, ev.edge))
    pool = pool[: math.ceil(config.n_percent * mesh.n_edges)]
    return one_ring_filter([ev.edge for ev in pool])


def one_ring_filter(edges) -> list[tuple[int, int]]:
    """Greedily keep edges (in the given order) that share no vertex with a kept edge."""
    used: set[int] = set()
    kept = []
    for u, v in edges:
        if u in used or v in used:
            continue
        used.update((u, v))
        kept.append((u, v))
    return kept


def write_evaluations_csv(evals, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v", "delta_s", "delta_d", "score", "collapsible"])
        for ev in evals:
            w.writerow([ev.edge[0], ev.edge[1], repr(ev.delta_s), repr(ev.delta_d), repr(ev.score),
                        int(ev.collapsible)])


def read_evaluations_csv(path) -> list[EdgeEvaluation]:
    out = []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            ds, dd = float(row["delta_s"]), float(row["delta_d"])
            out.append(EdgeEvaluation(edge=(int(row["u"]), int(row["v"])), delta_s=ds, delta_d=dd,
                                      score=float(row["score"]), collapsible=bool(int(row["collapsible"])),
                                      valid=math.isfinite(ds)))
    return out
