"""Adaptive coarsening of a background grid, procedural and learned variants.

Both variants repeat: score edges, pick a 1-ring independent batch, collapse
it, clean up the touched faces, and re-read every vertex size from the
original dense grid (kept untouched as the geometric and size reference).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .edge_eval import (
    SelectionConfig,
    deviation_guard,
    evaluate_edges,
    evaluate_plans,
    one_ring_filter,
    select_candidates,
)
from .gcn.features import GraphFeatures, extract_features
from .gcn.model import GcnModel, predict
from .lbo import lbo_values, rank_edges
from .mesh.collapse import CollapseError, apply_collapse, can_collapse, plan_collapse
from .mesh.distance import hausdorff_distance
from .mesh.remesh import local_remesh
from .sizing import SizingField, field_element_proxy

log = logging.getLogger(__name__)

METHODS = ("lbo", "gcn")


@dataclass(frozen=True)
class LoopConfig:
    """Settings of the coarsening loop.

    ``t_score`` only gates the learned variant; ``pre_rank_fraction`` only
    the procedural one.  ``audit`` runs the full adjacency check after every
    iteration and ``track_hausdorff`` measures the distance to the original
    grid in every report row.
    """

    method: str = "lbo"
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    t_score: float = 0.5
    max_iterations: int = 100
    pre_rank_fraction: float = 0.25
    samples_per_face: int = 6
    remesh_iterations: int = 3
    placement: str = "midpoint"
    track_hausdorff: bool = True
    audit: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 < self.t_score < 1:
            raise ValueError(f"t_score must lie in (0, 1), got {self.t_score}")
        if not 0 < self.pre_rank_fraction <= 1:
            raise ValueError(f"pre_rank_fraction must lie in (0, 1], got {self.pre_rank_fraction}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.samples_per_face < 1:
            raise ValueError("samples_per_face must be at least 1")


@dataclass
class IterationReport:
    iteration: int
    collapsed: int
    vertices: int
    edges: int
    faces: int
    hausdorff: float
    element_proxy: float
    score_s: float = 0.0
    collapse_s: float = 0.0
    remesh_s: float = 0.0
    project_s: float = 0.0
    stop: str = ""

    @property
    def query_cells(self) -> int:
        return self.faces

    @property
    def seconds(self) -> float:
        return self.score_s + self.collapse_s + self.remesh_s + self.project_s


REPORT_COLUMNS = ("iteration", "collapsed", "vertices", "edges", "faces", "query_cells", "hausdorff",
                  "element_proxy", "score_s", "collapse_s", "remesh_s", "project_s", "simplify_s", "stop")


class _Fingerprint:
    """Guard that the reference grid is never edited by the loop."""

    def __init__(self, target: SizingField):
        self.target = target
        self.value = self._compute()

    def _compute(self):
        return self.target.mesh.fingerprint(), self.target.sizes.tobytes()

    def check(self):
        if self._compute() != self.value:
            raise RuntimeError("reference grid was modified during simplification")


def reproject(mesh, target: SizingField, beta: float) -> SizingField:
    """Compact ``mesh`` and give each vertex the target's size at its position."""
    m, _ = mesh.compact()
    return SizingField(m, target.query(m.vertices).size, beta)


def _lbo_candidates(current: SizingField, target: SizingField, cfg: LoopConfig, sel: SelectionConfig):
    rank = rank_edges(current.mesh, current.sizes)
    k = max(1, math.ceil(cfg.pre_rank_fraction * len(rank.edges)))
    pool = [tuple(int(x) for x in e) for e in rank.edges[:k]]
    evals = evaluate_edges(pool, current, target, sel, cfg.samples_per_face, cfg.placement)
    return select_candidates(evals, sel, current.mesh), ""


def predict_scores(model: GcnModel, field: SizingField) -> tuple[np.ndarray, np.ndarray]:
    """One network pass over ``field``: canonical edges and their scores."""
    feats = extract_features(field.mesh, field.sizes)
    return feats.edge_index, predict(model, feats)


def _gcn_candidates(current: SizingField, target: SizingField, model: GcnModel, cfg: LoopConfig,
                    sel: SelectionConfig):
    edges, scores = predict_scores(model, current)
    order = np.lexsort((np.arange(len(edges)), scores))
    if len(order) == 0 or scores[order[0]] > cfg.t_score:
        return [], "best score above t_score"
    quota = math.ceil(sel.n_percent * len(edges))
    mesh = current.mesh
    pool: list[tuple[int, int]] = []
    used: set[int] = set()
    # walk edges best-first, keeping topologically valid, vertex-disjoint ones
    for i in order:
        if scores[i] > cfg.t_score or len(pool) >= quota:
            break
        u, v = int(edges[i, 0]), int(edges[i, 1])
        if u in used or v in used or not can_collapse(mesh, (u, v), cfg.placement, snap=target.closest_point):
            continue
        pool.append((u, v))
        used.update((u, v))
    return one_ring_filter(pool), ("" if pool else "no valid candidate")


def _collapse_batch(current: SizingField, target: SizingField, batch, cfg: LoopConfig, sel: SelectionConfig):
    """Apply ``batch`` in order on a copy of the current grid.

    Every collapse is re-planned on the partly updated mesh.  The procedural
    variant also re-scores it there, since an earlier collapse in the batch
    may have reshaped its star.
    """
    mesh = current.mesh.copy()
    sizes = current.sizes.copy()
    survivors = []
    for e in batch:
        try:
            plan = plan_collapse(mesh, e, cfg.placement, snap=target.closest_point)
        except CollapseError as exc:
            log.debug("skipping %s: %s", e, exc.reason)
            continue
        if cfg.method == "lbo":
            ev = evaluate_plans(mesh, sizes, [plan], target, sel, cfg.samples_per_face)[0]
            if not ev.collapsible:
                log.debug("skipping %s: no longer within thresholds", e)
                continue
        s = apply_collapse(mesh, plan).surviving
        sizes[s] = target.query(plan.position).size[0]
        survivors.append(s)
    return mesh, survivors


def _run(initial: SizingField, cfg: LoopConfig, model: GcnModel | None, observer=None):
    target = initial
    fingerprint = _Fingerprint(target)
    sel = cfg.selection.resolved(target)
    guard = deviation_guard(target, sel.t_dis)
    current = initial
    reports: list[IterationReport] = []
    for it in range(1, cfg.max_iterations + 1):
        t0 = time.perf_counter()
        if cfg.method == "lbo":
            batch, why = _lbo_candidates(current, target, cfg, sel)
        else:
            batch, why = _gcn_candidates(current, target, model, cfg, sel)
        t_score = time.perf_counter() - t0
        if not batch:
            reports.append(_report(it, 0, current, target, cfg, t_score, 0, 0, 0, why or "no candidates"))
            break

        t0 = time.perf_counter()
        mesh, survivors = _collapse_batch(current, target, batch, cfg, sel)
        t_collapse = time.perf_counter() - t0

        t0 = time.perf_counter()
        region = set()
        for s in survivors:
            region.update(mesh.vertex_faces(s))
        if cfg.remesh_iterations:
            local_remesh(mesh, region, surface=target, iterations=cfg.remesh_iterations, guard=guard)
        t_remesh = time.perf_counter() - t0

        t0 = time.perf_counter()
        current = reproject(mesh, target, initial.beta)
        t_project = time.perf_counter() - t0
        if cfg.audit:
            current.mesh.audit()
        stop = "" if survivors else "all selected collapses rejected"
        reports.append(_report(it, len(survivors), current, target, cfg, t_score, t_collapse, t_remesh,
                               t_project, stop))
        if observer is not None:
            observer(it, current)
        if stop:
            break
    else:
        reports[-1].stop = "max_iterations"
    fingerprint.check()
    return current, reports


def _report(it, collapsed, current, target, cfg, t_score, t_collapse, t_remesh, t_project, stop):
    m = current.mesh
    hd = float("nan")
    if cfg.track_hausdorff:
        hd = hausdorff_distance(m, target.mesh, cfg.samples_per_face, index_a=current.index,
                                index_b=target.index)
    rep = IterationReport(iteration=it, collapsed=collapsed, vertices=m.n_vertices, edges=m.n_edges,
                          faces=m.n_faces, hausdorff=hd, element_proxy=field_element_proxy(current, target.mesh),
                          score_s=t_score, collapse_s=t_collapse, remesh_s=t_remesh, project_s=t_project,
                          stop=stop)
    log.info("iter %d: collapsed %d, faces %d, hausdorff %.3g", it, collapsed, rep.faces, hd)
    return rep


def run_lbo_abgs(initial: SizingField, config: LoopConfig | None = None, observer=None):
    """Procedural loop: LBO pre-ranking, then exact evaluation of the best edges.

    ``initial`` doubles as the reference grid.  ``observer(iteration, field)``
    is called after every productive iteration.  Returns the coarse field
    and one :class:`IterationReport` per iteration.
    """
    cfg = replace(config or LoopConfig(), method="lbo")
    return _run(initial, cfg, None, observer)


def run_gcn_abgs(initial: SizingField, model: GcnModel, config: LoopConfig | None = None, observer=None):
    """Learned loop: one network pass scores every edge of the current grid.

    Edges scoring above ``t_score`` are never collapsed; the loop stops once
    the best edge exceeds it or no topologically valid edge is left.
    """
    if model is None or not model.trained:
        raise ValueError("run_gcn_abgs needs a trained model")
    cfg = replace(config or LoopConfig(), method="gcn")
    return _run(initial, cfg, model, observer)


# -- training data ---------------------------------------------------------
@dataclass
class LabeledGraph:
    field: SizingField
    features: GraphFeatures
    labels: np.ndarray  # aligned with features.edge_index
    collapsible: np.ndarray


def label_field(current: SizingField, target: SizingField, selection: SelectionConfig | None = None,
                samples_per_face: int = 6) -> LabeledGraph:
    """Procedural scores of every edge of ``current`` (invalid collapses get 1)."""
    sel = (selection or SelectionConfig()).resolved(target)
    lbo = lbo_values(current.mesh, current.sizes)
    edges = [tuple(int(x) for x in e) for e in lbo.edges]
    evals = evaluate_edges(edges, current, target, sel, samples_per_face)
    return LabeledGraph(field=current, features=extract_features(current.mesh, current.sizes, lbo),
                        labels=np.array([ev.score for ev in evals]),
                        collapsible=np.array([ev.collapsible for ev in evals]))


def capture_snapshots(initial: SizingField, config: LoopConfig | None = None) -> list[SizingField]:
    """The initial field followed by the field after each procedural iteration."""
    snaps = [initial]
    run_lbo_abgs(initial, replace(config or LoopConfig(), track_hausdorff=False),
                 observer=lambda _, f: snaps.append(f))
    return snaps


def generate_training_data(grids, selection: SelectionConfig | None = None, samples_per_face: int = 6,
                           loop: LoopConfig | None = None) -> list[LabeledGraph]:
    """Label snapshots of each grid's procedural run against that grid itself.

    ``grids`` are dense fields; each one is its own reference.  Snapshots
    from every iteration are included so coarse and fine regimes both appear.
    """
    loop = replace(loop or LoopConfig(), selection=selection or SelectionConfig(),
                   samples_per_face=samples_per_face)
    out = []
    for g in grids:
        for snap in capture_snapshots(g, loop):
            out.append(label_field(snap, g, loop.selection, samples_per_face))
    return out


def write_report_csv(reports, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            d = asdict(r)
            d["query_cells"] = r.query_cells
            d["simplify_s"] = r.seconds
            w.writerow([d[c] for c in REPORT_COLUMNS])


def face_reduction(initial: SizingField, final: SizingField) -> float:
    return 1.0 - final.mesh.n_faces / initial.mesh.n_faces


__all__ = [
    "METHODS", "LoopConfig", "IterationReport", "REPORT_COLUMNS", "LabeledGraph",
    "reproject", "predict_scores", "run_lbo_abgs", "run_gcn_abgs", "label_field",
    "capture_snapshots", "generate_training_data", "write_report_csv", "face_reduction",
]
