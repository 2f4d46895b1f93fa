"""Command-line front end: ``abgs <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Diagnostics go to standard error; data goes to files or standard output.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .edge_eval import SelectionConfig
from .gcn import (
    EDGE_COLUMNS,
    ModelConfig,
    ModelFormatError,
    TrainConfig,
    TrainingError,
    extract_features,
    load_model,
    save_model,
    train,
)
from .mesh.io import MeshFormatError, load_mesh
from .mesh.trimesh import MeshError
from .simplify import (
    LoopConfig,
    capture_snapshots,
    face_reduction,
    label_field,
    predict_scores,
    run_gcn_abgs,
    run_lbo_abgs,
    write_report_csv,
)
from .sizing import (
    SizingError,
    SizingField,
    gradient_limit_smooth,
    init_geometric,
    init_uniform,
    load_bgm,
    save_bgm,
    validate_field,
)

log = logging.getLogger("abgs")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flag combination or value detected after parsing."""


# -- helpers -----------------------------------------------------------------
def _write_atomic(path, write) -> None:
    """Call ``write(tmp_path)`` and move the result into place only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _save_field(field: SizingField, path) -> None:
    validate_field(field)
    _write_atomic(path, lambda p: save_bgm(field, p))


def _positive(name):
    def parse(text):
        try:
            x = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not (np.isfinite(x) and x > 0):
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {text!r}")
        return x
    return parse


def _selection(args, field: SizingField) -> SelectionConfig:
    t_dis = args.t_dis
    if args.t_dis_rel is not None:
        if t_dis is not None:
            raise UsageError("give either --t-dis or --t-dis-rel, not both")
        t_dis = args.t_dis_rel * field.mesh.bbox_diagonal()
    return SelectionConfig(n_percent=args.n_percent, t_size=args.t_size, t_dis=t_dis,
                           w_s=args.w_s, w_d=args.w_d)


def _add_selection_flags(p):
    p.add_argument("--n-percent", type=float, default=0.10, help="fraction of edges per batch (default 0.10)")
    p.add_argument("--t-size", type=float, default=1.2, help="size-ratio threshold, > 1 (default 1.2)")
    p.add_argument("--t-dis", type=float, default=None,
                   help="distance threshold (default 1e-3 of the bounding-box diagonal)")
    p.add_argument("--t-dis-rel", type=float, default=None,
                   help="distance threshold as a fraction of the bounding-box diagonal")
    p.add_argument("--w-s", type=float, default=0.5, help="size-deviation weight (default 0.5)")
    p.add_argument("--w-d", type=float, default=0.5, help="distance-deviation weight (default 0.5)")
    p.add_argument("--samples-per-face", type=int, default=6, help="evaluation samples per face (default 6)")


def _grid_files(inputs) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(p.glob("*.bgm"))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not files:
        raise UsageError("no .bgm grids found")
    return files


# -- commands ------------------------------------------------------------------
def cmd_field_init(args) -> int:
    mesh = load_mesh(args.mesh, args.format)
    if args.uniform is not None:
        sizes = init_uniform(mesh, args.uniform)
    else:
        diag = mesh.bbox_diagonal()
        h_min = args.hmin if args.hmin is not None else 1e-3 * diag
        h_max = args.hmax if args.hmax is not None else diag
        sizes = init_geometric(mesh, args.nseg, h_min, h_max, proximity_layers=args.proximity_layers)
    field = SizingField.from_mesh(mesh, sizes, args.beta)
    t_smooth = 0.0
    if args.smooth:
        t0 = time.perf_counter()
        field = field.with_sizes(gradient_limit_smooth(field))
        t_smooth = time.perf_counter() - t0
    _save_field(field, args.output)
    log.warning("wrote %s: %d vertices, %d faces, sizes %.6g..%.6g (Smooth %.3f s)", args.output,
                field.mesh.n_vertices, field.mesh.n_faces, field.sizes.min(), field.sizes.max(), t_smooth)
    return EXIT_OK


def cmd_smooth(args) -> int:
    field = load_bgm(args.input)
    beta = field.beta if args.beta is None else args.beta
    field = SizingField(field.mesh, field.sizes, beta)
    t0 = time.perf_counter()
    out = field.with_sizes(gradient_limit_smooth(field))
    t_smooth = time.perf_counter() - t0
    _save_field(out, args.output)
    changed = int(np.count_nonzero(out.sizes != field.sizes))
    log.warning("Smooth %.3f s; %d of %d sizes lowered", t_smooth, changed, len(out.sizes))
    return EXIT_OK


def cmd_simplify(args) -> int:
    if args.method == "gcn" and not args.model:
        raise UsageError("--method gcn requires --model")
    field = load_bgm(args.input)
    cfg = LoopConfig(method=args.method, selection=_selection(args, field), t_score=args.t_score,
                     max_iterations=args.max_iterations, pre_rank_fraction=args.pre_rank_fraction,
                     samples_per_face=args.samples_per_face, remesh_iterations=args.remesh_iterations,
                     track_hausdorff=not args.no_hausdorff, audit=args.audit)
    model = load_model(args.model) if args.method == "gcn" else None
    t0 = time.perf_counter()
    if args.method == "gcn":
        out, reports = run_gcn_abgs(field, model, cfg)
    else:
        out, reports = run_lbo_abgs(field, cfg)
    t_simplify = time.perf_counter() - t0
    t_smooth = 0.0
    if args.final_smooth:
        t0 = time.perf_counter()
        out = out.with_sizes(gradient_limit_smooth(out))
        t_smooth = time.perf_counter() - t0
    _save_field(out, args.output)
    if args.report:
        _write_atomic(args.report, lambda p: write_report_csv(reports, p))
    last = reports[-1]
    log.warning("faces %d -> %d (%.1f%% fewer), %d iterations, stop: %s, Hausdorff %.3g",
                field.mesh.n_faces, out.mesh.n_faces, 100 * face_reduction(field, out), len(reports),
                last.stop or "-", last.hausdorff)
    log.warning("Simplify %.3f s, Smooth %.3f s", t_simplify, t_smooth)
    return EXIT_OK


def _read_points(path) -> np.ndarray:
    path = Path(path)
    pts = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=2, delimiter=None)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise UsageError(f"{path}: expected rows of three coordinates, got shape {pts.shape}")
    return pts


def cmd_query(args) -> int:
    if (args.point is None) == (args.points is None):
        raise UsageError("give exactly one of --point or --points")
    field = load_bgm(args.input)
    pts = np.array([args.point]) if args.point is not None else _read_points(args.points)
    if not np.all(np.isfinite(pts)):
        raise UsageError("query points must be finite")
    field.index  # build outside the timed region
    t0 = time.perf_counter()
    sizes = field.query(pts).size
    elapsed = time.perf_counter() - t0
    if args.bench:
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            field.query(pts)
            times.append(time.perf_counter() - t0)
        mean = float(np.mean(times))
        log.warning("Query mean %.6f s per batch of %d points (%.3f us/point, %d faces, %d runs)",
                    mean, len(pts), 1e6 * mean / len(pts), field.mesh.n_faces, args.repeat)
    else:
        log.info("Query %.6f s for %d points", elapsed, len(pts))
    out = sys.stdout
    out.write("".join(f"{s:.17g}\n" for s in sizes))
    out.flush()
    return EXIT_OK


def cmd_gcn_dataset(args) -> int:
    files = _grid_files(args.inputs)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_rows = 0
    t0 = time.perf_counter()
    for path in files:
        grid = load_bgm(path)
        sel = _selection(args, grid)
        snaps = [grid]
        if args.snapshots:
            loop = LoopConfig(selection=sel, samples_per_face=args.samples_per_face,
                              max_iterations=args.max_iterations)
            snaps = capture_snapshots(grid, loop)
        for k, snap in enumerate(snaps):
            lg = label_field(snap, grid, sel, args.samples_per_face)
            stem = out_dir / f"{path.stem}_s{k:03d}"
            _save_field(snap, stem.with_suffix(".bgm"))
            _write_atomic(stem.with_suffix(".labels.csv"), lambda p, lg=lg: _write_feature_csv(lg, p))
            total_rows += len(lg.labels)
    log.warning("Generate %.3f s: %d grids, %d labeled edges", time.perf_counter() - t0, len(files), total_rows)
    return EXIT_OK


LABEL_COLUMNS = ("u", "v", *EDGE_COLUMNS, "label", "collapsible")


def _write_feature_csv(lg, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_COLUMNS)
        for (u, v), feats, lab, c in zip(lg.features.edge_index, lg.features.edge, lg.labels, lg.collapsible):
            w.writerow([int(u), int(v), *(repr(float(x)) for x in feats), repr(float(lab)), int(c)])


def _read_labels(path, edge_index) -> np.ndarray:
    lookup = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            lookup[(int(row["u"]), int(row["v"]))] = float(row["label"])
    try:
        labels = np.array([lookup[(int(u), int(v))] for u, v in edge_index])
    except KeyError as exc:
        raise UsageError(f"{path}: no label for edge {exc.args[0]}") from None
    if len(lookup) != len(edge_index):
        raise UsageError(f"{path}: {len(lookup)} labels for {len(edge_index)} edges")
    return labels


def _load_dataset(directory):
    graphs, labels = [], []
    for bgm in sorted(Path(directory).glob("*.bgm")):
        lab = bgm.with_suffix(".labels.csv")
        if not lab.exists():
            log.warning("skipping %s: no %s", bgm.name, lab.name)
            continue
        field = load_bgm(bgm)
        feats = extract_features(field.mesh, field.sizes)
        graphs.append(feats)
        labels.append(_read_labels(lab, feats.edge_index))
    if not graphs:
        raise UsageError(f"{directory}: no labeled grids")
    return graphs, labels


def cmd_gcn_train(args) -> int:
    graphs, labels = _load_dataset(args.dataset)
    val_g, val_l = [], []
    if args.val_fraction > 0:
        rng = np.random.default_rng(args.seed)
        n_val = int(round(args.val_fraction * len(graphs)))
        if n_val >= len(graphs):
            raise UsageError("validation split leaves no training grids")
        pick = set(rng.permutation(len(graphs))[:n_val].tolist())
        val_g = [g for i, g in enumerate(graphs) if i in pick]
        val_l = [y for i, y in enumerate(labels) if i in pick]
        graphs = [g for i, g in enumerate(graphs) if i not in pick]
        labels = [y for i, y in enumerate(labels) if i not in pick]
    cfg = TrainConfig(epochs=args.epochs, lr=args.lr, step_size=args.step_size, gamma=args.gamma, seed=args.seed)
    mcfg = ModelConfig(activation=args.activation, dropout=args.dropout)
    model, hist = train(graphs, labels, cfg, mcfg, val_g, val_l, log_every=args.log_every)
    _write_atomic(args.output, lambda p: save_model(model, p))
    log.warning("trained on %d grids in %.1f s; final train MSE %.5g, validation MSE %s", len(graphs),
                hist.seconds, hist.train_loss[-1], f"{hist.val_loss[-1]:.5g}" if hist.val_loss else "-")
    return EXIT_OK


def cmd_gcn_predict(args) -> int:
    model = load_model(args.model)
    field = load_bgm(args.input)
    t0 = time.perf_counter()
    edges, scores = predict_scores(model, field)
    elapsed = time.perf_counter() - t0

    def write(p):
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "score"])
            for (u, v), s in zip(edges, scores):
                w.writerow([int(u), int(v), repr(float(s))])

    _write_atomic(args.output, write)
    log.warning("scored %d edges in %.3f s", len(edges), elapsed)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abgs", description="Adaptive background-grid sizing fields.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("field-init", help="build an initial .bgm from a surface mesh")
    p.add_argument("mesh")
    p.add_argument("-o", "--output", required=True)
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--uniform", type=_positive("--uniform"), metavar="H0")
    mode.add_argument("--geometric", action="store_true")
    p.add_argument("--nseg", type=int, default=16, help="segments per circle of curvature (default 16)")
    p.add_argument("--hmin", type=_positive("--hmin"))
    p.add_argument("--hmax", type=_positive("--hmax"))
    p.add_argument("--proximity-layers", type=int, default=None)
    p.add_argument("--beta", type=float, default=1.2, help="gradient limit, >= 1 (default 1.2)")
    p.add_argument("--format", choices=["obj", "stl-ascii", "stl-binary"])
    p.add_argument("--smooth", action="store_true", help="gradient-limit the sizes before writing")
    p.set_defaults(func=cmd_field_init)

    p = sub.add_parser("smooth", help="gradient-limit the sizes of a .bgm")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--beta", type=float, default=None, help="override the stored gradient limit")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("simplify", help="coarsen a .bgm adaptively")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--method", choices=["lbo", "gcn"], default="lbo")
    p.add_argument("--model", help="trained model file (required for --method gcn)")
    _add_selection_flags(p)
    p.add_argument("--t-score", type=float, default=0.5, help="learned-score threshold (default 0.5)")
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--pre-rank-fraction", type=float, default=0.25)
    p.add_argument("--remesh-iterations", type=int, default=3)
    p.add_argument("--report", help="per-iteration CSV report")
    p.add_argument("--final-smooth", action="store_true", help="gradient-limit the result")
    p.add_argument("--no-hausdorff", action="store_true", help="skip per-iteration Hausdorff distances")
    p.add_argument("--audit", action="store_true", help="full adjacency audit after every iteration")
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser("query", help="sizes at points, one per line on stdout")
    p.add_argument("input")
    p.add_argument("--point", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--points", help="text file (x y z per line) or .npy array")
    p.add_argument("--bench", action="store_true", help="report mean batch query latency")
    p.add_argument("--repeat", type=int, default=5, help="benchmark repetitions (default 5)")
    p.set_defaults(func=cmd_query)

    g = sub.add_parser("gcn", help="learned edge scorer")
    gsub = g.add_subparsers(dest="gcn_command", required=True)

    p = gsub.add_parser("dataset-gen", help="label grids (and loop snapshots) for training")
    p.add_argument("inputs", nargs="+", help=".bgm files or directories of them")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _add_selection_flags(p)
    p.add_argument("--snapshots", action="store_true", help="also label every iteration of a procedural run")
    p.add_argument("--max-iterations", type=int, default=100)
    p.set_defaults(func=cmd_gcn_dataset)

    p = gsub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("dataset")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epochs", type=int, default=1200)
    p.add_argument("--lr", type=_positive("--lr"), default=1e-4)
    p.add_argument("--step-size", type=int, default=300, help="epochs between learning-rate halvings")
    p.add_argument("--gamma", type=_positive("--gamma"), default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--activation", choices=["relu", "sigmoid"], default="relu")
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_gcn_train)

    p = gsub.add_parser("predict", help="score every edge of a .bgm")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="CSV with u, v, score")
    p.set_defaults(func=cmd_gcn_predict)
    return parser


_USAGE_ERRORS = (UsageError, IsADirectoryError, SizingError, MeshError, MeshFormatError,
                 ModelFormatError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"abgs: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"abgs: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"abgs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostics
        print(f"abgs: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
