import csv

import numpy as np
import pytest

from abgs.cli import main
from abgs.mesh import save_mesh
from abgs.shapes import fibonacci_sphere, plane_grid
from abgs.simplify import REPORT_COLUMNS
from abgs.sizing import SizingField, load_bgm, save_bgm


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def sphere_obj(tmp_path):
    path = tmp_path / "sphere.obj"
    save_mesh(fibonacci_sphere(600), path)
    return path


@pytest.fixture
def flat_bgm(tmp_path):
    path = tmp_path / "flat.bgm"
    mesh = plane_grid(16)
    save_bgm(SizingField(mesh, np.full(len(mesh.vertices), 0.2)), path)
    return path


# -- field-init / smooth -------------------------------------------------------------
def test_field_init_uniform(tmp_path, sphere_obj):
    out = tmp_path / "u.bgm"
    assert _run("field-init", sphere_obj, "--uniform", 0.5, "-o", out) == 0
    assert np.all(load_bgm(out).sizes == 0.5)


def test_field_init_geometric_sphere(tmp_path, sphere_obj):
    out = tmp_path / "g.bgm"
    assert _run("field-init", sphere_obj, "--geometric", "--nseg", 32, "--hmin", 1e-3, "--hmax", 10,
                "-o", out) == 0
    sizes = load_bgm(out).sizes
    assert np.all(np.abs(sizes / (2 * np.pi / 32) - 1) < 0.15)


def test_missing_input_is_a_usage_error(tmp_path, capsys):
    code = _run("field-init", tmp_path / "nope.obj", "--uniform", 1, "-o", tmp_path / "x.bgm")
    assert code == 2
    assert "nope.obj" in capsys.readouterr().err
    assert not (tmp_path / "x.bgm").exists()


def test_smooth_leaves_compliant_field_alone(tmp_path):
    mesh = plane_grid(6)
    src, out = tmp_path / "a.bgm", tmp_path / "b.bgm"
    save_bgm(SizingField(mesh, 0.5 + 0.3 * mesh.vertices[:, 0], beta=1.2), src)
    assert _run("smooth", src, "-o", out) == 0
    assert load_bgm(out).sizes.tobytes() == load_bgm(src).sizes.tobytes()


def test_smooth_limits_a_jump(tmp_path):
    from abgs.mesh import TriMesh

    mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1e-3, 0]], [[0, 1, 2]])
    src, out = tmp_path / "a.bgm", tmp_path / "b.bgm"
    save_bgm(SizingField(mesh, [1.0, 10.0, 1.0], beta=2.0), src)
    assert _run("smooth", src, "-o", out) == 0
    assert load_bgm(out).sizes[:2] == pytest.approx([1.0, 3.0], abs=1e-12)


def test_smooth_rejects_beta_below_one(tmp_path, flat_bgm, capsys):
    assert _run("smooth", flat_bgm, "--beta", 0.5, "-o", tmp_path / "b.bgm") == 2
    assert "beta" in capsys.readouterr().err.lower()


# -- simplify --------------------------------------------------------------------------
def test_simplify_flat_plane(tmp_path, flat_bgm):
    out, report = tmp_path / "s.bgm", tmp_path / "r.csv"
    assert _run("simplify", flat_bgm, "-o", out, "--report", report) == 0
    before, after = load_bgm(flat_bgm), load_bgm(out)
    assert after.mesh.n_faces <= 0.3 * before.mesh.n_faces
    with open(report) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert all(float(r["hausdorff"]) < 1e-9 for r in rows)
    assert int(rows[-1]["faces"]) == after.mesh.n_faces


def test_simplify_gcn_needs_model(tmp_path, flat_bgm, capsys):
    assert _run("simplify", flat_bgm, "--method", "gcn", "-o", tmp_path / "s.bgm") == 2
    assert "--model" in capsys.readouterr().err


def test_conflicting_thresholds(tmp_path, flat_bgm):
    assert _run("simplify", flat_bgm, "--t-dis", 0.1, "--t-dis-rel", 0.1, "-o", tmp_path / "s.bgm") == 2


# -- query --------------------------------------------------------------------------------
def test_query_single_point(flat_bgm, capsys):
    assert _run("query", flat_bgm, "--point", 0.3, 0.4, 2.0) == 0
    assert float(capsys.readouterr().out) == 0.2


def test_query_batch_keeps_order(tmp_path, capsys):
    mesh = plane_grid(4)
    src = tmp_path / "ramp.bgm"
    save_bgm(SizingField(mesh, 1.0 + mesh.vertices[:, 0]), src)
    pts = np.array([[0.9, 0.5, 0.0], [0.1, 0.2, 1.0], [0.5, 0.5, -1.0]])
    np.savetxt(tmp_path / "p.txt", pts)
    assert _run("query", src, "--points", tmp_path / "p.txt") == 0
    values = [float(x) for x in capsys.readouterr().out.split()]
    assert values == pytest.approx([1.9, 1.1, 1.5], abs=1e-12)


def test_query_bench_reports_latency(tmp_path, flat_bgm, capsys, caplog):
    np.save(tmp_path / "p.npy", np.random.default_rng(0).random((200, 3)))
    assert _run("query", flat_bgm, "--points", tmp_path / "p.npy", "--bench", "--repeat", 2) == 0
    captured = capsys.readouterr()
    assert len(captured.out.split()) == 200
    assert "Query mean" in captured.err + caplog.text


def test_query_needs_exactly_one_source(flat_bgm):
    assert _run("query", flat_bgm) == 2


# -- gcn ----------------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("gcn")
    grids = root / "grids"
    grids.mkdir()
    for n in (4, 5):
        mesh = plane_grid(n)
        save_bgm(SizingField(mesh, 0.2 + 0.1 * mesh.vertices[:, 0] ** 2), grids / f"g{n}.bgm")
    assert _run("gcn", "dataset-gen", grids, "-o", root / "data", "--t-dis-rel", 0.01) == 0
    return root


def test_dataset_rows_match_edges(dataset):
    for bgm in sorted((dataset / "data").glob("*.bgm")):
        field = load_bgm(bgm)
        with open(bgm.with_suffix(".labels.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == field.mesh.n_edges
        assert all(0.0 <= float(r["label"]) <= 1.0 for r in rows)


def test_train_is_reproducible_and_predicts(dataset, tmp_path):
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    for out in (a, b):
        assert _run("gcn", "train", dataset / "data", "-o", out, "--epochs", 3, "--seed", 5) == 0
    assert a.read_bytes() == b.read_bytes()
    pred = tmp_path / "pred.csv"
    grid = dataset / "grids" / "g4.bgm"
    assert _run("gcn", "predict", a, grid, "-o", pred) == 0
    with open(pred) as fh:
        scores = [float(r["score"]) for r in csv.DictReader(fh)]
    assert len(scores) == load_bgm(grid).mesh.n_edges
    assert all(0.0 < s < 1.0 for s in scores)
    assert _run("simplify", grid, "--method", "gcn", "--model", a, "-o", tmp_path / "s.bgm") == 0


def test_train_on_empty_directory(tmp_path):
    assert _run("gcn", "train", tmp_path, "-o", tmp_path / "m.npz") == 2
