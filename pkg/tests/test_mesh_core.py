import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from abgs.mesh import (
    CollapseError,
    MeshError,
    MeshFormatError,
    NonManifoldError,
    TriMesh,
    barycentric_lattice,
    can_collapse,
    edge_collapse,
    hausdorff_distance,
    load_mesh,
    local_remesh,
    plan_collapse,
    region_violations,
    save_mesh,
    weld_vertices,
)
from abgs.mesh.remesh import opposite_angle_sum, try_flip
from abgs.shapes import equilateral_patch, fibonacci_sphere, octahedron, plane_grid
from abgs.spatial import FaceBVH


def _stl_ascii(tri):
    out = ["solid t"]
    for t in tri:
        out += ["facet normal 0 0 1", "outer loop"]
        out += [f"vertex {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in t]
        out += ["endloop", "endfacet"]
    return "\n".join(out + ["endsolid t"]) + "\n"


# -- io ----------------------------------------------------------------------
def test_obj_square(tmp_path):
    path = tmp_path / "sq.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n")
    m = load_mesh(path)
    assert (m.n_vertices, m.n_faces, m.n_edges) == (4, 2, 5)


def test_stl_ascii_square_is_welded(tmp_path, square):
    tri = square.vertices[square.faces]
    path = tmp_path / "sq.stl"
    path.write_text(_stl_ascii(tri))
    m = load_mesh(path)
    n_expected, _ = oracles.weld(tri.reshape(-1, 3), 1e-6 * np.sqrt(2))
    assert m.n_vertices == n_expected == 4
    assert m.n_faces == 2


def test_weld_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    base = rng.random((60, 3))
    pts = np.concatenate([base, base[:25] + 1e-9 * rng.standard_normal((25, 3)), base[10:20]])
    tol = 1e-6
    unique, inverse = weld_vertices(pts, tol)
    n_ref, labels = oracles.weld(pts, tol)
    assert len(unique) == n_ref
    # same partition of the input points
    for i in range(len(pts)):
        assert np.array_equal(inverse == inverse[i], labels == labels[i])


def test_three_faces_on_one_edge_is_rejected(tmp_path):
    path = tmp_path / "fin.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0.5 1 0\nv 0.5 -1 0\nv 0.5 0 1\n"
                    "f 1 2 3\nf 2 1 4\nf 1 2 5\n")
    with pytest.raises(NonManifoldError) as err:
        load_mesh(path)
    assert err.value.edges == [(0, 1)]
    assert "(0, 1)" in str(err.value)


def test_obj_round_trip(tmp_path, square):
    path = tmp_path / "sq.obj"
    save_mesh(square, path)
    m = load_mesh(path)
    assert np.array_equal(m.faces, square.faces)
    assert np.allclose(m.vertices, square.vertices)


def test_octahedron_binary_stl_round_trip(tmp_path):
    path = tmp_path / "oct.stl"
    save_mesh(octahedron(), path, format="stl-binary")
    m = load_mesh(path)
    assert m.n_vertices == 6 and m.n_faces == 8 and m.euler_characteristic() == 2


def test_empty_mesh_is_an_error(tmp_path):
    path = tmp_path / "empty.obj"
    path.write_text("v 0 0 0\n")
    with pytest.raises(MeshFormatError):
        load_mesh(path)
    with pytest.raises(MeshError):
        save_mesh(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)), tmp_path / "out.obj")


def test_truncated_binary_stl(tmp_path):
    path = tmp_path / "oct.stl"
    save_mesh(octahedron(), path)
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(MeshFormatError):
        load_mesh(path)


# -- collapse ------------------------------------------------------------------
def test_octahedron_collapse_bookkeeping():
    for edge in octahedron().edges():
        m = octahedron()
        edge_collapse(m, tuple(edge))
        m.audit()
        assert (m.n_vertices, m.n_edges, m.n_faces) == (5, 9, 6)
        assert m.euler_characteristic() == 2


def test_midpoint_placement():
    m = TriMesh([[0, 0, 0], [2, 0, 0], [1, 1, 0], [1, -1, 0], [3, 1, 0], [3, -1, 0], [-1, 1, 0], [-1, -1, 0]],
                [[0, 1, 2], [1, 0, 3], [1, 4, 2], [1, 3, 5], [1, 5, 4], [0, 2, 6], [0, 7, 3], [0, 6, 7]])
    res = edge_collapse(m, (0, 1))
    assert np.array_equal(m.vertices[res.surviving], [1.0, 0.0, 0.0])


def _common_neighbours(faces, u, v):
    nb = {w: set() for w in np.unique(faces)}
    for tri in faces:
        for a in tri:
            nb[a].update(int(b) for b in tri if b != a)
    return nb[u] & nb[v]


def test_link_condition_violation_found_by_enumeration():
    # nested triangles: outer frame, inner triangle u v w, centre point
    pts = np.array([[0, 3], [-3, -2], [3, -2], [0, 1], [-1, -0.6], [1, -0.6], [0, 0]], dtype=float)
    from scipy.spatial import Delaunay

    faces = Delaunay(pts).simplices
    mesh = TriMesh(np.column_stack([pts, np.zeros(len(pts))]), _ccw(pts, faces))
    offenders = []
    for u, v in mesh.edges():
        common = _common_neighbours(mesh.faces, int(u), int(v))
        if len(common) == 3 and len(mesh.edge_faces(int(u), int(v))) == 2:
            offenders.append((int(u), int(v)))
    assert offenders
    for e in offenders:
        with pytest.raises(CollapseError, match="link condition"):
            plan_collapse(mesh, e)


def _ccw(pts, faces):
    faces = faces.copy()
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    cw = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]) < 0
    faces[cw] = faces[cw][:, ::-1]
    return faces


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_collapse_sequences_preserve_euler(seed):
    rng = np.random.default_rng(seed)
    m = fibonacci_sphere(60)
    chi = m.euler_characteristic()
    for _ in range(25):
        edges = m.edges()
        u, v = (int(x) for x in edges[rng.integers(len(edges))])
        if not can_collapse(m, (u, v)):
            continue
        before = (m.n_vertices, m.n_edges, m.n_faces)
        edge_collapse(m, (u, v))
        m.audit()
        assert (m.n_vertices, m.n_edges, m.n_faces) == (before[0] - 1, before[1] - 3, before[2] - 2)
        assert m.euler_characteristic() == chi


def test_can_collapse_does_not_mutate():
    m = fibonacci_sphere(40)
    fp = m.fingerprint()
    for e in m.edges():
        can_collapse(m, tuple(e))
    assert m.fingerprint() == fp


def test_boundary_corner_stays_fixed():
    m = plane_grid(4)
    outline = hausdorff_distance(m, plane_grid(4))
    for u, v in m.edges():
        if m.is_boundary_edge(int(u), int(v)) and can_collapse(m, (int(u), int(v))):
            edge_collapse(m, (int(u), int(v)))
    m.audit()
    corners = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    live = m.vertices[m.vertex_alive]
    for c in corners:
        assert np.min(np.linalg.norm(live - c, axis=1)) == 0.0
    assert outline == 0.0


# -- remesh ---------------------------------------------------------------------
def test_equilateral_region_is_a_fixed_point():
    m = equilateral_patch(6)
    before = m.vertices.copy(), m.faces.copy()
    stats = local_remesh(m, range(m.n_faces), surface=FaceBVH(m.vertices.copy(), m.faces.copy()))
    assert stats.flips == 0
    assert np.array_equal(m.faces, before[1])
    assert np.allclose(m.vertices, before[0], atol=1e-12)


def test_thin_quad_is_flipped():
    m = TriMesh([[0, 0, 0], [2, 0, 0], [1, 0.2, 0], [1, -0.2, 0]], [[0, 1, 2], [1, 0, 3]])
    p = m.vertices
    # direct angle oracle: angles at the two apexes
    def angle(at, a, b):
        x, y = p[a] - p[at], p[b] - p[at]
        return np.arccos(np.dot(x, y) / np.linalg.norm(x) / np.linalg.norm(y))
    total = angle(2, 0, 1) + angle(3, 0, 1)
    assert total > np.pi
    assert opposite_angle_sum(m, 0, 1) == pytest.approx(total, abs=1e-12)
    assert try_flip(m, 0, 1)
    assert m.has_edge(2, 3) and not m.has_edge(0, 1)
    m.audit()


def test_perturbed_vertex_returns_to_plane():
    flat = plane_grid(6)
    m = plane_grid(6)
    v = 3 * 7 + 3
    m.vertices[v, 2] = 0.05
    local_remesh(m, sorted(m.vertex_faces(v)), surface=FaceBVH(flat.vertices, flat.faces), iterations=5)
    assert abs(m.vertices[v, 2]) < 1e-9


def test_remesh_never_adds_violations():
    rng = np.random.default_rng(5)
    for _ in range(5):
        from conftest import random_planar_mesh

        m = random_planar_mesh(rng, 50)
        # shear to make many edges non-Delaunay
        m.vertices[:, 0] += 0.8 * m.vertices[:, 1] ** 2
        region = set(range(len(m.vertices)))
        before = region_violations(m, region)
        local_remesh(m, range(m.n_faces), surface=FaceBVH(m.vertices.copy(), m.faces.copy()))
        m.audit()
        assert region_violations(m, region) <= before


# -- hausdorff -------------------------------------------------------------------
def test_hausdorff_identical_is_zero():
    m = fibonacci_sphere(80)
    assert hausdorff_distance(m, m) == 0.0


def test_hausdorff_parallel_squares(square):
    lifted = TriMesh(square.vertices + [0, 0, 0.5], square.faces)
    d = hausdorff_distance(square, lifted)
    ref = oracles.sampled_hausdorff(square.vertices, square.faces, lifted.vertices, lifted.faces,
                                    barycentric_lattice(6))
    assert d == pytest.approx(0.5, abs=1e-15)
    assert d == pytest.approx(ref, abs=1e-15)


def test_hausdorff_lifted_vertex_approaches_height():
    flat = plane_grid(4)
    bumped = plane_grid(4)
    bumped.vertices[12, 2] = 0.1
    estimates = [hausdorff_distance(flat, bumped, n) for n in (1, 3, 6, 15)]
    # the centroid-only estimate misses the apex; denser lattices reach it
    assert estimates[0] < 0.1
    assert estimates[-1] == pytest.approx(0.1, abs=1e-12)
    assert all(a <= b + 1e-15 for a, b in zip(estimates, estimates[1:]))
    dense = oracles.sampled_hausdorff(flat.vertices, flat.faces, bumped.vertices, bumped.faces,
                                      barycentric_lattice(15))
    assert estimates[-1] == pytest.approx(dense, abs=1e-12)


def test_hausdorff_symmetric():
    a = fibonacci_sphere(60)
    b = fibonacci_sphere(90, radius=1.05)
    assert hausdorff_distance(a, b) == hausdorff_distance(b, a)
