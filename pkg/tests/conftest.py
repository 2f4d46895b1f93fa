import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from abgs.mesh import TriMesh  # noqa: E402
from abgs.shapes import plane_grid  # noqa: E402
from abgs.sizing import SizingField, gradient_limit_smooth, init_uniform  # noqa: E402


@pytest.fixture
def square():
    """Unit square split on its diagonal."""
    return TriMesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


@pytest.fixture
def flat_field():
    """Smoothed uniform field on a 12x12 plane grid."""
    mesh = plane_grid(12)
    field = SizingField(mesh, init_uniform(mesh, 0.2))
    return field.with_sizes(gradient_limit_smooth(field))


def random_planar_mesh(rng, n_points=40):
    """Delaunay triangulation of random points in the unit square, lifted to z=0."""
    from scipy.spatial import Delaunay

    pts = rng.random((n_points, 2))
    faces = Delaunay(pts).simplices.copy()
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    cw = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]) < 0
    faces[cw] = faces[cw][:, ::-1]
    return TriMesh(np.column_stack([pts, np.zeros(n_points)]), faces)


def warped_grid(n):
    """Uniform-diagonal grid on [-1, 1]^2 under a smooth warp.

    Returns the mesh and the unwarped coordinates, so callers can select
    the same interior patch at every refinement level.
    """
    g = plane_grid(n, size=(2.0, 2.0), alternate=False)
    v = g.vertices.copy()
    v[:, :2] -= 1.0
    x, y = v[:, 0].copy(), v[:, 1].copy()
    v[:, 0] = x + 0.1 * np.sin(np.pi * x) * np.cos(np.pi * y / 2)
    v[:, 1] = y + 0.1 * np.sin(np.pi * y)
    return TriMesh(v, g.faces), x, y


def laplacian_rms_error(n):
    """Area-weighted RMS error of the discrete Laplacian of x^2 + y^2 against 4."""
    from abgs.lbo import mixed_voronoi_area, vertex_lbo

    mesh, x, y = warped_grid(n)
    p = mesh.vertices
    lap = vertex_lbo(mesh, p[:, 0] ** 2 + p[:, 1] ** 2)
    area = mixed_voronoi_area(p, mesh.faces)
    inner = (np.abs(x) <= 0.5) & (np.abs(y) <= 0.5)
    return float(np.sqrt(np.sum(area[inner] * (lap[inner] - 4.0) ** 2) / np.sum(area[inner])))
