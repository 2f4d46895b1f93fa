"""Procedural test geometries used by the demos, tests and benchmarks."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh.trimesh import TriMesh


def plane_grid(nx: int = 32, ny: int | None = None, size=(1.0, 1.0), alternate: bool = True) -> TriMesh:
    """Flat ``z = 0`` rectangle split into ``2 * nx * ny`` triangles."""
    ny = nx if ny is None else ny
    xs = np.linspace(0.0, size[0], nx + 1)
    ys = np.linspace(0.0, size[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    faces = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            if alternate and (i + j) % 2:
                faces += [(a, b, d), (b, c, d)]
            else:
                faces += [(a, b, c), (a, c, d)]
    return TriMesh(verts, faces)


def equilateral_patch(n: int = 8, edge: float = 1.0) -> TriMesh:
    """Flat patch of equilateral triangles (a sheared ``n x n`` grid)."""
    verts = []
    for j in range(n + 1):
        for i in range(n + 1):
            verts.append((edge * (i + 0.5 * j), edge * j * np.sqrt(3) / 2, 0.0))
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            faces += [(a, b, d), (b, c, d)]
    return TriMesh(np.array(verts), faces)


def _oriented_hull(points: np.ndarray) -> TriMesh:
    hull = ConvexHull(points)
    faces = hull.simplices.copy()
    center = points.mean(axis=0)
    tri = points[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", n, tri.mean(axis=1) - center) < 0
    faces[flip] = faces[flip][:, ::-1]
    return TriMesh(points, faces)


def fibonacci_sphere(n_points: int = 1002, radius: float = 1.0) -> TriMesh:
    """Near-uniform sphere triangulation with ``2 * n_points - 4`` faces."""
    i = np.arange(n_points) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n_points)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    pts = radius * np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    return _oriented_hull(pts)


def octahedron() -> TriMesh:
    verts = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    faces = [(0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4), (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5)]
    return TriMesh(np.array(verts, dtype=float), faces)


def cylinder(radius: float = 1.0, height: float = 2.0, n_around: int = 32, n_along: int = 16) -> TriMesh:
    """Open cylinder about the z axis, rows offset by half a step."""
    verts = []
    for j in range(n_along + 1):
        off = 0.5 * (j % 2)
        for i in range(n_around):
            t = 2 * np.pi * (i + off) / n_around
            verts.append((radius * np.cos(t), radius * np.sin(t), height * j / n_along))
    faces = []
    for j in range(n_along):
        for i in range(n_around):
            a = j * n_around + i
            b = j * n_around + (i + 1) % n_around
            c = (j + 1) * n_around + (i + 1) % n_around
            d = (j + 1) * n_around + i
            if j % 2 == 0:
                faces += [(a, b, d), (b, c, d)]
            else:
                faces += [(a, b, c), (a, c, d)]
    return TriMesh(np.array(verts), faces)


def height_field(nx: int, func, size=(1.0, 1.0)) -> TriMesh:
    """Graph ``z = func(x, y)`` over a grid of ``2 * nx * nx`` triangles."""
    m = plane_grid(nx, nx, size)
    v = m.vertices.copy()
    v[:, 2] = func(v[:, 0], v[:, 1])
    return TriMesh(v, m.faces)


def torus(R: float = 1.0, r: float = 0.35, n_major: int = 40, n_minor: int = 16) -> TriMesh:
    verts = []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            w = 2 * np.pi * (j + 0.5 * (i % 2)) / n_minor
            verts.append(((R + r * np.cos(w)) * np.cos(u), (R + r * np.cos(w)) * np.sin(u), r * np.sin(w)))
    faces = []
    for i in range(n_major):
        i2 = (i + 1) % n_major
        for j in range(n_minor):
            j2 = (j + 1) % n_minor
            a, b = i * n_minor + j, i * n_minor + j2
            c, d = i2 * n_minor + j2, i2 * n_minor + j
            faces += [(a, d, b), (b, d, c)]
    return TriMesh(np.array(verts), faces)
