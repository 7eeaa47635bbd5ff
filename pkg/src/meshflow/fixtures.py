"""Procedural test meshes.

Six watertight desk-scale objects stand in for the six scanned household
objects used at full scale; they are generated deterministically so tests and
demos need no binary assets. `subdivide` refines a mesh while keeping the
original vertices first, which lets resolution-independence tests compare
coincident vertices by index.
"""

from __future__ import annotations

import numpy as np

from .geometry import Mesh


def tetrahedron() -> Mesh:
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    faces = np.array([
        [0, 2, 1],
        [0, 1, 3],
        [0, 3, 2],
        [1, 2, 3],
    ])
    return Mesh(vertices, faces)


def box(extents=(1.0, 1.0, 1.0)) -> Mesh:
    ex, ey, ez = extents
    corners = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=np.float64) * np.array([ex, ey, ez])
    faces = np.array([
        [0, 2, 1], [0, 3, 2],      # bottom
        [4, 5, 6], [4, 6, 7],      # top
        [0, 1, 5], [0, 5, 4],      # front
        [1, 2, 6], [1, 6, 5],      # right
        [2, 3, 7], [2, 7, 6],      # back
        [3, 0, 4], [3, 4, 7],      # left
    ])
    return Mesh(corners, faces)


def icosahedron() -> Mesh:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return Mesh(verts, faces)


def subdivide(mesh: Mesh, project_to_sphere: bool = False) -> Mesh:
    """Midpoint subdivision: each triangle becomes four.

    Original vertices keep their indices and positions; edge midpoints are
    appended after them.
    """
    verts = list(mesh.vertices)
    midpoint = {}

    def mid(i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key not in midpoint:
            p = (mesh.vertices[i] + mesh.vertices[j]) / 2.0
            if project_to_sphere:
                p = p / np.linalg.norm(p)
            midpoint[key] = len(verts)
            verts.append(p)
        return midpoint[key]

    faces = []
    for i, j, k in mesh.faces:
        ij, jk, ki = mid(i, j), mid(j, k), mid(k, i)
        faces.extend([[i, ij, ki], [ij, j, jk], [ki, jk, k], [ij, jk, ki]])
    return Mesh(np.array(verts), np.array(faces))


def icosphere(subdivisions: int = 2) -> Mesh:
    """Unit sphere from a subdivided icosahedron: V = 10 * 4**n + 2."""
    mesh = icosahedron()
    for _ in range(subdivisions):
        mesh = subdivide(mesh, project_to_sphere=True)
    return mesh


def cylinder(n_sides: int = 16, radius: float = 0.5, height: float = 1.0) -> Mesh:
    theta = 2.0 * np.pi * np.arange(n_sides) / n_sides
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    bottom = np.concatenate([ring, np.zeros((n_sides, 1))], axis=1)
    top = np.concatenate([ring, np.full((n_sides, 1), height)], axis=1)
    verts = np.concatenate([bottom, top, [[0, 0, 0]], [[0, 0, height]]])
    cb, ct = 2 * n_sides, 2 * n_sides + 1
    faces = []
    for i in range(n_sides):
        j = (i + 1) % n_sides
        faces.append([i, j, n_sides + i])            # side lower
        faces.append([j, n_sides + j, n_sides + i])  # side upper
        faces.append([cb, j, i])                     # bottom cap
        faces.append([ct, n_sides + i, n_sides + j])  # top cap
    return Mesh(verts, np.array(faces))


def cone(n_sides: int = 16, radius: float = 0.5, height: float = 1.0) -> Mesh:
    theta = 2.0 * np.pi * np.arange(n_sides) / n_sides
    base = np.stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n_sides)], axis=1)
    verts = np.concatenate([base, [[0, 0, 0]], [[0, 0, height]]])
    center, apex = n_sides, n_sides + 1
    faces = []
    for i in range(n_sides):
        j = (i + 1) % n_sides
        faces.append([center, j, i])
        faces.append([apex, i, j])
    return Mesh(verts, np.array(faces))


def torus(n_major: int = 16, n_minor: int = 8, major_radius: float = 0.35,
          minor_radius: float = 0.15) -> Mesh:
    """Grid torus with exactly n_major * n_minor vertices (Euler characteristic 0)."""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    r = major_radius + minor_radius * np.cos(vv)
    verts = np.stack([r * np.cos(uu), r * np.sin(uu), minor_radius * np.sin(vv)], axis=-1)
    verts = verts.reshape(-1, 3)
    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = i * n_minor + (j + 1) % n_minor
            c = ((i + 1) % n_major) * n_minor + j
            d = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            faces.append([a, c, b])
            faces.append([b, c, d])
    return Mesh(verts, np.array(faces))


def desk_objects() -> dict[str, Mesh]:
    """The six standard desk fixtures, keyed by object id."""
    return {
        "box": box((1.0, 0.6, 0.4)),
        "sphere": icosphere(2),
        "cylinder": cylinder(12),
        "cone": cone(12),
        "torus": torus(12, 8),
        "ico": icosahedron(),
    }
