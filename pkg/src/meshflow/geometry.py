"""Triangle meshes and point clouds: data model, file I/O, sampling, oracles.

Everything here is a pure function of its inputs. Meshes are immutable in
practice: deformations produce a new vertex array and reuse the face array
object verbatim, so topology preservation is checkable by identity.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    MeshParseError,
    UnsupportedTopologyError,
)


@dataclass
class Mesh:
    """Triangle mesh: (V, 3) float64 vertices, (F, 3) int64 face indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {self.faces.shape}")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if len(self.faces):
            f = self.faces
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise ValueError(f"degenerate face at index {int(np.argmax(degenerate))}")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        """New mesh with moved vertices; the face array object is shared."""
        if np.asarray(vertices).shape != self.vertices.shape:
            raise ValueError("deformation must keep the vertex count")
        out = Mesh.__new__(Mesh)
        out.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        out.faces = self.faces
        return out


@dataclass
class PointCloud:
    """Unordered set of 3-D points, (N, 3) float64. Order carries no meaning."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if len(self.points) < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.points).all():
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class TopologySummary:
    vertex_count: int
    edge_count: int
    face_count: int
    euler_characteristic: int
    watertight: bool


@dataclass
class ScaleOffset:
    """Affine map x -> x * scale + offset (uniform scale)."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.offset

    def inverse(self) -> "ScaleOffset":
        return ScaleOffset(1.0 / self.scale, -self.offset / self.scale)


# ---------------------------------------------------------------------------
# File I/O.  OBJ: ASCII `v`/`f` records, 1-based indices.  OFF: ASCII header.
# Coordinates are written with 9 significant digits in both formats.
# ---------------------------------------------------------------------------

def _parse_float3(parts, path, lineno):
    if len(parts) < 3:
        raise MeshParseError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
    try:
        return [float(parts[0]), float(parts[1]), float(parts[2])]
    except ValueError as exc:
        raise MeshParseError(f"{path}:{lineno}: bad coordinate: {exc}") from None


def _read_obj(path: str) -> Mesh:
    vertices = []
    faces = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                vertices.append(_parse_float3(parts[1:], path, lineno))
            elif tag == "f":
                refs = parts[1:]
                if len(refs) != 3:
                    raise UnsupportedTopologyError(
                        f"{path}:{lineno}: only triangular faces are supported "
                        f"(face has {len(refs)} vertices)"
                    )
                idx = []
                for ref in refs:
                    head = ref.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshParseError(f"{path}:{lineno}: bad face index {ref!r}") from None
                    if i < 1:
                        raise MeshParseError(f"{path}:{lineno}: face indices must be positive")
                    idx.append(i - 1)
                faces.append(idx)
            # other records (vn, vt, o, g, s, mtllib, usemtl, ...) are ignored
    if not vertices:
        raise MeshParseError(f"{path}: no vertices found")
    try:
        return Mesh(np.array(vertices), np.array(faces).reshape(-1, 3))
    except ValueError as exc:
        raise MeshParseError(f"{path}: {exc}") from None


def _read_off(path: str) -> Mesh:
    with open(path, "r") as fh:
        lines = fh.readlines()
    # strip comments/blanks but remember original line numbers
    content = [(i + 1, ln.strip()) for i, ln in enumerate(lines)]
    content = [(n, ln) for n, ln in content if ln and not ln.startswith("#")]
    if not content:
        raise MeshParseError(f"{path}: empty OFF file")
    pos = 0
    lineno, header = content[pos]
    counts_parts = None
    if header == "OFF":
        pos += 1
    elif header.startswith("OFF"):
        # counts may share the header line
        counts_parts = header[3:].split()
        pos += 1
    else:
        raise MeshParseError(f"{path}:{lineno}: missing OFF header")
    if not counts_parts:
        if pos >= len(content):
            raise MeshParseError(f"{path}: missing vertex/face counts")
        lineno, counts_line = content[pos]
        counts_parts = counts_line.split()
        pos += 1
    try:
        n_vertices, n_faces = int(counts_parts[0]), int(counts_parts[1])
    except (ValueError, IndexError):
        raise MeshParseError(f"{path}:{lineno}: bad counts line") from None

    if pos + n_vertices + n_faces > len(content):
        raise MeshParseError(f"{path}: truncated OFF file")
    vertices = []
    for k in range(n_vertices):
        lineno, line = content[pos + k]
        vertices.append(_parse_float3(line.split(), path, lineno))
    faces = []
    for k in range(n_faces):
        lineno, line = content[pos + n_vertices + k]
        parts = line.split()
        try:
            arity = int(parts[0])
        except (ValueError, IndexError):
            raise MeshParseError(f"{path}:{lineno}: bad face line") from None
        if arity != 3:
            raise UnsupportedTopologyError(
                f"{path}:{lineno}: only triangular faces are supported (face has {arity} vertices)"
            )
        if len(parts) < 4:
            raise MeshParseError(f"{path}:{lineno}: face line lists too few indices")
        faces.append([int(parts[1]), int(parts[2]), int(parts[3])])
    try:
        return Mesh(np.array(vertices), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise MeshParseError(f"{path}: {exc}") from None


def read_mesh(path: str) -> Mesh:
    """Read an OBJ or OFF mesh (triangles only), chosen by file extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        return _read_obj(path)
    if ext == ".off":
        return _read_off(path)
    raise MeshParseError(f"{path}: unknown mesh extension {ext!r} (expected .obj or .off)")


def write_mesh(path: str, mesh: Mesh) -> None:
    """Write OBJ or OFF by extension; reads back identically at 9 digits."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        with open(path, "w") as fh:
            for v in mesh.vertices:
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for f in mesh.faces:
                fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
    elif ext == ".off":
        with open(path, "w") as fh:
            fh.write("OFF\n")
            fh.write(f"{mesh.num_vertices} {mesh.num_faces} 0\n")
            for v in mesh.vertices:
                fh.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for f in mesh.faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    else:
        raise MeshParseError(f"{path}: unknown mesh extension {ext!r} (expected .obj or .off)")


def read_pointcloud(path: str) -> PointCloud:
    """Read an ASCII XYZ file: one `x y z` triple per line."""
    rows = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(_parse_float3(line.split(), path, lineno))
    if not rows:
        raise MeshParseError(f"{path}: empty point cloud file")
    return PointCloud(np.array(rows))


def write_pointcloud(path: str, cloud: PointCloud) -> None:
    with open(path, "w") as fh:
        for p in cloud.points:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


# ---------------------------------------------------------------------------
# Normalization and sampling
# ---------------------------------------------------------------------------

def normalize_unit_cube(mesh: Mesh) -> tuple[Mesh, ScaleOffset]:
    """Center the mesh at the origin with its longest axis spanning [-0.5, 0.5].

    Returns the normalized mesh and the affine transform mapping normalized
    coordinates back to the original frame. The same transform must be applied
    to every deformed state of the object so magnitudes stay comparable.
    """
    if mesh.num_vertices == 0:
        raise DegenerateGeometryError("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        raise DegenerateGeometryError("mesh has zero extent (all vertices identical)")
    center = (hi + lo) / 2.0
    normalized = (mesh.vertices - center) / extent
    return mesh.with_vertices(normalized), ScaleOffset(extent, center)


def triangle_areas(mesh: Mesh) -> np.ndarray:
    a = mesh.vertices[mesh.faces[:, 0]]
    b = mesh.vertices[mesh.faces[:, 1]]
    c = mesh.vertices[mesh.faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_surface(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """Sample n points uniformly by area from the mesh surface.

    Triangles are selected with probability proportional to area; points are
    placed uniformly inside the selected triangle (barycentric, with the
    standard fold of the unit square onto the simplex). Deterministic in seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mesh.num_faces < 1:
        raise DegenerateGeometryError("mesh has no faces to sample")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateGeometryError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas)
    face_idx = np.searchsorted(cum, rng.random(n) * total, side="right")
    face_idx = np.minimum(face_idx, len(areas) - 1)
    tri = mesh.vertices[mesh.faces[face_idx]]  # (n, 3, 3)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    return PointCloud(pts)


# ---------------------------------------------------------------------------
# Brute-force chamfer distance: the O(N*M) oracle for the accelerated loss.
# Convention: squared Euclidean distances, mean-reduced per direction, the two
# directions summed.
# ---------------------------------------------------------------------------

def chamfer_bruteforce(a: PointCloud | np.ndarray, b: PointCloud | np.ndarray) -> float:
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)
    if len(pa) < 1 or len(pb) < 1:
        raise ValueError("both clouds must be nonempty")
    min_ab = np.empty(len(pa))
    min_ba = np.full(len(pb), np.inf)
    # chunk rows of a to bound the N*M distance matrix
    chunk = max(1, int(4e6) // max(1, len(pb)))
    for start in range(0, len(pa), chunk):
        block = pa[start:start + chunk]
        d2 = ((block[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
        min_ab[start:start + len(block)] = d2.min(axis=1)
        np.minimum(min_ba, d2.min(axis=0), out=min_ba)
    return float(min_ab.mean() + min_ba.mean())


def nearest_bruteforce(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Index of the nearest ref point for each query point; ties -> lowest index."""
    query = np.asarray(query, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    out = np.empty(len(query), dtype=np.int64)
    chunk = max(1, int(4e6) // max(1, len(ref)))
    for start in range(0, len(query), chunk):
        block = query[start:start + chunk]
        d2 = ((block[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        out[start:start + len(block)] = d2.argmin(axis=1)
    return out


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def topology_summary(mesh: Mesh) -> TopologySummary:
    """Vertex/edge/face counts, Euler characteristic, watertightness.

    Watertight means every undirected edge belongs to exactly two faces.
    """
    edge_use = Counter()
    for i, j, k in mesh.faces:
        for e in ((i, j), (j, k), (k, i)):
            edge_use[(min(e), max(e))] += 1
    v = mesh.num_vertices
    e = len(edge_use)
    f = mesh.num_faces
    watertight = bool(edge_use) and all(c == 2 for c in edge_use.values())
    return TopologySummary(
        vertex_count=v,
        edge_count=e,
        face_count=f,
        euler_characteristic=v - e + f,
        watertight=watertight,
    )
