"""Synthetic deformation fields.

A warp field is built by drawing i.i.d. Gaussian displacement vectors on a
regular 3x3x3 lattice spanning the normalized bounding cube and interpolating
them into a continuous field with a thin-plate-spline RBF (r^2 log r kernel
plus a linear polynomial term). Applying the same field repeatedly to a mesh
produces a deformation trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .errors import NumericError
from .geometry import Mesh

# lattice over the normalized cube [-0.5, 0.5]^3
_GRID_1D = np.array([-0.5, 0.0, 0.5])


def lattice_nodes() -> np.ndarray:
    """The 27 nodes of the 3x3x3 lattice, ordered x-major."""
    gx, gy, gz = np.meshgrid(_GRID_1D, _GRID_1D, _GRID_1D, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def _tps_kernel(r: np.ndarray) -> np.ndarray:
    # r^2 log r, continuously extended by 0 at r = 0
    return xlogy(r * r, r)


def _poly_terms(points: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ones((len(points), 1)), points], axis=1)


@dataclass
class WarpField:
    """Thin-plate-spline interpolant of lattice displacements.

    rbf_weights has shape (27 + 4, 3): kernel coefficients for each node plus
    the linear polynomial coefficients, one column per displacement component.
    The interpolant reproduces node_displacements exactly at the nodes.
    """

    grid_nodes: np.ndarray
    node_displacements: np.ndarray
    rbf_weights: np.ndarray
    kernel: str = "thin_plate_spline"
    seed: int | None = None
    sigma: float | None = None


def solve_rbf_weights(nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Solve the TPS interpolation system for the given node values.

    Standard augmented system: [[K, P], [P^T, 0]] [w; c] = [values; 0] with K
    the kernel matrix and P the linear polynomial block. Exact interpolation,
    not regression.
    """
    n = len(nodes)
    diffs = nodes[:, None, :] - nodes[None, :, :]
    kernel = _tps_kernel(np.linalg.norm(diffs, axis=2))
    poly = _poly_terms(nodes)
    system = np.zeros((n + 4, n + 4))
    system[:n, :n] = kernel
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    rhs = np.zeros((n + 4, values.shape[1]))
    rhs[:n] = values
    try:
        weights = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular RBF system: {exc}") from None
    return weights


def sample_warp_field(seed: int, sigma: float) -> WarpField:
    """Draw node displacements ~ N(0, sigma^2) per component and fit the RBF."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    nodes = lattice_nodes()
    rng = np.random.default_rng(seed)
    displacements = rng.normal(0.0, sigma, size=(len(nodes), 3))
    weights = solve_rbf_weights(nodes, displacements)
    return WarpField(
        grid_nodes=nodes,
        node_displacements=displacements,
        rbf_weights=weights,
        seed=seed,
        sigma=sigma,
    )


def identity_warp_field() -> WarpField:
    """Field with zero displacement everywhere (useful as a null case)."""
    nodes = lattice_nodes()
    zeros = np.zeros((len(nodes), 3))
    return WarpField(
        grid_nodes=nodes,
        node_displacements=zeros,
        rbf_weights=np.zeros((len(nodes) + 4, 3)),
    )


def warp_displacement(field: WarpField, points: np.ndarray) -> np.ndarray:
    """Evaluate the displacement interpolant at arbitrary points, (N, 3) in/out."""
    points = np.asarray(points, dtype=np.float64)
    if not np.isfinite(points).all():
        raise ValueError("query points must be finite")
    n = len(field.grid_nodes)
    dists = np.linalg.norm(points[:, None, :] - field.grid_nodes[None, :, :], axis=2)
    basis = np.concatenate([_tps_kernel(dists), _poly_terms(points)], axis=1)
    return basis @ field.rbf_weights


def apply_warp(mesh: Mesh, field: WarpField) -> Mesh:
    """Move every vertex by the field; the face list is untouched."""
    moved = mesh.vertices + warp_displacement(field, mesh.vertices)
    if not np.isfinite(moved).all():
        raise NumericError("warp produced non-finite vertex positions")
    return mesh.with_vertices(moved)


@dataclass
class Trajectory:
    """Consecutive applications of one warp field: steps[k] = field^k(template)."""

    template_id: str
    warp: WarpField
    steps: list[Mesh] = field(default_factory=list)


def generate_trajectory(template: Mesh, warp_field: WarpField, n_steps: int,
                        template_id: str = "") -> Trajectory:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    steps = [template]
    for _ in range(n_steps):
        steps.append(apply_warp(steps[-1], warp_field))
    return Trajectory(template_id=template_id, warp=warp_field, steps=steps)
