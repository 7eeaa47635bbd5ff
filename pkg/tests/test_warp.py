import numpy as np
import pytest
from scipy.interpolate import RBFInterpolator

from meshflow import fixtures
from meshflow.geometry import normalize_unit_cube, topology_summary
from meshflow.warp import (
    WarpField,
    apply_warp,
    generate_trajectory,
    identity_warp_field,
    lattice_nodes,
    sample_warp_field,
    solve_rbf_weights,
    warp_displacement,
)


def kernel_sum_oracle(field: WarpField, point: np.ndarray) -> np.ndarray:
    """Scalar-loop evaluation of the interpolant, independent of the solver path."""
    out = np.zeros(3)
    n = len(field.grid_nodes)
    for i, node in enumerate(field.grid_nodes):
        r = float(np.sqrt(((point - node) ** 2).sum()))
        phi = r * r * np.log(r) if r > 0 else 0.0
        out += field.rbf_weights[i] * phi
    poly = np.array([1.0, point[0], point[1], point[2]])
    for k in range(4):
        out += field.rbf_weights[n + k] * poly[k]
    return out


class TestWarpField:
    def test_node_exactness(self):
        field = sample_warp_field(seed=1, sigma=0.05)
        recon = warp_displacement(field, field.grid_nodes)
        assert np.abs(recon - field.node_displacements).max() < 1e-9

    @pytest.mark.parametrize("seed", range(10))
    def test_node_exactness_many_seeds(self, seed):
        field = sample_warp_field(seed=seed, sigma=0.03)
        recon = warp_displacement(field, field.grid_nodes)
        assert np.abs(recon - field.node_displacements).max() < 1e-9

    def test_deterministic_in_seed_and_sigma(self):
        a = sample_warp_field(seed=5, sigma=0.02)
        b = sample_warp_field(seed=5, sigma=0.02)
        assert np.array_equal(a.node_displacements, b.node_displacements)
        assert np.array_equal(a.rbf_weights, b.rbf_weights)
        c = sample_warp_field(seed=6, sigma=0.02)
        assert not np.array_equal(a.node_displacements, c.node_displacements)

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_warp_field(seed=0, sigma=0.0)

    def test_identity_field_is_zero_everywhere(self):
        field = identity_warp_field()
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.5, 0.5, size=(200, 3))
        assert np.abs(warp_displacement(field, pts)).max() == 0.0

    def test_two_nonzero_nodes_match_kernel_sum_oracle(self):
        nodes = lattice_nodes()
        values = np.zeros((27, 3))
        values[3] = [0.1, -0.05, 0.02]
        values[17] = [-0.04, 0.08, 0.01]
        field = WarpField(grid_nodes=nodes, node_displacements=values,
                          rbf_weights=solve_rbf_weights(nodes, values))
        midpoint = (nodes[3] + nodes[17]) / 2.0
        expected = kernel_sum_oracle(field, midpoint)
        got = warp_displacement(field, midpoint[None, :])[0]
        assert np.abs(got - expected).max() < 1e-12

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_scipy_rbf_interpolator(self, seed):
        # independent implementation of the same interpolation problem
        field = sample_warp_field(seed=seed, sigma=0.05)
        rng = np.random.default_rng(seed + 100)
        queries = rng.uniform(-0.6, 0.6, size=(50, 3))
        ours = warp_displacement(field, queries)
        ref = RBFInterpolator(field.grid_nodes, field.node_displacements,
                              kernel="thin_plate_spline", degree=1)(queries)
        assert np.abs(ours - ref).max() < 1e-9

    def test_smoothness_of_interpolant(self):
        field = sample_warp_field(seed=2, sigma=0.05)
        p = np.array([[0.13, -0.21, 0.04]])
        h = 1e-6
        base = warp_displacement(field, p)
        for axis in range(3):
            dp = np.zeros((1, 3))
            dp[0, axis] = h
            step = warp_displacement(field, p + dp)
            assert np.abs(step - base).max() < 1e-4  # continuous, no jumps


class TestApplyWarp:
    def test_identity_field_keeps_mesh(self):
        mesh, _ = normalize_unit_cube(fixtures.icosahedron())
        out = apply_warp(mesh, identity_warp_field())
        assert np.array_equal(out.vertices, mesh.vertices)
        assert out.faces is mesh.faces

    def test_topology_preserved(self):
        mesh, _ = normalize_unit_cube(fixtures.torus(10, 6))
        out = apply_warp(mesh, sample_warp_field(seed=3, sigma=0.03))
        assert topology_summary(out) == topology_summary(mesh)

    def test_single_triangle_against_oracle(self):
        tri_verts = np.array([[0.1, 0.0, -0.2], [0.4, 0.1, 0.0], [-0.3, 0.2, 0.3]])
        from meshflow.geometry import Mesh
        mesh = Mesh(tri_verts, np.array([[0, 1, 2]]))
        field = sample_warp_field(seed=9, sigma=0.04)
        out = apply_warp(mesh, field)
        for i in range(3):
            expected = tri_verts[i] + kernel_sum_oracle(field, tri_verts[i])
            assert np.abs(out.vertices[i] - expected).max() < 1e-9


class TestTrajectory:
    def test_single_step(self):
        mesh, _ = normalize_unit_cube(fixtures.tetrahedron())
        field = sample_warp_field(seed=0, sigma=0.02)
        traj = generate_trajectory(mesh, field, 1)
        assert len(traj.steps) == 2
        assert traj.steps[0] is mesh
        assert np.array_equal(traj.steps[1].vertices, apply_warp(mesh, field).vertices)

    def test_identity_field_all_steps_equal(self):
        mesh, _ = normalize_unit_cube(fixtures.box())
        traj = generate_trajectory(mesh, identity_warp_field(), 50)
        for step in traj.steps:
            assert np.array_equal(step.vertices, mesh.vertices)

    def test_composition(self):
        mesh, _ = normalize_unit_cube(fixtures.icosahedron())
        field = sample_warp_field(seed=4, sigma=0.02)
        traj = generate_trajectory(mesh, field, 3)
        twice = apply_warp(apply_warp(mesh, field), field)
        assert np.array_equal(traj.steps[2].vertices, twice.vertices)

    def test_faces_shared_across_steps(self):
        mesh, _ = normalize_unit_cube(fixtures.cone(8))
        traj = generate_trajectory(mesh, sample_warp_field(seed=5, sigma=0.02), 4)
        for step in traj.steps:
            assert step.faces is mesh.faces

    def test_n_steps_validated(self):
        mesh, _ = normalize_unit_cube(fixtures.box())
        with pytest.raises(ValueError):
            generate_trajectory(mesh, identity_warp_field(), 0)
