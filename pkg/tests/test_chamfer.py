import numpy as np
import pytest

from meshflow.autodiff import Tape, Tensor
from meshflow.chamfer import _nearest, chamfer_accelerated, chamfer_loss
from meshflow.errors import ShapeError
from meshflow.geometry import chamfer_bruteforce, nearest_bruteforce
from meshflow.gradcheck import grad_check


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((int(rng.integers(1, 500)), 3))
        b = rng.standard_normal((int(rng.integers(1, 500)), 3))
        assert abs(chamfer_accelerated(a, b) - chamfer_bruteforce(a, b)) < 1e-12

    def test_loss_value_matches_bruteforce(self):
        rng = np.random.default_rng(100)
        a = rng.standard_normal((64, 3))
        b = rng.standard_normal((80, 3))
        loss = chamfer_loss(Tensor(a), Tensor(b))
        assert abs(float(loss.data) - chamfer_bruteforce(a, b)) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_tree_indices_match_bruteforce_argmin(self, seed):
        # random clouds have no exact ties, so the neighbor indices themselves
        # must agree with the lowest-index argmin oracle
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((120, 3))
        b = rng.standard_normal((90, 3))
        assert np.array_equal(_nearest(a, b), nearest_bruteforce(a, b))
        assert np.array_equal(_nearest(b, a), nearest_bruteforce(b, a))

    def test_clustered_clouds(self):
        # tight clusters stress the tree's pruning but values must still agree
        rng = np.random.default_rng(3)
        centers = rng.standard_normal((5, 3)) * 10
        a = np.concatenate([c + 1e-4 * rng.standard_normal((40, 3)) for c in centers])
        b = np.concatenate([c + 1e-4 * rng.standard_normal((40, 3)) for c in centers[:3]])
        assert abs(chamfer_accelerated(a, b) - chamfer_bruteforce(a, b)) < 1e-12


class TestLoss:
    def test_identical_clouds_zero_loss_zero_grad(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((30, 3))
        pred = Tensor(pts.copy(), requires_grad=True)
        with Tape() as tape:
            loss = chamfer_loss(pred, Tensor(pts.copy()))
        assert float(loss.data) == 0.0
        tape.backward(loss)
        assert np.array_equal(pred.grad, np.zeros((30, 3)))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((25, 3))
        b = rng.standard_normal((35, 3))
        ref = float(chamfer_loss(Tensor(a), Tensor(b)).data)
        shuffled = float(chamfer_loss(Tensor(a[rng.permutation(25)]),
                                      Tensor(b[rng.permutation(35)])).data)
        assert shuffled == ref

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            chamfer_loss(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_both_arguments(self, seed):
        rng = np.random.default_rng(seed)

        def graph(ts):
            return chamfer_loss(ts[0], ts[1])

        err = grad_check(graph, [rng.standard_normal((8, 3)),
                                 rng.standard_normal((8, 3))], rng=rng)
        assert err < 1e-5

    def test_gradient_flows_through_both_directions(self):
        # a pred point that is nobody's nearest neighbor still gets a gradient
        # from the pred->target direction
        pred = Tensor(np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]), requires_grad=True)
        target = Tensor(np.array([[1.0, 0.0, 0.0]]))
        with Tape() as tape:
            loss = chamfer_loss(pred, target)
        tape.backward(loss)
        assert pred.grad[1][0] != 0.0  # far point pulled toward the target along x
        # value: pred->target mean((1)^2, (9)^2) = 41, target->pred min = 1
        assert float(loss.data) == pytest.approx(42.0, abs=1e-12)
