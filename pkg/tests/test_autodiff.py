import numpy as np
import pytest

import meshflow.autodiff as ad
from meshflow.autodiff import BatchNormState, Parameter, Tape, Tensor
from meshflow.errors import ConfigError, NumericError, ShapeError
from meshflow.gradcheck import grad_check
from meshflow.optim import AdamState, adam_step, clear_grads


class TestPointwiseLinear:
    def test_identity_weights(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        out = ad.pointwise_linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.array_equal(out.data, x.data)

    def test_hand_computed(self):
        x = Tensor([[1.0, 2.0], [3.0, -1.0]])
        w = Tensor([[1.0, 0.5], [-1.0, 2.0]])
        b = Tensor([0.25, -0.5])
        out = ad.pointwise_linear(x, w, b)
        #   row0: [1*1 + 2*(-1) + 0.25, 1*0.5 + 2*2 - 0.5]   = [-0.75, 4.0]
        #   row1: [3*1 + (-1)*(-1) + 0.25, 3*0.5 - 1*2 - 0.5] = [4.25, -1.0]
        assert np.allclose(out.data, [[-0.75, 4.0], [4.25, -1.0]], atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.pointwise_linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))),
                                Tensor(np.zeros(5)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)

        def graph(ts):
            x, w, b = ts
            return ad.sum_all(ad.pointwise_linear(x, w, b))

        err = grad_check(graph, [rng.standard_normal((4, 3)),
                                 rng.standard_normal((3, 5)),
                                 rng.standard_normal(5)], rng=rng)
        assert err < 1e-8


class TestElementwiseOps:
    def test_relu_values(self):
        out = ad.relu(Tensor([[-1.0, 2.0, 0.0]]))
        assert np.array_equal(out.data, [[0.0, 2.0, 0.0]])

    def test_two_op_chain_gradient(self):
        rng = np.random.default_rng(7)

        def graph(ts):
            x, w = ts
            return ad.sum_all(ad.relu(ad.pointwise_linear(x, w, Tensor(np.zeros(4)))))

        err = grad_check(graph, [rng.standard_normal((3, 2)),
                                 rng.standard_normal((2, 4))], rng=rng)
        assert err < 1e-6

    @pytest.mark.parametrize("op", [ad.tanh, ad.exp])
    def test_smooth_unary_gradients(self, op):
        rng = np.random.default_rng(11)

        def graph(ts):
            return ad.sum_all(op(ts[0]))

        err = grad_check(graph, [rng.standard_normal((4, 3)) * 0.5], rng=rng)
        assert err < 1e-8

    def test_mul_broadcast_gradient(self):
        rng = np.random.default_rng(13)

        def graph(ts):
            x, m = ts
            return ad.sum_all(ad.mul(x, m))

        err = grad_check(graph, [rng.standard_normal((5, 3)),
                                 rng.standard_normal((1, 3))], rng=rng)
        assert err < 1e-8

    def test_column_surgery_gradient(self):
        rng = np.random.default_rng(17)

        def graph(ts):
            x = ts[0]
            col = ad.slice_column(x, 1)
            return ad.sum_all(ad.mul(ad.pad_column(col, 2, 3), Tensor(np.full((4, 3), 2.0))))

        err = grad_check(graph, [rng.standard_normal((4, 3))], rng=rng)
        assert err < 1e-8

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_non_finite_output_raises(self):
        with pytest.raises(NumericError):
            ad.exp(Tensor([[1000.0]]))
        with pytest.raises(NumericError):
            ad.mul(Tensor([[1e308]]), Tensor([[1e308]]))


class TestConcatBroadcast:
    def test_single_row_is_plain_concat(self):
        out = ad.concat_broadcast(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]))
        assert np.array_equal(out.data, [[1.0, 2.0, 3.0, 4.0]])

    def test_row_repeated_per_point(self):
        out = ad.concat_broadcast(Tensor(np.zeros((3, 1))), Tensor([[7.0, 9.0]]))
        assert np.array_equal(out.data[:, 1:], np.tile([7.0, 9.0], (3, 1)))

    def test_gradient(self):
        rng = np.random.default_rng(19)

        def graph(ts):
            per_point, glob = ts
            cat = ad.concat_broadcast(per_point, glob)
            return ad.sum_all(ad.mul(cat, cat))

        err = grad_check(graph, [rng.standard_normal((4, 2)),
                                 rng.standard_normal((1, 3))], rng=rng)
        assert err < 1e-6


class TestMaxPool:
    def test_values_and_routing(self):
        x = Tensor([[1.0, 5.0], [3.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            out = ad.maxpool_points(x)
            loss = ad.sum_all(out)
        assert np.array_equal(out.data, [[3.0, 5.0]])
        tape.backward(loss)
        assert np.array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])

    def test_tie_routes_to_first_index(self):
        x = Tensor([[2.0], [2.0], [1.0]], requires_grad=True)
        with Tape() as tape:
            loss = ad.sum_all(ad.maxpool_points(x))
        tape.backward(loss)
        assert np.array_equal(x.grad, [[1.0], [0.0], [0.0]])

    def test_permutation_invariant_value(self):
        rng = np.random.default_rng(23)
        x = rng.standard_normal((50, 8))
        out = ad.maxpool_points(Tensor(x)).data
        perm = ad.maxpool_points(Tensor(x[rng.permutation(50)])).data
        assert np.array_equal(out, perm)


class TestBatchNorm:
    def test_constant_channel_maps_to_beta(self):
        state = BatchNormState.create(2)
        x = Tensor(np.full((5, 2), 3.0))
        gamma = Tensor(np.array([2.0, -1.0]))
        beta = Tensor(np.array([0.5, 1.5]))
        out = ad.batchnorm_points(x, gamma, beta, state, mode="train")
        assert np.allclose(out.data, np.tile([0.5, 1.5], (5, 1)), atol=1e-12)

    def test_running_stats_momentum_update(self):
        state = BatchNormState.create(1)
        x = np.array([[1.0], [3.0]])
        ad.batchnorm_points(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                            state, mode="train")
        assert np.allclose(state.running_mean, 0.9 * 0.0 + 0.1 * 2.0)
        assert np.allclose(state.running_var, 0.9 * 1.0 + 0.1 * 1.0)

    def test_eval_mode_uses_stored_stats(self):
        state = BatchNormState.create(1)
        state.running_mean = np.array([2.0])
        state.running_var = np.array([4.0])
        out = ad.batchnorm_points(Tensor([[4.0]]), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                                  state, mode="eval")
        assert np.allclose(out.data, (4.0 - 2.0) / np.sqrt(4.0 + 1e-5), atol=1e-12)

    def test_train_mode_needs_two_points(self):
        state = BatchNormState.create(1)
        with pytest.raises(ConfigError):
            ad.batchnorm_points(Tensor([[1.0]]), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                                state, mode="train")

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_gradient(self, mode):
        rng = np.random.default_rng(29)
        state = BatchNormState.create(3)
        state.running_mean = rng.standard_normal(3) * 0.1
        state.running_var = rng.uniform(0.5, 2.0, 3)

        def graph(ts):
            x, gamma, beta = ts
            out = ad.batchnorm_points(x, gamma, beta, state, mode=mode)
            return ad.sum_all(ad.mul(out, out))

        err = grad_check(graph, [rng.standard_normal((6, 3)),
                                 rng.uniform(0.5, 1.5, 3),
                                 rng.standard_normal(3)], rng=rng)
        assert err < 1e-6


class TestTapeAndBackward:
    def test_sum_of_parameter_gives_ones(self):
        p = Parameter(np.zeros((2, 3)), "p")
        with Tape() as tape:
            loss = ad.sum_all(p)
        tape.backward(loss)
        assert np.array_equal(p.grad, np.ones((2, 3)))

    def test_backward_on_non_scalar_raises(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with Tape() as tape:
            out = ad.relu(x)
        with pytest.raises(ShapeError):
            tape.backward(out)

    def test_unused_parameter_has_zero_grad(self):
        used = Parameter(np.ones(3), "used")
        unused = Parameter(np.ones(3), "unused")
        with Tape() as tape:
            loss = ad.sum_all(used)
        tape.backward(loss)
        assert np.array_equal(unused.grad_or_zeros(), np.zeros(3))

    def test_grad_accumulates_over_reuse(self):
        p = Parameter(np.array([2.0]), "p")
        with Tape() as tape:
            loss = ad.sum_all(ad.mul(p, p))  # d(p^2)/dp = 2p
        tape.backward(loss)
        assert np.allclose(p.grad, [4.0])

    def test_ops_work_without_tape(self):
        out = ad.relu(Tensor([[1.0, -1.0]]))
        assert np.array_equal(out.data, [[1.0, 0.0]])

    def test_gradcheck_requires_rng_at_tie(self):
        def graph(ts):
            return ad.sum_all(ad.relu(ts[0]))

        with pytest.raises(ValueError, match="tie"):
            grad_check(graph, [np.zeros((2, 2))], rng=None)


class TestAdam:
    def test_first_step_matches_canonical_formula(self):
        rng = np.random.default_rng(31)
        data = rng.standard_normal((4, 2))
        g = rng.standard_normal((4, 2))
        p = Parameter(data.copy(), "p")
        p.grad = g.copy()
        adam_step([p], AdamState(), lr=1e-2)
        m_hat = (0.1 * g) / (1 - 0.9)
        v_hat = (0.001 * g * g) / (1 - 0.999)
        expected = data - 1e-2 * m_hat / (np.sqrt(v_hat) + 1e-8)
        assert np.allclose(p.data, expected, rtol=1e-12, atol=1e-14)

    def test_zero_gradient_is_noop(self):
        p = Parameter(np.ones(3), "p")
        state = AdamState()
        p.grad = np.zeros(3)
        adam_step([p], state, lr=1.0)
        assert np.array_equal(p.data, np.ones(3))
        p.grad = None
        adam_step([p], state, lr=1.0)
        assert np.array_equal(p.data, np.ones(3))

    def test_frozen_parameter_untouched(self):
        p = Parameter(np.ones(3), "p", trainable=False)
        p.grad = np.ones(3)
        adam_step([p], AdamState(), lr=1.0)
        assert np.array_equal(p.data, np.ones(3))

    def test_clear_grads(self):
        p = Parameter(np.ones(3), "p")
        p.grad = np.ones(3)
        clear_grads([p])
        assert p.grad is None
