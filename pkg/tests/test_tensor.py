"""Tensor core: forward semantics, autodiff, and the gradient checker."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpcanet import tensor as T
from lpcanet.tensor import ShapeError, Tensor, gradcheck, no_grad


def rand(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape))


class TestForward:
    def test_matmul_hand_oracle(self):
        a = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        b = Tensor(np.array([[[5.0, 6.0], [7.0, 8.0]]]))
        out = T.matmul_batched(a, b)
        np.testing.assert_array_equal(out.data, [[[19.0, 22.0], [43.0, 50.0]]])

    def test_matmul_counts_mult_adds(self):
        a = Tensor(np.zeros((2, 3, 4)))
        b = Tensor(np.zeros((2, 4, 5)))
        with T.count_mult_adds() as counter:
            T.matmul_batched(a, b)
        assert counter[0] == 2 * 3 * 4 * 5

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul_batched(Tensor(np.zeros((1, 2, 3))), Tensor(np.zeros((1, 4, 5))))

    def test_add_broadcasts_channel_bias(self):
        x = Tensor(np.ones((2, 3, 4, 4)))
        b = Tensor(np.arange(3.0).reshape(1, 3, 1, 1))
        out = T.add(x, b)
        assert out.shape == (2, 3, 4, 4)
        np.testing.assert_array_equal(out.data[:, 1], 2.0)

    def test_add_rejects_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = T.softmax(rand(rng, (5, 9), -30, 30))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_stable_for_large_logits(self):
        out = T.softmax(Tensor(np.array([[1000.0, 1000.0, -1000.0]])))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.0]], atol=1e-12)

    def test_softmax_rejects_nan(self):
        with pytest.raises(ValueError):
            T.softmax(Tensor(np.array([[np.nan, 0.0]])))

    def test_sigmoid_extremes(self):
        out = T.sigmoid(Tensor(np.array([-1e4, 0.0, 1e4])))
        np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0], atol=1e-12)

    def test_relu_clamp_values(self):
        x = Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0]))
        np.testing.assert_array_equal(T.relu(x).data, [0, 0, 0, 0.5, 2.0])
        np.testing.assert_array_equal(T.clamp(x, -1.0, 1.0).data, [-1, -0.5, 0, 0.5, 1.0])

    def test_concat_channels(self):
        a = Tensor(np.ones((1, 2, 3, 3)))
        b = Tensor(np.zeros((1, 3, 3, 3)))
        out = T.concat_channels(a, b)
        assert out.shape == (1, 5, 3, 3)
        np.testing.assert_array_equal(out.data[:, :2], 1.0)
        np.testing.assert_array_equal(out.data[:, 2:], 0.0)

    @given(st.integers(2, 6), st.integers(2, 6))
    @settings(max_examples=25, deadline=None)
    def test_softmax_rows_sum_to_one_property(self, rows, cols):
        rng = np.random.default_rng(rows * 31 + cols)
        out = T.softmax(rand(rng, (rows, cols), -20, 20))
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out.data >= 0)


class TestBackward:
    def test_sum_all_grad_is_ones(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2), requires_grad=True)
        T.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((1, 1, 2, 2)))

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor(np.ones(3), requires_grad=True)
        T.sum_all(x).backward()
        T.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, 2 * np.ones(3))

    def test_shared_leaf_used_twice_sums_contributions(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        T.sum_all(T.mul(x, x)).backward()  # d/dx sum(x^2) = 2x
        np.testing.assert_allclose(x.grad, [4.0, 6.0])

    def test_clamp_grad_zero_outside_range(self):
        x = Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
        T.sum_all(T.clamp(x, -1.0, 1.0)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_no_grad_builds_no_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = T.mul(x, x)
        assert y._parents == ()
        assert y._backward is None

    def test_backward_deterministic_bit_identical(self):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((2, 3, 4))
        grads = []
        for _ in range(2):
            x = Tensor(data.copy(), requires_grad=True)
            w = Tensor(np.abs(data) + 0.5)
            T.sum_all(T.mul(T.softmax(T.relu(x)), w)).backward()
            grads.append(x.grad.copy())
        assert np.array_equal(grads[0], grads[1])

    def test_deep_chain_backward_is_iterative(self):
        # thousands of nodes would blow the recursion limit if backward recursed
        x = Tensor(np.ones(2), requires_grad=True)
        y = x
        for _ in range(5000):
            y = T.scale(y, 1.0)
        T.sum_all(y).backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])


class TestGradcheck:
    def test_matmul_gradcheck(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, (2, 3, 4)), rand(rng, (2, 4, 5))
        w = Tensor(rng.uniform(-1, 1, (2, 3, 5)))
        err = gradcheck(lambda x, y: T.sum_all(T.mul(T.matmul_batched(x, y), w)), [a, b])
        assert err < 1e-6

    def test_softmax_row_gradcheck(self):
        rng = np.random.default_rng(1)
        x = rand(rng, (1, 7))
        w = Tensor(rng.uniform(-1, 1, (1, 7)))
        err = gradcheck(lambda t: T.sum_all(T.mul(T.softmax(t), w)), [x])
        assert err < 1e-6

    def test_relu_gradcheck_away_from_kink(self):
        rng = np.random.default_rng(2)
        data = rng.uniform(1e-2, 1.0, (2, 3, 4, 4)) * rng.choice([-1.0, 1.0], (2, 3, 4, 4))
        err = gradcheck(lambda t: T.sum_all(T.relu(t)), [Tensor(data)], eps=1e-6)
        assert err < 1e-6

    def test_gradcheck_requires_f64(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        with pytest.raises(ValueError):
            gradcheck(lambda t: T.sum_all(t), [x])

    def test_gradcheck_flags_wrong_backward(self):
        rng = np.random.default_rng(3)
        x = rand(rng, (2, 3))

        def doubled_square(t):
            def backward(g):
                return (4.0 * g * t.data,)  # correct gradient is 2*t

            return T._result(t.data**2, (t,), backward)

        err = gradcheck(lambda t: T.sum_all(doubled_square(t)), [x])
        assert err > 0.1
