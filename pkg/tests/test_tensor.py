"""Finite-difference and invariant tests for the autodiff engine."""

import numpy as np
import pytest

from hstformer import tensor as T
from hstformer.tensor import ShapeError, Tensor, grad_check

RNG = np.random.default_rng(1234)
N_CASES = 100


def rand_shape(rng, max_rank=3, max_extent=5):
    rank = int(rng.integers(1, max_rank + 1))
    return tuple(int(rng.integers(1, max_extent + 1)) for _ in range(rank))


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor(np.array([[3.0, 4.0], [5.0, 6.0]]))
    assert np.array_equal(T.matmul(a, b).data, b.data)


def test_matmul_zero():
    out = T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.ones((3, 2))))
    assert np.array_equal(out.data, np.zeros((2, 2)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradcheck_reference_case():
    rng = np.random.default_rng(7)
    b = rng.normal(size=(4, 2))
    a = rng.normal(size=(3, 4))
    err = grad_check(lambda t: T.tensor_sum(T.matmul(t, Tensor(b))), a)
    assert err < 1e-6


def test_matmul_gradcheck_randomized():
    for _ in range(N_CASES):
        m, k, n = (int(RNG.integers(1, 5)) for _ in range(3))
        a = RNG.normal(size=(m, k))
        b = RNG.normal(size=(k, n))
        w = RNG.normal(size=(m, n))  # weighting makes the scalar nontrivial
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.matmul(t, Tensor(b)), Tensor(w))), a)
        assert err < 1e-6
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.matmul(Tensor(a), t), Tensor(w))), b)
        assert err < 1e-6


def test_matmul_batched_gradcheck():
    for _ in range(20):
        a = RNG.normal(size=(2, 3, 4))
        b = RNG.normal(size=(2, 4, 2))
        w = RNG.normal(size=(2, 3, 2))
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.matmul(t, Tensor(b)), Tensor(w))), a)
        assert err < 1e-6
        # broadcast of b over the leading axis
        b2 = RNG.normal(size=(4, 2))
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.matmul(Tensor(a), t), Tensor(w))), b2)
        assert err < 1e-6


def test_layer_norm_constant_input_is_zero():
    x = Tensor(np.full((3,), 7.3))
    out = T.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)))
    assert np.allclose(out.data, 0.0, atol=1e-3)


def test_layer_norm_hand_computed():
    x = Tensor(np.array([1.0, 2.0, 3.0]))
    out = T.layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)
    assert np.allclose(out.data, [-1.224745, 0.0, 1.224745], atol=1e-6)


def test_layer_norm_width_mismatch():
    with pytest.raises(ShapeError):
        T.layer_norm(Tensor(np.zeros((2, 5))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


def test_layer_norm_gradcheck():
    for _ in range(N_CASES):
        d = int(RNG.integers(2, 7))
        x = RNG.normal(size=(int(RNG.integers(1, 4)), d))
        gamma = RNG.normal(size=d)
        beta = RNG.normal(size=d)
        w = RNG.normal(size=x.shape)
        err = grad_check(lambda t: T.tensor_sum(
            T.mul(T.layer_norm(t, Tensor(gamma), Tensor(beta)), Tensor(w))), x)
        assert err < 1e-6
        err = grad_check(lambda t: T.tensor_sum(
            T.mul(T.layer_norm(Tensor(x), t, Tensor(beta)), Tensor(w))), gamma)
        assert err < 1e-6
        err = grad_check(lambda t: T.tensor_sum(
            T.mul(T.layer_norm(Tensor(x), Tensor(gamma), t), Tensor(w))), beta)
        assert err < 1e-6


def test_softmax_uniform():
    out = T.softmax(Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.25)


def test_softmax_overflow_stability():
    out = T.softmax(Tensor(np.array([3.0, 1003.0])))
    assert np.isfinite(out.data).all()
    assert np.allclose(out.data, [0.0, 1.0], atol=1e-12)


def test_softmax_rows_sum_to_one():
    for _ in range(N_CASES):
        x = RNG.normal(scale=10.0, size=rand_shape(RNG))
        y = T.softmax(Tensor(x)).data
        assert np.all(y >= 0.0)
        assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_gradcheck():
    for _ in range(N_CASES):
        n = int(RNG.integers(2, 8))
        x = RNG.normal(size=n)
        w = RNG.normal(size=n)
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.softmax(t), Tensor(w))), x)
        assert err < 1e-6


def test_gelu_gradcheck():
    for _ in range(N_CASES):
        x = RNG.normal(size=rand_shape(RNG))
        err = grad_check(lambda t: T.tensor_sum(T.gelu(t)), x)
        assert err < 1e-6


def test_reshape_roundtrip_identity():
    x = RNG.normal(size=(3, 17, 4))
    t = Tensor(x)
    back = T.reshape(T.reshape(t, (3, 17 * 4)), (3, 17, 4))
    assert np.array_equal(back.data, x)


def test_transpose_roundtrip_identity():
    x = RNG.normal(size=(2, 3, 4, 5))
    out = T.transpose(T.transpose(Tensor(x), (0, 2, 1, 3)), (0, 2, 1, 3))
    assert np.array_equal(out.data, x)


def test_concat_last_axis_shape():
    parts = [Tensor(RNG.normal(size=(3, 17, 8))) for _ in range(4)]
    assert T.concat(parts, axis=-1).shape == (3, 17, 32)


def test_reshape_transpose_concat_slice_gradcheck():
    for _ in range(N_CASES):
        x = RNG.normal(size=(2, 3, 4))
        w = RNG.normal(size=(4, 2, 3))

        def f(t):
            y = T.transpose(T.reshape(t, (2, 3, 4)), (2, 0, 1))
            return T.tensor_sum(T.mul(y, Tensor(w)))

        assert grad_check(f, x) < 1e-6

        w2 = RNG.normal(size=(2, 3, 4))

        def g(t):
            a = T.slice_axis(t, 1, 0, 2)
            b = T.slice_axis(t, 1, 2, 3)
            return T.tensor_sum(T.mul(T.concat([a, b], axis=1), Tensor(w2)))

        assert grad_check(g, x) < 1e-6


def test_index_select_with_repeats_gradcheck():
    for _ in range(30):
        x = RNG.normal(size=(3, 5))
        idx = RNG.integers(0, 5, size=4)
        w = RNG.normal(size=(3, 4))
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.index_select(t, 1, idx), Tensor(w))), x)
        assert err < 1e-6


def test_add_mul_broadcast_gradcheck():
    for _ in range(N_CASES):
        x = RNG.normal(size=(3, 4))
        b = RNG.normal(size=4)
        w = RNG.normal(size=(3, 4))
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.add(Tensor(x), t), Tensor(w))), b)
        assert err < 1e-6
        err = grad_check(lambda t: T.tensor_sum(T.mul(T.mul(Tensor(x), t), Tensor(w))), b)
        assert err < 1e-6


def test_l2norm_gradcheck_away_from_zero():
    for _ in range(N_CASES):
        x = RNG.normal(size=(3, 3)) + np.sign(RNG.normal(size=(3, 3))) * 0.5
        err = grad_check(lambda t: T.tensor_sum(T.l2norm_last(t)), x)
        assert err < 1e-5


def test_l2norm_zero_subgradient():
    t = Tensor(np.zeros((2, 3)), requires_grad=True)
    out = T.tensor_sum(T.l2norm_last(t))
    out.backward()
    assert np.array_equal(t.grad, np.zeros((2, 3)))


def test_grad_check_linear_function():
    x = RNG.normal(size=(4,))
    assert grad_check(lambda t: T.tensor_sum(t), x) < 1e-10


def test_grad_check_quadratic_exact():
    err = grad_check(lambda t: T.tensor_sum(T.mul(t, t)), np.array([1.0, 2.0]))
    assert err < 1e-9


def test_grad_check_rejects_nonscalar():
    with pytest.raises(ShapeError):
        grad_check(lambda t: t, np.zeros(3))


def test_backward_requires_scalar():
    t = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        t.backward()


def test_reused_tensor_accumulates_grad():
    t = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    out = T.tensor_sum(T.add(T.mul(t, t), t))  # x^2 + x -> grad 2x + 1
    out.backward()
    assert np.allclose(t.grad, [5.0, 7.0])


def test_forward_backward_deterministic():
    x = RNG.normal(size=(3, 4))
    w = RNG.normal(size=(4, 4))

    def run():
        t = Tensor(x.copy(), requires_grad=True)
        out = T.tensor_sum(T.softmax(T.gelu(T.matmul(t, Tensor(w.copy())))))
        out.backward()
        return out.data.copy(), t.grad.copy()

    o1, g1 = run()
    o2, g2 = run()
    assert np.array_equal(o1, o2)
    assert np.array_equal(g1, g2)


def test_values_finite_after_forward_backward():
    t = Tensor(RNG.normal(scale=50.0, size=(4, 6)), requires_grad=True)
    out = T.tensor_sum(T.softmax(T.layer_norm(
        t, Tensor(np.ones(6)), Tensor(np.zeros(6)))))
    out.backward()
    assert np.isfinite(out.data).all()
    assert np.isfinite(t.grad).all()
