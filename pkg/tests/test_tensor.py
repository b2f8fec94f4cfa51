import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from grokwatch import tensor as T
from grokwatch.tensor import Tensor

from conftest import central_diff, rel_err


def naive_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def check_grads(build, inputs, rng, n_coords=6, tol=1e-6):
    """Compare analytic grads of sum(w * build(*inputs)) with central differences."""
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    probe = rng.standard_normal(build(*tensors).shape)

    def loss_value():
        return float((build(*[Tensor(t.data) for t in tensors]).data * probe).sum())

    out = build(*tensors)
    T.sum(T.mul(out, Tensor(probe))).backward()
    for t in tensors:
        for _ in range(n_coords):
            idx = tuple(rng.integers(0, s) for s in t.shape)
            num = central_diff(loss_value, t.data, idx)
            assert rel_err(t.grad[idx], num) < tol, (idx, t.grad[idx], num)


def test_matmul_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)


def test_matmul_hand_case():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradients(rng):
    check_grads(T.matmul, [rng.standard_normal((4, 5)), rng.standard_normal((5, 3))], rng)
    check_grads(T.matmul, [rng.standard_normal((2, 3, 4, 5)), rng.standard_normal((2, 3, 5, 2))], rng)
    check_grads(T.matmul, [rng.standard_normal((2, 3, 5)), rng.standard_normal((5, 4))], rng)


def test_softmax_uniform_and_saturated():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    out = T.softmax(Tensor([1000.0, 0.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-300)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-700, 700)))
def test_softmax_sums_to_one(x):
    s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_gradient(rng):
    check_grads(lambda x: T.softmax(x, axis=-1), [rng.standard_normal((3, 5))], rng)
    check_grads(lambda x: T.softmax(x, axis=0), [rng.standard_normal((4, 2))], rng)


def test_layer_norm_examples():
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_allclose(T.layer_norm(Tensor(np.full((1, 4), 3.0)), g, b).data, 0.0, atol=1e-12)
    out = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-9)
    with pytest.raises(ValueError):
        T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


def test_layer_norm_gradient(rng):
    check_grads(lambda x, g, b: T.layer_norm(x, g, b),
                [rng.standard_normal((3, 2, 6)), 1 + 0.1 * rng.standard_normal(6), rng.standard_normal(6)], rng)


def test_cross_entropy_closed_forms():
    loss = T.cross_entropy(Tensor(np.zeros((4, 97))), np.array([0, 5, 96, 3]))
    assert float(loss.data) == pytest.approx(np.log(97), abs=1e-12)
    assert np.log(97) == pytest.approx(4.5747, abs=1e-4)
    logits = np.full((2, 5), -50.0)
    logits[0, 1] = logits[1, 4] = 50.0
    assert float(T.cross_entropy(Tensor(logits), [1, 4]).data) < 1e-40


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ValueError):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [-1, 0])


def test_cross_entropy_gradient(rng):
    labels = np.array([0, 2, 1, 2])
    check_grads(lambda z: T.cross_entropy(z, labels), [rng.standard_normal((4, 3))], rng)


def test_misc_op_gradients(rng):
    check_grads(lambda x: T.relu(x), [rng.standard_normal((4, 5)) + 0.05], rng)
    check_grads(lambda x: T.transpose(x, (2, 0, 1)), [rng.standard_normal((2, 3, 4))], rng)
    check_grads(lambda x: T.select(x, 2, axis=1), [rng.standard_normal((2, 3, 4))], rng)
    check_grads(lambda x, y: x + y, [rng.standard_normal((3, 4)), rng.standard_normal(4)], rng)
    check_grads(lambda x, y: x * y, [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))], rng)
    ids = np.array([[0, 2, 2], [1, 0, 2]])
    check_grads(lambda t: T.embedding(t, ids), [rng.standard_normal((3, 4))], rng)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(4.0), requires_grad=True)
    T.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_backward_product_rule_swaps_operands():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    y = Tensor([4.0, 5.0, 6.0], requires_grad=True)
    T.sum(x * y).backward()
    np.testing.assert_array_equal(x.grad, y.data)
    np.testing.assert_array_equal(y.grad, x.data)


def test_backward_accumulates_until_reset():
    x = Tensor([1.0, 2.0], requires_grad=True)
    T.sum(x).backward()
    T.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    T.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (x * x).backward()


def test_shared_input_reuse():
    x = Tensor([3.0], requires_grad=True)
    T.sum(x * x + x).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_tape_is_topological(rng):
    a = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    b = T.relu(a @ a)
    c = T.sum(b + a)
    order = T.tape(c)
    pos = {id(t): i for i, t in enumerate(order)}
    for t in order:
        for parent in t._inputs:
            if parent.requires_grad:
                assert pos[id(parent)] < pos[id(t)]


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * x
    assert not y.requires_grad and y._inputs == ()
