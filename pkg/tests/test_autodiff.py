import numpy as np
import pytest

from docrec.autodiff import (
    Adam,
    Tensor,
    add,
    conv2d,
    cross_entropy,
    dropout,
    embedding,
    matmul,
    mul,
    normalize,
    relu,
    reshape,
    softmax,
    tensor_max,
    tensor_op,
    tensor_sum,
    transpose,
)

RNG = np.random.default_rng(20240517)


def numeric_grad(f, t: Tensor, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(t.data)
    flat, gf = t.data.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_grads(make_output, *tensors):
    """Compare backward gradients against central finite differences.

    ``make_output`` builds the op output from the shared tensors; the loss is
    a fixed random projection of the output so every element contributes.
    """
    for t in tensors:
        t.grad = None
    out = make_output()
    proj = np.random.default_rng(7).standard_normal(out.data.shape)

    def loss_value() -> float:
        return float((make_output().data * proj).sum())

    loss = (out * Tensor(proj)).sum()
    loss.backward()
    for t in tensors:
        gn = numeric_grad(loss_value, t)
        assert t.grad is not None
        np.testing.assert_allclose(t.grad, gn, rtol=1e-6, atol=1e-8)


def rand(*shape, grad=True):
    return Tensor(RNG.standard_normal(shape), requires_grad=grad)


def test_add_broadcast():
    a, b = rand(3, 4), rand(4)
    check_grads(lambda: add(a, b), a, b)


def test_mul_broadcast():
    a, b = rand(2, 3, 4), rand(1, 3, 1)
    check_grads(lambda: mul(a, b), a, b)


def test_matmul_2d():
    a, b = rand(3, 5), rand(5, 2)
    check_grads(lambda: matmul(a, b), a, b)


def test_matmul_batched_times_weight():
    a, b = rand(4, 3, 5), rand(5, 2)
    check_grads(lambda: matmul(a, b), a, b)


def test_matmul_batched_both():
    a, b = rand(2, 3, 5), rand(2, 5, 4)
    check_grads(lambda: matmul(a, b), a, b)


def test_relu():
    a = Tensor(RNG.standard_normal((4, 4)) + 0.2, requires_grad=True)
    a.data[np.abs(a.data) < 1e-3] = 0.5  # keep away from the kink
    check_grads(lambda: relu(a), a)


def test_reshape_transpose():
    a = rand(2, 3, 4)
    check_grads(lambda: transpose(reshape(a, (6, 4)), (1, 0)), a)


def test_sum_variants():
    a = rand(3, 4, 2)
    check_grads(lambda: tensor_sum(a), a)
    check_grads(lambda: tensor_sum(a, axis=1), a)
    check_grads(lambda: tensor_sum(a, axis=(0, 2), keepdims=True), a)


def test_max_reduction():
    base = RNG.standard_normal((3, 5))
    base += np.arange(15).reshape(3, 5) * 0.01  # make the argmax unique
    a = Tensor(base, requires_grad=True)
    check_grads(lambda: tensor_max(a, axis=1), a)
    check_grads(lambda: tensor_max(a, axis=0, keepdims=True), a)


def test_softmax():
    a = rand(3, 6)
    check_grads(lambda: softmax(a, axis=-1), a)


def test_softmax_rows_sum_to_one():
    y = softmax(rand(4, 9, grad=False)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-12)
    assert (y >= 0).all()


def test_normalize_last_axis():
    a = rand(4, 6)
    check_grads(lambda: normalize(a, axes=-1), a)


def test_normalize_spatial_axes():
    a = rand(2, 3, 4, 5)
    check_grads(lambda: normalize(a, axes=(-2, -1)), a)


def test_normalize_output_statistics():
    y = normalize(rand(3, 50, grad=False), axes=-1).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-3)


def test_embedding_with_repeated_ids():
    w = rand(7, 4)
    ids = np.array([1, 3, 1, 0, 3, 3])
    check_grads(lambda: embedding(w, ids), w)


def test_cross_entropy_grad():
    logits = rand(5, 8)
    targets = np.array([0, 3, 7, 2, 2])
    check_grads(lambda: cross_entropy(logits, targets), logits)


def test_cross_entropy_is_summed():
    logits = Tensor(np.zeros((3, 4)))
    loss = cross_entropy(logits, np.array([0, 1, 2]))
    assert loss.data == pytest.approx(3 * np.log(4))


def test_conv2d_stride_one():
    x, w, b = rand(2, 3, 5, 6), rand(4, 3, 3, 3), rand(4)
    check_grads(lambda: conv2d(x, w, b), x, w, b)


def test_conv2d_strided():
    x, w = rand(1, 2, 7, 9), rand(3, 2, 3, 3)
    check_grads(lambda: conv2d(x, w, stride=(2, 1)), x, w)
    check_grads(lambda: conv2d(x, w, stride=(2, 2)), x, w)


def test_conv2d_output_shape_is_ceil():
    for h, w in [(7, 9), (8, 8), (32, 100), (33, 101)]:
        x = Tensor(np.zeros((1, 1, h, w)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        out = conv2d(x, k, stride=(2, 2))
        assert out.shape == (1, 1, -(-h // 2), -(-w // 2))


def test_dropout_identity_cases():
    x = rand(4, 4)
    rng = np.random.default_rng(0)
    assert dropout(x, 0.0, rng) is x
    assert dropout(x, 0.5, rng, training=False) is x


def test_dropout_grad_with_fixed_mask():
    x = rand(6, 6)
    check = lambda: dropout(x, 0.4, np.random.default_rng(11))
    check_grads(check, x)


def test_dropout_preserves_expectation():
    x = Tensor(np.ones((200, 200)))
    y = dropout(x, 0.3, np.random.default_rng(3))
    assert y.data.mean() == pytest.approx(1.0, abs=0.02)
    kept = y.data != 0
    assert kept.mean() == pytest.approx(0.7, abs=0.02)


def test_diamond_graph_accumulates_both_paths():
    x = Tensor(np.array([1.5, -2.0, 0.5]), requires_grad=True)
    y = add(mul(x, x), x)  # x^2 + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_through_deep_chain():
    # deeper than the default recursion limit; exercises the iterative topo sort
    x = Tensor(np.ones(4), requires_grad=True)
    y = x
    for _ in range(3000):
        y = y + x
    y.sum().backward()
    np.testing.assert_allclose(x.grad, np.full(4, 3001.0))


def test_tensor_op_custom_backward():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    def backward(g):
        x.accumulate(3.0 * g)
    y = tensor_op(3.0 * x.data, (x,), backward)
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [3.0, 3.0])


def test_no_grad_blocks_graph_recording():
    from docrec.autodiff import no_grad
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad
    z = (x * x).sum()
    assert z.requires_grad  # recording resumes after the context exits


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        loss = (p * p).sum()
        loss.backward()
        opt.step()
    assert np.abs(p.data).max() < 1e-3


def test_adam_skips_parameters_without_grad():
    p = Tensor(np.array([1.0]), requires_grad=True)
    q = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"p": p, "q": q}, lr=0.5)
    (p * p).sum().backward()
    opt.step()
    np.testing.assert_allclose(q.data, [2.0])
    assert p.data[0] != 1.0
