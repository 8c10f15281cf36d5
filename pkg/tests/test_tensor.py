import math

import numpy as np
import pytest

from report_kg import tensor as T
from report_kg.errors import NumericError
from report_kg.rng import derive_rng

from oracles import central_difference, relative_error

GRAD_TOL = 1e-4


def check_grads(build, arrays, eps=1e-5):
    """Compare backward() grads of build(*tensors) against central differences."""
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def scalar(*plain):
        out = build(*[T.Tensor(p) for p in plain])
        return float(out.data)

    numeric = central_difference(scalar, [a.copy() for a in arrays], eps=eps)
    for t, n in zip(tensors, numeric):
        assert relative_error(t.grad, n) <= GRAD_TOL


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_leaky_relu_value():
    x = T.Tensor([[-2.0]])
    assert x.leaky_relu(0.2).data[0, 0] == pytest.approx(-0.4)


def test_softmax_uniform_on_equal_logits():
    p = T.softmax(T.Tensor([[0.0, 0.0]]), axis=1)
    assert np.allclose(p.data, [[0.5, 0.5]])


def test_sigmoid_grad_at_zero():
    x = T.Tensor([[0.0]], requires_grad=True)
    x.sigmoid().sum().backward()
    assert x.grad[0, 0] == pytest.approx(0.25)


def test_sum_of_squares_grad():
    x = T.Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, [[2.0, 4.0, 6.0]])


def test_unused_parameter_keeps_zero_grad():
    used = T.Tensor([[1.0]], requires_grad=True)
    unused = T.Tensor([[5.0, 5.0]], requires_grad=True)
    (used * used).sum().backward()
    assert np.array_equal(unused.grad, np.zeros((1, 2)))


def test_grad_accumulates_across_uses():
    x = T.Tensor([[3.0]], requires_grad=True)
    (x + x).sum().backward()
    assert x.grad[0, 0] == pytest.approx(2.0)


def test_backward_requires_scalar():
    x = T.Tensor([[1.0, 2.0]], requires_grad=True)
    with pytest.raises(ValueError):
        (x * x).backward()


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        T.Tensor(np.zeros((2, 3))) + T.Tensor(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        T.Tensor(np.zeros((2, 3))).matmul(T.Tensor(np.zeros((2, 3))))


def test_softmax_fully_masked_row_rejected():
    mask = np.array([[True, True], [False, False]])
    with pytest.raises(ValueError):
        T.softmax(T.Tensor(np.zeros((2, 2))), axis=1, mask=mask)


def test_masked_softmax_zeroes_masked_entries():
    rng = derive_rng(0, "masksoft")
    x = T.Tensor(rand(rng, 4, 4), requires_grad=True)
    mask = rng.random((4, 4)) > 0.4
    np.fill_diagonal(mask, True)
    p = T.softmax(x, axis=1, mask=mask)
    assert np.all(p.data[~mask] == 0.0)
    assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-12)
    p.sum().backward()
    assert np.all(x.grad[~mask] == 0.0)


def test_max_pool_routes_grad_to_argmax():
    x = T.Tensor([[1.0, 5.0], [3.0, 2.0]], requires_grad=True)
    pooled = x.max_pool(axis=0)
    assert np.allclose(pooled.data, [3.0, 5.0])
    pooled.sum().backward()
    assert np.array_equal(x.grad, [[0.0, 1.0], [1.0, 0.0]])


def test_dropout_identity_cases():
    rng = derive_rng(0, "drop")
    x = T.Tensor(rand(rng, 5, 5))
    assert np.array_equal(T.dropout(x, 0.5, None, train=False).data, x.data)
    assert np.array_equal(T.dropout(x, 0.0, rng, train=True).data, x.data)
    with pytest.raises(ValueError):
        T.dropout(x, 1.0, rng, train=True)


def test_dropout_scales_kept_entries():
    rng = derive_rng(3, "drop2")
    x = T.Tensor(np.ones((200, 10)))
    out = T.dropout(x, 0.5, rng, train=True).data
    kept = out[out != 0.0]
    assert np.allclose(kept, 2.0)
    assert 0.3 < kept.size / out.size < 0.7


def test_bce_with_logits_values():
    logits = T.Tensor(np.zeros((1, 14)))
    labels = np.zeros((1, 14))
    labels[0, :5] = 1.0
    assert float(T.bce_with_logits(logits, labels).data) == pytest.approx(math.log(2.0))

    strong = np.where(labels == 1.0, 10.0, -10.0)
    loss = float(T.bce_with_logits(T.Tensor(strong), labels).data)
    assert 0.0 < loss < 1e-4


def test_mix_rows_matches_matmul():
    rng = derive_rng(1, "mix")
    w, v = rand(rng, 4, 6), rand(rng, 6, 3)
    out = T.mix_rows(T.Tensor(w), T.Tensor(v))
    assert np.allclose(out.data, w @ v, atol=1e-12)


def test_gather_scatter_round_trip():
    x = T.Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    picked = T.gather_rows(x, [2, 0, 2])
    assert np.array_equal(picked.data, x.data[[2, 0, 2]])
    back = T.scatter_add_rows(picked, [2, 0, 2], 4)
    assert np.array_equal(back.data[1], np.zeros(3))
    assert np.array_equal(back.data[2], 2 * x.data[2])
    back.sum().backward()
    assert np.array_equal(x.grad[2], np.full(3, 2.0))
    assert np.array_equal(x.grad[1], np.zeros(3))


def test_concat_and_slice_rows():
    a = T.Tensor(np.ones((2, 3)), requires_grad=True)
    b = T.Tensor(np.full((1, 3), 2.0), requires_grad=True)
    cat = T.concat([a, b], axis=0)
    assert cat.shape == (3, 3)
    cat.slice_rows(2, 3).sum().backward()
    assert np.array_equal(a.grad, np.zeros((2, 3)))
    assert np.array_equal(b.grad, np.ones((1, 3)))


@pytest.mark.parametrize("case", [
    "matmul", "add", "sub", "mul", "scale", "shift", "concat", "transpose",
    "exp", "log", "leaky_relu", "elu", "sigmoid", "softmax", "masked_softmax",
    "max_pool", "mean", "sum_axis", "gather", "scatter", "mix", "clip",
    "slice", "bce",
])
def test_primitive_gradients_match_finite_differences(case):
    rng = derive_rng(7, "gradcheck", case)
    if case == "matmul":
        check_grads(lambda a, b: a.matmul(b).sum(), [rand(rng, 3, 4), rand(rng, 4, 2)])
    elif case == "add":
        check_grads(lambda a, b: (a + b).sum(), [rand(rng, 3, 3), rand(rng, 3, 3)])
    elif case == "sub":
        check_grads(lambda a, b: (a - b).sum(), [rand(rng, 3, 3), rand(rng, 3, 3)])
    elif case == "mul":
        check_grads(lambda a, b: (a * b).sum(), [rand(rng, 3, 3), rand(rng, 3, 3)])
    elif case == "scale":
        check_grads(lambda a: a.scale(-2.5).sum(), [rand(rng, 3, 3)])
    elif case == "shift":
        check_grads(lambda a: a.shift(1.5).exp().sum(), [rand(rng, 2, 3)])
    elif case == "concat":
        check_grads(lambda a, b: T.concat([a, b], axis=1).exp().sum(),
                    [rand(rng, 2, 3), rand(rng, 2, 2)])
    elif case == "transpose":
        check_grads(lambda a, b: a.transpose().matmul(b).sum(),
                    [rand(rng, 3, 2), rand(rng, 3, 2)])
    elif case == "exp":
        check_grads(lambda a: a.exp().sum(), [rand(rng, 3, 3)])
    elif case == "log":
        check_grads(lambda a: a.log().sum(), [rand(rng, 3, 3) ** 2 + 0.5])
    elif case == "leaky_relu":
        x = rand(rng, 4, 4)
        x[np.abs(x) < 0.05] += 0.1  # keep away from the kink
        check_grads(lambda a: a.leaky_relu(0.2).sum(), [x])
    elif case == "elu":
        x = rand(rng, 4, 4)
        x[np.abs(x) < 0.05] += 0.1
        check_grads(lambda a: a.elu().sum(), [x])
    elif case == "sigmoid":
        check_grads(lambda a: a.sigmoid().sum(), [rand(rng, 3, 3) * 3])
    elif case == "softmax":
        w = rand(rng, 1, 4)
        check_grads(lambda a, c: (T.softmax(a, axis=1) * c).sum(),
                    [rand(rng, 4, 4), rand(rng, 4, 4)])
    elif case == "masked_softmax":
        mask = rng.random((4, 4)) > 0.4
        np.fill_diagonal(mask, True)
        check_grads(lambda a, c: (T.softmax(a, axis=1, mask=mask) * c).sum(),
                    [rand(rng, 4, 4), rand(rng, 4, 4)])
    elif case == "max_pool":
        x = rand(rng, 5, 3) * 4  # well-separated values, no near-ties
        check_grads(lambda a: a.max_pool(axis=0).sum(), [x], eps=1e-6)
    elif case == "mean":
        check_grads(lambda a: a.mean(axis=1).exp().sum(), [rand(rng, 3, 4)])
    elif case == "sum_axis":
        check_grads(lambda a: a.sum(axis=0).sigmoid().sum(), [rand(rng, 3, 4)])
    elif case == "gather":
        check_grads(lambda a: T.gather_rows(a, [0, 2, 2]).exp().sum(),
                    [rand(rng, 3, 3)])
    elif case == "scatter":
        check_grads(lambda a: T.scatter_add_rows(a, [1, 0, 1], 3).exp().sum(),
                    [rand(rng, 3, 2)])
    elif case == "mix":
        check_grads(lambda a, b: T.mix_rows(a, b).exp().sum(),
                    [rand(rng, 3, 4), rand(rng, 4, 2)])
    elif case == "clip":
        x = rand(rng, 4, 4) * 3
        x[np.abs(np.abs(x) - 1.0) < 0.05] = 0.0  # avoid clip boundaries
        check_grads(lambda a: a.clip(-1.0, 1.0).exp().sum(), [x])
    elif case == "slice":
        check_grads(lambda a: a.slice_rows(1, 3).exp().sum(), [rand(rng, 4, 2)])
    elif case == "bce":
        y = (rand(rng, 2, 7) > 0).astype(float)
        check_grads(lambda a: T.bce_with_logits(a, y), [rand(rng, 2, 7)])


def test_adam_hand_computed_first_step():
    p = np.array([1.0])
    g = np.array([1.0])
    new_p, m, v = T.adam_step(p, g, np.zeros(1), np.zeros(1), t=1, lr=0.1)
    assert new_p[0] == pytest.approx(0.9, abs=1e-6)
    assert m[0] == pytest.approx(0.1)
    assert v[0] == pytest.approx(0.001)


def test_adam_zero_gradient_fresh_state_is_identity():
    p = np.array([2.0, -1.0])
    new_p, m, v = T.adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), t=1, lr=0.1)
    assert np.array_equal(new_p, p)
    assert np.array_equal(m, np.zeros(2))


def test_adam_state_moments_decay():
    m0, v0 = np.array([1.0]), np.array([1.0])
    _, m, v = T.adam_step(np.zeros(1), np.zeros(1), m0, v0, t=2, lr=0.1)
    assert m[0] == pytest.approx(0.9)
    assert v[0] == pytest.approx(0.999)


def test_adam_deterministic():
    rng = derive_rng(0, "adamdet")
    p, g = rand(rng, 3, 3), rand(rng, 3, 3)
    m, v = np.zeros((3, 3)), np.zeros((3, 3))
    a = T.adam_step(p.copy(), g, m.copy(), v.copy(), t=1, lr=0.01)
    b = T.adam_step(p.copy(), g, m.copy(), v.copy(), t=1, lr=0.01)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_adam_rejects_nan_gradients():
    with pytest.raises(NumericError):
        T.adam_step(np.zeros(1), np.array([np.nan]), np.zeros(1), np.zeros(1),
                    t=1, lr=0.1)


def test_adam_class_accumulated_batch():
    p = T.Tensor(np.array([[1.0]]), requires_grad=True)
    opt = T.Adam([p], lr=0.1)
    for _ in range(4):  # four samples accumulate grad 4 * 2 * p
        (p * p).sum().backward()
    opt.step(grad_scale=0.25)
    assert p.data[0, 0] == pytest.approx(0.9, abs=1e-6)
    opt.zero_grad()
    assert np.array_equal(p.grad, np.zeros((1, 1)))
