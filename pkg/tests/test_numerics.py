import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgmz.errors import ContractError, DimensionError
from tgmz.numerics import (
    AdamState,
    BatchNormState,
    ParamStore,
    Tape,
    Tensor,
    activation,
    adam_step,
    add,
    affine,
    backward,
    batch_norm,
    concat,
    grad_check,
    init_mlp,
    leaky_relu,
    matmul,
    mean,
    mlp,
    mse,
    mul,
    scale,
    sigmoid,
    softmax_cross_entropy,
    sum_all,
    tanh,
    value_and_grad,
)


def param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- matmul / affine

def test_matmul_identity():
    A = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal(matmul(np.eye(3), A).data, A)


def test_matmul_hand_values():
    out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    A, B = rng.normal(size=(7, 5)), rng.normal(size=(5, 4))
    ref = np.zeros((7, 4))
    for i in range(7):
        for j in range(4):
            for k in range(5):
                ref[i, j] += A[i, k] * B[k, j]
    np.testing.assert_allclose(matmul(A, B).data, ref, rtol=0, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_affine_identity_and_zero_input():
    x = np.random.default_rng(2).normal(size=(4, 3))
    np.testing.assert_array_equal(affine(x, np.eye(3), np.zeros(3)).data, x)
    b = np.array([1.0, -2.0])
    out = affine(np.zeros((5, 3)), np.ones((3, 2)), b).data
    np.testing.assert_array_equal(out, np.tile(b, (5, 1)))


def test_affine_bias_gradient_counts_rows():
    W, b = param(np.ones((3, 2))), param(np.zeros(2))
    x = np.random.default_rng(3).normal(size=(6, 3))
    _, g = value_and_grad(lambda: sum_all(affine(x, W, b)), {"b": b})
    np.testing.assert_array_equal(g["b"], [6.0, 6.0])


def test_affine_shape_errors():
    with pytest.raises(DimensionError):
        affine(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        affine(np.ones((2, 3)), np.ones((3, 2)), np.zeros(3))


# ---------------------------------------------------------------- activations

def test_activation_values():
    assert leaky_relu(np.array([-1.0]), 0.2).data[0] == pytest.approx(-0.2)
    assert sigmoid(np.array([0.0])).data[0] == 0.5
    x = param([0.0])
    _, g = value_and_grad(lambda: sum_all(sigmoid(x)), {"x": x})
    assert g["x"][0] == 0.25


def test_relu_gradient():
    x = param([2.0, -3.0])
    _, g = value_and_grad(lambda: sum_all(activation("relu", x)), {"x": x})
    np.testing.assert_array_equal(g["x"], [1.0, 0.0])


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(ValueError):
        leaky_relu(np.ones(2), 1.5)


def test_sigmoid_is_finite_for_extreme_inputs():
    out = sigmoid(np.array([-1e4, 1e4])).data
    assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0


# ---------------------------------------------------------------- losses

def test_cross_entropy_uniform():
    assert softmax_cross_entropy(np.zeros((3, 4)), [0, 1, 3]).item() == pytest.approx(math.log(4))


def test_cross_entropy_hand_value():
    expected = -math.log(math.e ** 2 / (math.e ** 2 + math.e + 1))
    assert softmax_cross_entropy(np.array([[2.0, 1.0, 0.0]]), [0]).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.4076, abs=1e-4)


def test_cross_entropy_decreases_with_margin():
    vals = [softmax_cross_entropy(np.array([[m, 0.0, 0.0]]), [0]).item() for m in (0, 1, 5, 20, 50)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-20


def test_cross_entropy_stable_for_large_logits():
    assert np.isfinite(softmax_cross_entropy(np.array([[1e4, -1e4]]), [1]).item())


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        softmax_cross_entropy(np.zeros((2, 3)), [0, 3])


def test_mse_values():
    x = np.random.default_rng(4).normal(size=(3, 2))
    assert mse(x, x).item() == 0.0
    assert mse(x, x + 1).item() == pytest.approx(1.0)
    assert mse(np.array([1.0, 2.0]), np.array([3.0, 5.0])).item() == 6.5
    with pytest.raises(DimensionError):
        mse(np.ones(2), np.ones(3))


# ---------------------------------------------------------------- batch norm

def test_batch_norm_constant_batch_gives_shift():
    st_ = BatchNormState(3)
    beta = np.array([0.5, -1.0, 2.0])
    out = batch_norm(np.full((4, 3), 7.0), np.ones(3), beta, st_, "train").data
    np.testing.assert_allclose(out, np.tile(beta, (4, 1)), atol=1e-12)


def test_batch_norm_train_standardizes():
    x = np.random.default_rng(5).normal(3.0, 10.0, size=(64, 5))
    out = batch_norm(x, np.ones(5), np.zeros(5), BatchNormState(5, eps=1e-12), "train").data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)


def test_batch_norm_eval_uses_frozen_stats():
    st_ = BatchNormState(2)
    rng = np.random.default_rng(6)
    for _ in range(3):
        batch_norm(rng.normal(size=(8, 2)), np.ones(2), np.zeros(2), st_, "train")
    mean_before = st_.running_mean.copy()
    x = rng.normal(size=(5, 2))
    a = batch_norm(x, np.ones(2), np.zeros(2), st_, "eval").data
    b = batch_norm(x, np.ones(2), np.zeros(2), st_, "eval").data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(st_.running_mean, mean_before)


# ---------------------------------------------------------------- backward

def test_backward_linear():
    x = np.array([[2.0, -1.0]])
    w = param([[3.0], [4.0]])
    _, g = value_and_grad(lambda: sum_all(matmul(x, w)), {"w": w})
    np.testing.assert_array_equal(g["w"], x.T)


def test_backward_shared_node_accumulates():
    x = param([1.5])
    _, g = value_and_grad(lambda: sum_all(add(x, x)), {"x": x})
    assert g["x"][0] == 2.0


def test_backward_rejects_non_scalar():
    x = param([1.0, 2.0])
    with Tape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(ContractError):
        backward(y, tape, {"x": x})


def test_backward_touches_only_targets():
    a, b = param([1.0]), param([2.0])
    with Tape() as tape:
        loss = sum_all(mul(a, b))
    g = backward(loss, tape, {"a": a})
    assert g["a"][0] == 2.0
    np.testing.assert_array_equal(b.grad, [0.0])
    np.testing.assert_array_equal(a.grad, [2.0])


def _two_layer(seed=0):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_mlp(store, "net", (5, 7, 3), rng)
    x = rng.normal(size=(6, 5))
    y = rng.integers(0, 3, size=6)
    return store, lambda: softmax_cross_entropy(mlp(store, "net", Tensor(x)), y)


def test_two_layer_network_matches_finite_differences():
    store, fn = _two_layer()
    rep = grad_check(fn, dict(store), tolerance=1e-4)
    assert rep.passed, rep


def test_backward_is_bitwise_repeatable():
    store, fn = _two_layer(1)
    _, g1 = value_and_grad(fn, dict(store))
    _, g2 = value_and_grad(fn, dict(store))
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


def test_tape_is_topologically_ordered():
    store, fn = _two_layer(2)
    with Tape() as tape:
        fn()
    seen = {id(t) for t in store.values()}
    for node in tape.nodes:
        for inp in node.inputs:
            if tape.tracks(inp):
                assert id(inp) in seen
        seen.add(id(node.output))


SMALL = st.integers(min_value=1, max_value=8)


@settings(max_examples=25, deadline=None)
@given(b=SMALL, d=SMALL, k=SMALL, seed=st.integers(0, 2**16))
def test_ops_match_finite_differences(b, d, k, seed):
    rng = np.random.default_rng(seed)
    x = param(rng.normal(size=(b, d)))
    w = param(rng.normal(size=(d, k)))
    bias = param(rng.normal(size=k))
    gamma, beta = param(rng.uniform(0.5, 2.0, size=k)), param(rng.normal(size=k))
    other = param(rng.normal(size=(b, k)))
    target = rng.normal(size=(b, k))
    labels = rng.integers(0, k, size=b)
    pts = {"x": x, "w": w, "bias": bias, "gamma": gamma, "beta": beta, "other": other}
    bn = BatchNormState(k)

    programs = [
        lambda: sum_all(matmul(x, w)),
        lambda: mean(mul(affine(x, w, bias), other)),
        lambda: softmax_cross_entropy(leaky_relu(affine(x, w, bias), 0.2), labels),
        lambda: mse(tanh(affine(x, w, bias)), target),
        lambda: mean(mul(sigmoid(other), other)),
        lambda: sum_all(mul(concat([x, other]), concat([x, other]))),
        lambda: mse(batch_norm(affine(x, w, bias), gamma, beta, bn, "eval"), target),
    ]
    if b > 1:
        programs.append(lambda: mean(mul(batch_norm(affine(x, w, bias), gamma, beta, bn, "train"), other)))
    for prog in programs:
        rep = grad_check(prog, pts, tolerance=1e-4)
        assert rep.passed, rep


def test_grad_check_examples():
    x = param([3.0])
    rep = grad_check(lambda: sum_all(mul(x, x)), x)
    assert rep.max_abs_error < 1e-6
    _, g = value_and_grad(lambda: sum_all(mul(x, x)), {"x": x})
    assert g["x"][0] == pytest.approx(6.0)
    s = param([0.0])
    assert grad_check(lambda: sum_all(sigmoid(s)), s).max_abs_error < 1e-8


def test_grad_check_composed_program():
    rng = np.random.default_rng(7)
    x, w, b = rng.normal(size=(4, 3)), param(rng.normal(size=(3, 5))), param(rng.normal(size=5))
    labels = np.array([0, 4, 2, 1])
    rep = grad_check(lambda: softmax_cross_entropy(leaky_relu(affine(x, w, b), 0.2), labels),
                     {"w": w, "b": b}, tolerance=1e-4)
    assert rep.passed


def test_grad_check_requires_scalar():
    x = param([1.0, 2.0])
    with pytest.raises(ContractError):
        grad_check(lambda: scale(x, 2.0), x)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    p = param([1.0, -2.0])
    adam_step({"p": p}, {"p": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_magnitude():
    p = param([0.0])
    adam_step({"p": p}, {"p": np.ones(1)}, AdamState(lr=0.001))
    assert abs(p.data[0] + 0.001) < 1e-9


def test_adam_two_steps_hand_recurrence():
    lr, b1, b2, eps, g = 0.01, 0.9, 0.999, 1e-8, 0.5
    theta = 1.0
    m = v = 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    p = param([1.0])
    state = AdamState(lr=lr)
    for _ in range(2):
        adam_step({"p": p}, {"p": np.array([g])}, state)
    assert abs(p.data[0] - theta) < 1e-12
    assert state.t == 2


def test_adam_ascend_equals_descend_on_negated_loss():
    rng = np.random.default_rng(8)
    p1, p2 = param(rng.normal(size=4)), None
    p2 = param(p1.data.copy())
    s1, s2 = AdamState(lr=0.1), AdamState(lr=0.1)
    for _ in range(5):
        g = rng.normal(size=4)
        adam_step({"p": p1}, {"p": g}, s1, "ascend")
        adam_step({"p": p2}, {"p": -g}, s2, "descend")
        assert np.array_equal(p1.data, p2.data)


def test_adam_requires_full_cover():
    p, q = param([1.0]), param([2.0])
    with pytest.raises(ContractError):
        adam_step({"p": p, "q": q}, {"p": np.ones(1)}, AdamState())


# ---------------------------------------------------------------- ParamStore

def test_param_store_rejects_duplicates_and_shares_cls():
    store = ParamStore()
    rng = np.random.default_rng(0)
    for mod in ("te", "td", "tdis", "cls", "g", "dis"):
        init_mlp(store, mod, (2, 3, 2), rng)
    with pytest.raises(KeyError):
        store.add("te.0.weight", Tensor(np.zeros((2, 3))))
    tc, gc = store.group("tc"), store.group("gc")
    shared = set(tc) & set(gc)
    assert shared == {n for n in store if n.startswith("cls.")}
    assert all(tc[n] is gc[n] for n in shared)
    assert not set(store.group("tdis")) & set(tc)
    assert not set(store.group("dis")) & set(gc)
