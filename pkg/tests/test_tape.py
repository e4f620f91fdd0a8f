import numpy as np
import pytest

from endiff.errors import ContractError, DimensionError
from endiff.numerics import finite_diff_grad
from endiff.tape import Tape, tape_backward, tape_forward


def _gradcheck(build_loss, shapes, seed=0, h=1e-6, tol=1e-6):
    """build_loss(tape, {name: Ref}) -> scalar Ref; checks every parameter
    against central differences."""
    rng = np.random.default_rng(seed)
    values = {name: rng.standard_normal(shape) for name, shape in shapes.items()}
    tape = Tape()
    refs = {name: tape.parameter(name, val) for name, val in values.items()}
    loss = build_loss(tape, refs)
    grads = tape.backward(loss)
    for name in shapes:
        def fn(mat, _name=name):
            t2 = Tape()
            r2 = {n: t2.parameter(n, mat if n == _name else values[n])
                  for n in shapes}
            return float(build_loss(t2, r2).value[0, 0])

        fd = finite_diff_grad(fn, values[name], h)
        denom = max(np.max(np.abs(fd)), 1e-8)
        err = np.max(np.abs(grads[name] - fd)) / denom
        assert err < tol, f"{name}: rel err {err}"


def test_forward_values_match_eager():
    tape = Tape()
    a = tape.constant([[1.0, 2.0], [3.0, 4.0]])
    b = tape.constant([[1.0, 0.0], [0.0, 1.0]])
    out = tape_forward(tape, "matmul", a, b)
    assert np.allclose(out.value, [[1, 2], [3, 4]])


def test_unknown_primitive_rejected():
    tape = Tape()
    a = tape.constant([[1.0]])
    with pytest.raises(ContractError):
        tape.apply("fused-qkv", a)


def test_backward_requires_scalar():
    tape = Tape()
    p = tape.parameter("w", np.ones((2, 2)))
    with pytest.raises(ContractError):
        tape.backward(p)


def test_duplicate_parameter_name_rejected():
    tape = Tape()
    tape.parameter("w", np.ones((1, 1)))
    with pytest.raises(ContractError):
        tape.parameter("w", np.ones((1, 1)))


def test_matmul_grad():
    _gradcheck(
        lambda t, r: t.sum_all(t.matmul(r["a"], r["b"])),
        {"a": (3, 4), "b": (4, 2)},
    )


def test_elementwise_grads():
    _gradcheck(
        lambda t, r: t.sum_all(t.hadamard(t.add(r["a"], r["b"]),
                                          t.sub(r["a"], r["b"]))),
        {"a": (3, 3), "b": (3, 3)},
    )


def test_sigmoid_relu_scale_grads():
    _gradcheck(
        lambda t, r: t.sum_all(t.scale(t.sigmoid(t.relu(r["a"])), 2.5)),
        {"a": (4, 3)},
        seed=5,
    )


def test_row_l2_normalize_grad():
    _gradcheck(
        lambda t, r: t.sum_all(t.hadamard(t.row_l2_normalize(r["a"]), r["b"])),
        {"a": (5, 4), "b": (5, 4)},
        seed=2,
    )


def test_layer_norm_grad():
    _gradcheck(
        lambda t, r: t.sum_all(t.hadamard(t.layer_norm(r["a"]), r["b"])),
        {"a": (5, 6), "b": (5, 6)},
        seed=3,
    )


def test_row_softmax_grad_and_rows_sum_to_one():
    tape = Tape()
    p = tape.parameter("a", np.random.default_rng(0).standard_normal((4, 5)))
    out = tape.row_softmax(p)
    assert np.allclose(out.value.sum(axis=1), 1.0)
    _gradcheck(
        lambda t, r: t.sum_all(t.hadamard(t.row_softmax(r["a"]), r["b"])),
        {"a": (4, 5), "b": (4, 5)},
        seed=4,
    )


def test_mean_over_list_grad():
    _gradcheck(
        lambda t, r: t.sum_all(t.mean_over_list([r["a"], r["b"], r["c"]])),
        {"a": (2, 3), "b": (2, 3), "c": (2, 3)},
    )


def test_diag_scale_rows_grad():
    _gradcheck(
        lambda t, r: t.sum_all(t.hadamard(
            t.diag_scale_rows(r["a"], t.reciprocal(t.row_sum(t.sigmoid(r["v"])))),
            r["b"])),
        {"a": (4, 3), "v": (4, 2), "b": (4, 3)},
        seed=6,
    )


def test_broadcast_row_and_transpose_grads():
    _gradcheck(
        lambda t, r: t.sum_all(t.hadamard(
            t.broadcast_row(r["row"], 5), t.transpose(r["b"]))),
        {"row": (1, 3), "b": (3, 5)},
        seed=7,
    )


def test_reused_node_accumulates_gradient():
    # w appears twice; d/dw sum(w + w) = 2
    tape = Tape()
    w = tape.parameter("w", np.full((2, 2), 3.0))
    loss = tape.sum_all(tape.add(w, w))
    grads = tape.backward(loss)
    assert np.allclose(grads["w"], 2.0)


def test_unused_parameter_gets_zero_grad():
    tape = Tape()
    w = tape.parameter("w", np.ones((2, 2)))
    u = tape.parameter("unused", np.ones((3, 3)))
    loss = tape.sum_all(w)
    grads = tape_backward(tape, loss)
    assert np.allclose(grads["unused"], 0.0)
    assert grads["unused"].shape == (3, 3)


def test_masked_cross_entropy_values():
    tape = Tape()
    n, c = 4, 3
    logits = tape.constant(np.zeros((n, c)))
    labels = np.array([0, 1, 2, 0])
    mask = np.ones(n, dtype=bool)
    out = tape.masked_cross_entropy(logits, labels, mask)
    # uniform logits: cross-entropy = ln C
    assert out.value[0, 0] == pytest.approx(np.log(c))

    confident = np.eye(c)[labels] * 1e6
    t2 = Tape()
    out2 = t2.masked_cross_entropy(t2.constant(confident), labels, mask)
    assert out2.value[0, 0] == pytest.approx(0.0, abs=1e-9)


def test_masked_cross_entropy_empty_mask():
    tape = Tape()
    logits = tape.constant(np.zeros((3, 2)))
    with pytest.raises(ContractError):
        tape.masked_cross_entropy(logits, np.zeros(3, dtype=int),
                                  np.zeros(3, dtype=bool))


def test_masked_cross_entropy_grad():
    labels = np.array([0, 2, 1, 1, 0])
    mask = np.array([True, True, False, True, False])
    _gradcheck(
        lambda t, r: t.masked_cross_entropy(r["logits"], labels, mask),
        {"logits": (5, 3)},
        seed=8,
    )


def test_masked_mse_value_and_grad():
    target = np.array([[1.0], [2.0], [3.0]])
    mask = np.array([True, False, True])
    tape = Tape()
    pred = tape.constant(target)
    assert tape.masked_mse(pred, target, mask).value[0, 0] == 0.0
    _gradcheck(
        lambda t, r: t.masked_mse(r["pred"], target, mask),
        {"pred": (3, 1)},
        seed=9,
    )


def test_matmul_dimension_error():
    tape = Tape()
    a = tape.constant(np.ones((2, 3)))
    b = tape.constant(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        tape.matmul(a, b)
