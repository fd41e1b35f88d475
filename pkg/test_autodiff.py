"""
Tests for the reverse-mode autodiff core
"""

import math

import numpy as np
import pytest

from autodiff import (
    DiffValue,
    Tape,
    backpropagate,
    check_gradient,
    clip_by_global_norm,
    concat,
    constant,
    dropout,
    embedding,
    evaluate_graph,
    global_norm,
    log_softmax,
    pick,
    sigmoid,
    softmax,
    stack_rows,
    take_slice,
    tanh,
    total,
    transpose,
)
from error_handling import ShapeError, ValidationError
from layers import LSTMState, lstm_step

RNG = np.random.default_rng(0)

# (name, program, inputs) checked leaf by leaf against central differences
GRADIENT_CASES = [
    ("add_broadcast", lambda v: total(tanh(v["a"] + v["b"])),
     {"a": RNG.normal(size=(3, 4)), "b": RNG.normal(size=4)}),
    ("mul_broadcast", lambda v: total(v["a"] * v["b"] * v["a"]),
     {"a": RNG.normal(size=(2, 3)), "b": RNG.normal(size=3)}),
    ("matmul_matrix_vector", lambda v: total(tanh(v["W"] @ v["x"])),
     {"W": RNG.normal(size=(4, 3)), "x": RNG.normal(size=3)}),
    ("matmul_vector_matrix", lambda v: total(sigmoid(v["x"] @ v["W"])),
     {"W": RNG.normal(size=(3, 2)), "x": RNG.normal(size=3)}),
    ("matmul_matrix_matrix", lambda v: total(tanh(v["A"] @ transpose(v["B"]))),
     {"A": RNG.normal(size=(2, 3)), "B": RNG.normal(size=(4, 3))}),
    ("dot", lambda v: v["x"] @ v["y"],
     {"x": RNG.normal(size=5), "y": RNG.normal(size=5)}),
    ("softmax_weighted", lambda v: softmax(v["s"]) @ v["y"],
     {"s": RNG.normal(size=4), "y": RNG.normal(size=4)}),
    ("log_softmax_pick", lambda v: pick(log_softmax(v["s"]), 2),
     {"s": RNG.normal(size=5)}),
    ("concat_slice", lambda v: total(tanh(take_slice(concat([v["a"], v["b"]]), 1, 4))),
     {"a": RNG.normal(size=2), "b": RNG.normal(size=3)}),
    ("stack_rows", lambda v: total(tanh(stack_rows([v["a"], v["b"], v["a"]]) @ v["w"])),
     {"a": RNG.normal(size=3), "b": RNG.normal(size=3), "w": RNG.normal(size=3)}),
    ("embedding", lambda v: total(tanh(embedding(v["E"], 1)) * v["x"]),
     {"E": RNG.normal(size=(4, 3)), "x": RNG.normal(size=3)}),
    ("sub_neg", lambda v: total(-(v["a"] - v["b"]) * (1.0 - v["a"])),
     {"a": RNG.normal(size=3), "b": RNG.normal(size=3)}),
]


@pytest.mark.parametrize("name,program,inputs", GRADIENT_CASES, ids=[c[0] for c in GRADIENT_CASES])
def test_primitive_gradients_match_finite_differences(name, program, inputs):
    for leaf in inputs:
        assert check_gradient(program, inputs, leaf) < 1e-6, f"{name}: leaf {leaf}"


def test_lstm_step_gradients():
    size, width = 3, 2
    inputs = {
        "x": RNG.normal(size=width),
        "h": RNG.normal(size=size),
        "c": RNG.normal(size=size),
        "W": RNG.normal(size=(4 * size, width + size)),
        "b": RNG.normal(size=4 * size),
    }

    def program(v):
        state = lstm_step(v["x"], LSTMState(v["h"], v["c"]), v["W"], v["b"])
        return total(state.hidden * state.cell)

    for leaf in inputs:
        assert check_gradient(program, inputs, leaf) < 1e-6


def test_shared_node_accumulates():
    x = DiffValue.leaf(np.array([1.5, -2.0]), name="x")
    grads = backpropagate(total(x * x))
    np.testing.assert_allclose(grads["x"], [3.0, -4.0])


def test_non_scalar_root_rejected():
    x = DiffValue.leaf(np.ones(3), name="x")
    with pytest.raises(ShapeError):
        backpropagate(tanh(x))


def test_shape_mismatch_names_primitive():
    with pytest.raises(ShapeError) as info:
        constant(np.ones((2, 3))) @ constant(np.ones(2))
    assert "matmul" in str(info.value)


def test_constants_receive_no_gradient():
    x = DiffValue.leaf(np.array([0.3, 0.1]), name="x")
    c = constant(np.array([2.0, 3.0]))
    grads = backpropagate(total(x * c))
    assert set(grads) == {"x"}
    np.testing.assert_allclose(c.grad, 0.0)


def test_leaf_copies_input():
    data = np.array([1.0, 2.0])
    leaf = DiffValue.leaf(data, name="x")
    data[0] = 99.0
    assert leaf.data[0] == 1.0


def test_tape_is_topological():
    root, _ = evaluate_graph({"a": np.ones(2), "b": np.ones(2)}, lambda v: total(tanh(v["a"] * v["b"])))
    tape = Tape.from_root(root)
    position = {id(node): i for i, node in enumerate(tape)}
    for node in tape:
        for parent in node.parents:
            assert position[id(parent)] < position[id(node)]
    assert {leaf.name for leaf in tape.leaves()} == {"a", "b"}


def test_softmax_is_stable_for_large_logits():
    probs = softmax(constant(np.array([1000.0, 1000.0, -1000.0]))).data
    np.testing.assert_allclose(probs, [0.5, 0.5, 0.0], atol=1e-12)
    assert np.isfinite(log_softmax(constant(np.array([1e4, 0.0]))).data).all()


def test_sigmoid_is_stable():
    out = sigmoid(constant(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-12)


def test_product_rule_on_scalars():
    x, y = DiffValue.leaf(2.0, name="x"), DiffValue.leaf(3.0, name="y")
    backpropagate(x * y)
    assert (x.grad.item(), y.grad.item()) == (3.0, 2.0)


def test_summed_softmax_has_zero_gradient():
    for seed in range(20):
        v = DiffValue.leaf(np.random.default_rng(seed).normal(scale=5.0, size=6), name="v")
        backpropagate(total(softmax(v)))
        np.testing.assert_allclose(v.grad, 0.0, rtol=0, atol=1e-12)


def test_softmax_sums_to_one_over_bounded_logits():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        x = rng.uniform(-50.0, 50.0, size=int(rng.integers(1, 12)))
        probs = softmax(constant(x)).data
        assert abs(probs.sum() - 1.0) <= 1e-12
        assert np.all(probs >= 0.0)


def test_tanh_matches_scalar_math():
    x = np.array([-2.5, 0.0, 0.7])
    out = tanh(constant(x)).data
    for value, expected in zip(out, x):
        assert abs(value - math.tanh(expected)) <= 1e-12


@pytest.mark.parametrize("name,program,inputs", GRADIENT_CASES, ids=[c[0] for c in GRADIENT_CASES])
def test_primitive_gradients_over_random_inputs(name, program, inputs):
    for seed in range(100):
        rng = np.random.default_rng([seed, len(name)])
        fresh = {leaf: rng.normal(size=np.shape(value)) for leaf, value in inputs.items()}
        for leaf in fresh:
            assert check_gradient(program, fresh, leaf) < 1e-5, f"{name}: seed {seed}, leaf {leaf}"


def test_two_layer_tanh_network_gradients():
    rng = np.random.default_rng(3)
    inputs = {
        "W1": rng.normal(size=(4, 3)), "b1": rng.normal(size=4),
        "W2": rng.normal(size=(2, 4)), "b2": rng.normal(size=2), "x": rng.normal(size=3),
    }

    def program(v):
        hidden = tanh(v["W1"] @ v["x"] + v["b1"])
        return total(tanh(v["W2"] @ hidden + v["b2"]))

    for leaf in inputs:
        assert check_gradient(program, inputs, leaf) < 1e-4


def test_check_gradient_is_exact_for_linear_maps():
    inputs = {"w": np.array([1.5, -2.0, 0.25]), "x": np.array([0.3, 0.1, -4.0])}
    for h in (1e-3, 1e-5, 0.5):
        assert check_gradient(lambda v: v["w"] @ constant(inputs["x"]), inputs, "w", h=h) <= 1e-9


def test_check_gradient_of_constant_program_is_zero():
    inputs = {"a": np.ones(3)}
    assert check_gradient(lambda v: total(constant(np.ones(3))), inputs, "a") == 0.0

def test_dropout_identity_outside_training():
    x = constant(np.arange(5.0))
    assert dropout(x, 0.5, None, train_mode=False) is x
    assert dropout(x, 0.0, np.random.default_rng(0), train_mode=True) is x


def test_dropout_preserves_expectation():
    x = constant(np.ones(200_000))
    out = dropout(x, 0.5, np.random.default_rng(1), train_mode=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.01


def test_dropout_requires_rng_in_training():
    with pytest.raises(ValidationError):
        dropout(constant(np.ones(3)), 0.5, None, train_mode=True)


def test_check_gradient_detects_wrong_gradient():
    def broken(v):
        # forward is x^2 but the recorded backward is that of x
        node = DiffValue(v["x"].data ** 2, (v["x"],), lambda g: (g,), op="broken")
        return total(node)

    assert check_gradient(broken, {"x": np.array([3.0, -2.0])}, "x") > 1.0


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert global_norm(clipped) == pytest.approx(1.0)
    np.testing.assert_allclose(clipped["a"] / clipped["b"], 0.75)

    untouched, _ = clip_by_global_norm(grads, None)
    np.testing.assert_array_equal(untouched["a"], grads["a"])


def test_lstm_gradients_match_torch():
    torch = pytest.importorskip("torch")
    size, width = 4, 3
    x, h, c = RNG.normal(size=width), RNG.normal(size=size), RNG.normal(size=size)
    W, b = RNG.normal(size=(4 * size, width + size)), RNG.normal(size=4 * size)

    root, leaves = evaluate_graph(
        {"W": W, "b": b},
        lambda v: total(lstm_step(constant(x), LSTMState(constant(h), constant(c)), v["W"], v["b"]).hidden),
    )
    grads = backpropagate(root)

    tW = torch.tensor(W, dtype=torch.float64, requires_grad=True)
    tb = torch.tensor(b, dtype=torch.float64, requires_grad=True)
    z = tW @ torch.cat([torch.tensor(x), torch.tensor(h)]) + tb
    i, f, o, g = z.split(size)
    cell = torch.sigmoid(f) * torch.tensor(c) + torch.sigmoid(i) * torch.tanh(g)
    hidden = torch.sigmoid(o) * torch.tanh(cell)
    hidden.sum().backward()

    assert root.item() == pytest.approx(float(hidden.sum()), abs=1e-12)
    np.testing.assert_allclose(grads["W"], tW.grad.numpy(), atol=1e-12)
    np.testing.assert_allclose(grads["b"], tb.grad.numpy(), atol=1e-12)


def test_softmax_cross_entropy_matches_torch():
    torch = pytest.importorskip("torch")
    logits = RNG.normal(size=6)
    root, _ = evaluate_graph({"s": logits}, lambda v: -pick(log_softmax(v["s"]), 4))
    grads = backpropagate(root)

    t = torch.tensor(logits, requires_grad=True)
    loss = torch.nn.functional.cross_entropy(t[None, :], torch.tensor([4]))
    loss.backward()
    np.testing.assert_allclose(grads["s"], t.grad.numpy(), atol=1e-12)
