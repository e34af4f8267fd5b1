"""Tests for the reverse-mode tape (app/autodiff.py).

Values are checked against hand arithmetic, gradients against central
differences. Deterministic and offline.
"""
import math

import numpy as np
import pytest

from app.autodiff import (
    Graph,
    Var,
    as_tensor,
    backward,
    concat,
    elementwise,
    finite_diff_check,
    finite_diff_check_many,
    log_sum_exp,
    matmul,
    reduce_sum,
    reshape,
    softmax,
)
from app.core import ContractViolation, DimensionError, DomainError


# ── Values ──────────────────────────────────────────────────────────────────

def test_matmul_identity_and_hand_product():
    g = Graph()
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(g.constant(np.eye(2)), g.constant(m)).value, m)
    out = matmul(g.constant([[1.0, 2.0]]), g.constant([[3.0], [4.0]]))
    assert out.value.tolist() == [[11.0]]


def test_matmul_shape_mismatch_names_both_shapes():
    g = Graph()
    with pytest.raises(DimensionError) as exc:
        matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3))))
    assert "(2, 3) vs (2, 3)" in str(exc.value)


def test_relu_and_leaky_relu_values():
    g = Graph()
    assert elementwise("relu", g.constant([-1.0, 0.0, 2.0])).value.tolist() == [0.0, 0.0, 2.0]
    leaky = elementwise("leaky_relu", g.constant([-1.0, 2.0]), alpha=0.2).value
    assert leaky.tolist() == pytest.approx([-0.2, 2.0])


def test_relu_gradient_at_zero_is_zero():
    g = Graph()
    x = g.leaf([0.0, 1.0])
    backward(elementwise("relu", x).sum())
    assert x.grad.tolist() == [0.0, 1.0]


def test_log_of_non_positive_entry_reports_index():
    g = Graph()
    with pytest.raises(DomainError) as exc:
        elementwise("log", g.constant([[1.0, 2.0], [0.0, 3.0]]))
    assert exc.value.index == (1, 0)


def test_unknown_elementwise_tag_is_rejected():
    with pytest.raises(ContractViolation):
        elementwise("cosh", Graph().constant([1.0]))


def test_log_sum_exp_values():
    g = Graph()
    assert float(log_sum_exp(g.constant([0.0, 0.0])).value) == pytest.approx(math.log(2.0), abs=1e-15)
    assert float(log_sum_exp(g.constant([1000.0, 1000.0])).value) == pytest.approx(1000.0 + math.log(2.0))
    naive = math.log(math.exp(0) + math.exp(1) + math.exp(2))
    assert float(log_sum_exp(g.constant([0.0, 1.0, 2.0])).value) == pytest.approx(naive, rel=1e-12)


def test_log_sum_exp_shift_invariance():
    rng = np.random.default_rng(3)
    g = Graph()
    x = rng.uniform(-3, 3, size=9)
    for c in (-50.0, 0.7, 300.0):
        shifted = float(log_sum_exp(g.constant(x + c)).value)
        assert shifted == pytest.approx(float(log_sum_exp(g.constant(x)).value) + c, abs=1e-12)


def test_log_sum_exp_empty_is_contract_violation():
    # as_tensor refuses zero-sized dimensions before log_sum_exp sees them
    with pytest.raises(ContractViolation):
        log_sum_exp(Graph().constant(np.zeros(0)))


def test_softmax_sums_to_one_at_extreme_scores():
    s = softmax(Graph().constant([800.0, -800.0, 0.0])).value
    assert np.all(np.isfinite(s))
    assert s.sum() == pytest.approx(1.0, abs=1e-15)


def test_as_tensor_copies():
    src = np.array([1.0, 2.0])
    t = as_tensor(src)
    src[0] = 9.0
    assert t[0] == 1.0


# ── backward ────────────────────────────────────────────────────────────────

def test_backward_square():
    g = Graph()
    x = g.leaf([3.0])
    backward((x * x).sum())
    assert x.grad.tolist() == [6.0]


def test_backward_accumulates_across_paths():
    g = Graph()
    x = g.leaf([1.5, -2.0])
    backward((x + x).sum())
    assert x.grad.tolist() == [2.0, 2.0]


def test_backward_fan_out_sums_path_adjoints():
    g = Graph()
    x = g.leaf([0.3, 0.9])
    y = elementwise("tanh", x)
    backward((y * y + elementwise("exp", y)).sum())
    t = np.tanh([0.3, 0.9])
    expected = (2 * t + np.exp(t)) * (1 - t * t)
    np.testing.assert_allclose(x.grad, expected, rtol=1e-14)


def test_backward_requires_scalar_root():
    g = Graph()
    x = g.leaf([1.0, 2.0])
    with pytest.raises(ContractViolation):
        backward(x * 2.0)


def test_backward_returns_leaf_gradients_only():
    g = Graph()
    x = g.leaf([1.0, 2.0])
    c = g.constant([5.0, 7.0])
    grads = backward((x * c).sum())
    assert set(grads) == {x.id}
    assert c.grad.tolist() == [0.0, 0.0]
    assert grads[x.id].tolist() == [5.0, 7.0]


def test_parents_precede_children():
    g = Graph()
    x = g.leaf(np.ones((2, 3)))
    w = g.leaf(np.ones((3, 1)))
    reduce_sum(elementwise("tanh", matmul(x, w)))
    for node in g.nodes:
        assert all(p < node.id for p in node.parents)
        assert node.grad.shape == node.value.shape


def test_graph_evaluation_is_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(4, 3))

    def run():
        g = Graph()
        v = g.leaf(x)
        backward(log_sum_exp(reshape(elementwise("softplus", v), (12,))))
        return v.grad.copy()

    assert np.array_equal(run(), run())


# ── Finite differences ──────────────────────────────────────────────────────

def test_finite_diff_on_sum_of_squares():
    err = finite_diff_check(lambda x: (x * x).sum(), np.array([1.0, 2.0, 3.0]))
    assert err < 1e-9


def test_finite_diff_on_constant_function_is_zero():
    err = finite_diff_check(lambda x: x.graph.constant(np.array(4.0)) + (x * 0.0).sum(), np.array([1.0, -1.0]))
    assert err == 0.0


def test_activations_are_reached_through_elementwise_only():
    for name in ("T", "relu", "tanh", "exp", "log"):
        assert not hasattr(Var, name)
    assert not hasattr(Graph, "__len__")
    g = Graph()
    y = elementwise("relu", g.leaf([-1.0, 2.0]))
    np.testing.assert_array_equal(y.value, [0.0, 2.0])


def test_tanh_adjoint_at_half():
    g = Graph()
    x = g.leaf([0.5])
    backward(elementwise("tanh", x).sum())
    assert x.grad[0] == pytest.approx(1 - math.tanh(0.5) ** 2, rel=1e-15)
    assert finite_diff_check(lambda v: elementwise("tanh", v).sum(), np.array([0.5])) < 1e-6


def _off_zero(rng, shape):
    """Uniform in [-3, 3] with |x| >= 0.1."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 3.0, size=shape)


@pytest.mark.parametrize("tag", ["tanh", "exp", "negate", "softplus", "sigmoid", "leaky_relu", "relu"])
def test_elementwise_gradients_random(tag):
    rng = np.random.default_rng(sum(map(ord, tag)))
    for _ in range(20):
        x = _off_zero(rng, (3, 4))  # off the kink
        assert finite_diff_check(lambda v: elementwise(tag, v).sum(), x) < 1e-6


def test_matmul_and_concat_gradients_random():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = _off_zero(rng, (3, 4)), _off_zero(rng, (4, 2))
        for i, j in np.ndindex(3, 2):
            pick = np.zeros((3, 2))
            pick[i, j] = 1.0
            err = finite_diff_check_many(
                lambda vs: (matmul(vs[0], vs[1]) * vs[0].graph.constant(pick)).sum(), [a, b]
            )
            assert err < 1e-6
        u, v = rng.uniform(-3, 3, size=3), rng.uniform(-3, 3, size=4)
        err = finite_diff_check_many(lambda vs: log_sum_exp(concat(vs)), [u, v])
        assert err < 1e-6
