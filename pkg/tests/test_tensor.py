# tests/test_tensor.py
import numpy as np
import pytest

from core.errors import DomainError, ShapeError
from core.tensor import (Tensor, apply_elementwise, backward, build_graph, concat, cross_entropy, grad_check,
                         layer_norm, matmul, reduce, softmax, take_rows)


def test_matmul_identity_and_selector():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(np.eye(2), a).data, a)
    np.testing.assert_array_equal(matmul([[1.0, 0.0]], [[2.0], [5.0]]).data, [[2.0]])


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(np.ones((2, 3)), np.ones((4, 2)))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_matmul_gradcheck(rng):
    b = rng.standard_normal((4, 2))
    w = rng.standard_normal((3, 2))
    assert grad_check(lambda t: (matmul(t, b) * w).sum(), rng.standard_normal((3, 4))) < 1e-5


def test_elementwise_examples():
    np.testing.assert_allclose(apply_elementwise("sigmoid", np.zeros(1)).data, [0.5])
    np.testing.assert_allclose(apply_elementwise("tanh", np.zeros(1)).data, [0.0])
    np.testing.assert_allclose(apply_elementwise("add", [[1.0], [2.0]], [10.0, 20.0]).data,
                               [[11.0, 21.0], [12.0, 22.0]])


def test_elementwise_rejects_bad_broadcast():
    with pytest.raises(ShapeError):
        apply_elementwise("add", np.ones((2, 3)), np.ones((3, 2)))


def test_log1p_domain():
    with pytest.raises(DomainError):
        apply_elementwise("log1p", np.array([-1.0]))


def test_gelu_values_dtype_and_gradient(rng):
    y = apply_elementwise("gelu", np.array([0.0, 1.0])).data
    np.testing.assert_allclose(y, [0.0, 0.8411919906], atol=1e-9)
    assert apply_elementwise("gelu", np.ones(3, dtype=np.float32)).dtype == np.float32
    w = rng.standard_normal((3, 4))
    assert grad_check(lambda x: (apply_elementwise("gelu", x) * w).sum(), rng.standard_normal((3, 4))) < 1e-5


def test_sigmoid_is_stable_for_large_inputs():
    y = apply_elementwise("sigmoid", np.array([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 1.0])


def test_quadratic_gradient():
    w = Tensor([1.0, -2.0], requires_grad=True, name="w")
    grads = backward((w * w).sum())
    np.testing.assert_array_equal(grads["w"], [2.0, -4.0])


def test_broadcast_then_sum_matches_scalar_multiplication():
    x = Tensor(np.array([[3.0]]), requires_grad=True, name="x")
    y = (x * np.ones((1, 5))).sum()
    assert y.item() == 15.0
    assert backward(y)["x"][0, 0] == 5.0


def test_reduce_max_ties_go_to_lowest_index():
    x = Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]), requires_grad=True, name="x")
    g = backward(reduce("max", x, axis=1).sum())["x"]
    np.testing.assert_array_equal(g, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_reduce_empty_axis_rejected():
    with pytest.raises(ShapeError):
        reduce("sum", np.zeros((2, 0)), axis=1)


def test_layer_norm_standardizes():
    y = layer_norm(np.array([[1.0, 2.0, 3.0, 4.0]]), np.ones(4), np.zeros(4)).data
    assert abs(y.mean()) < 1e-12
    np.testing.assert_allclose(y.var(), 1.0, atol=1e-4)


def test_softmax_rows_sum_to_one_and_respect_mask(rng):
    x = rng.standard_normal((5, 6))
    mask = np.where(np.arange(6) < 4, 0.0, -1e9)
    y = softmax(x, axis=-1, additive_mask=mask).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(y[:, 4:] == 0.0)


def test_softmax_fully_masked_row_rejected():
    with pytest.raises(DomainError):
        softmax(np.zeros((2, 3)), additive_mask=np.full(3, -1e9))


def test_cross_entropy_uniform_logits_is_log_n():
    loss = cross_entropy(np.zeros((4, 10)), np.arange(4))
    np.testing.assert_allclose(loss.item(), np.log(10.0))


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_backward_is_deterministic(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True, name="a")
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True, name="b")
    loss = (apply_elementwise("tanh", matmul(a, b)) * matmul(a, b)).sum()
    graph = build_graph(loss)
    g1 = backward(loss, graph)
    g2 = backward(loss, graph)
    for k in ("a", "b"):
        assert g1[k].tobytes() == g2[k].tobytes()


def test_graph_visits_shared_nodes_once():
    x = Tensor(np.ones(2), requires_grad=True, name="x")
    h = x * 2.0
    loss = (h + h).sum()
    graph = build_graph(loss)
    assert len({id(n) for n in graph.nodes}) == len(graph.nodes)
    np.testing.assert_array_equal(backward(loss, graph)["x"], [4.0, 4.0])


def test_grad_check_examples(rng):
    assert grad_check(lambda t: t.sum(), 1e-3 * rng.standard_normal((3, 3))) < 1e-10
    assert grad_check(lambda t: apply_elementwise("sigmoid", t.sum()), rng.standard_normal(4)) < 1e-7


def test_take_rows_accumulates_repeated_ids():
    w = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True, name="w")
    g = backward(take_rows(w, np.array([0, 2, 0])).sum())["w"]
    np.testing.assert_array_equal(g, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 1)), requires_grad=True, name="a")
    b = Tensor(np.ones((2, 2)), requires_grad=True, name="b")
    out = concat([a, b], axis=-1)
    grads = backward((out * np.array([1.0, 2.0, 3.0])).sum())
    np.testing.assert_array_equal(grads["a"], [[1.0], [1.0]])
    np.testing.assert_array_equal(grads["b"], [[2.0, 3.0], [2.0, 3.0]])
