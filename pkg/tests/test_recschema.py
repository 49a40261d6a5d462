# tests/test_recschema.py
import numpy as np
import pytest

from core.errors import ConfigError, DomainError, NumericalError, ShapeError
from core.recschema import (HaltPolicy, Retrieval, RunConfig, SeqState, StepInfo, build_order, column_scores,
                            existence_weights, geometric_prefix_attention, halt_check, initial_state, readout,
                            run_recursion, trace_rows)
from core.tensor import Tensor, grad_check


def _state(E, d=2, H=None):
    E = np.asarray(E, dtype=float)
    if H is None:
        H = np.arange(E.shape[-1] * d, dtype=float).reshape(E.shape[-1], d)
    return SeqState(H=Tensor(H), E=Tensor(E[:, None]), nonpad=np.ones(E.shape[-1], dtype=bool))


# =========================
# Ordens
# =========================
def test_build_order_examples():
    assert build_order("ndr", 3).order(1) == (2, 0)
    assert build_order("crvnn_left", 4).order(3) == (2, 1, 0)
    assert build_order("crvnn_left", 4).order(0) == ()
    assert build_order("crvnn_right", 4).order(1) == (2, 3)


def test_ndr_order_ties_prefer_right_then_distance():
    assert build_order("ndr", 5).order(2) == (3, 1, 4, 0)


def test_build_order_rejects_bad_input():
    with pytest.raises(DomainError):
        build_order("ndr", 0)
    with pytest.raises(DomainError):
        build_order("diagonal", 3)


# =========================
# Kernel geométrico
# =========================
def test_geometric_attention_worked_row():
    C = np.zeros((3, 3))
    C[1, 0], C[1, 2] = 0.5, 0.8
    A, res = geometric_prefix_attention(C, build_order("ndr", 3))
    np.testing.assert_allclose(A.data[1], [0.1, 0.0, 0.8])
    np.testing.assert_allclose(res.data[1, 0], 0.1)


def test_geometric_attention_all_zero():
    A, res = geometric_prefix_attention(np.zeros((4, 4)), build_order("ndr", 4))
    assert np.all(A.data == 0.0)
    np.testing.assert_array_equal(res.data[:, 0], np.ones(4))


def test_geometric_attention_saturates_on_first_preferred():
    C = np.full((3, 3), 0.7)
    C[1, 2] = 1.0
    A, res = geometric_prefix_attention(C, build_order("ndr", 3))
    np.testing.assert_allclose(A.data[1], [0.0, 0.0, 1.0], atol=1e-12)
    assert res.data[1, 0] < 1e-12


def test_row_identity_and_zero_diagonal(rng):
    for kind in ("ndr", "crvnn_left", "crvnn_right"):
        C = rng.uniform(0.0, 1.0, size=(2, 6, 6))
        A, res = geometric_prefix_attention(C, build_order(kind, 6))
        np.testing.assert_allclose(A.data.sum(axis=-1) + res.data[..., 0], 1.0, atol=1e-6)
        assert np.all(np.diagonal(A.data, axis1=-2, axis2=-1) == 0.0)


def test_crvnn_left_has_no_mass_on_the_right(rng):
    A, _ = geometric_prefix_attention(rng.uniform(size=(5, 5)), build_order("crvnn_left", 5))
    assert np.all(np.triu(A.data) == 0.0)


def test_attention_identities_on_random_instances(rng):
    for _ in range(200):
        s = int(rng.integers(1, 17))
        C = rng.uniform(0.0, 1.0, size=(s, s))
        for kind in ("ndr", "crvnn_left", "crvnn_right"):
            A, res = geometric_prefix_attention(C, build_order(kind, s))
            np.testing.assert_allclose(A.data.sum(axis=-1) + res.data[:, 0], 1.0, atol=1e-6)
            assert np.all(np.diagonal(A.data) == 0.0)
            if kind == "crvnn_left":
                assert np.all(np.triu(A.data) == 0.0)
            if kind == "crvnn_right":
                assert np.all(np.tril(A.data) == 0.0)


@pytest.mark.parametrize("kind", ["ndr", "crvnn_left", "crvnn_right"])
def test_geometric_attention_ignores_padded_columns(rng, kind):
    for _ in range(50):
        s, n_pad = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        C = rng.uniform(0.0, 1.0, size=(s, s))
        C_pad = rng.uniform(0.0, 1.0, size=(s + n_pad, s + n_pad))
        C_pad[:s, :s] = C
        C_pad[:, s:] = 0.0
        A, res = geometric_prefix_attention(C, build_order(kind, s))
        A_p, res_p = geometric_prefix_attention(C_pad, build_order(kind, s + n_pad))
        np.testing.assert_allclose(A_p.data[:s, :s], A.data, atol=1e-12)
        np.testing.assert_allclose(res_p.data[:s], res.data, atol=1e-12)
        assert np.all(A_p.data[:s, s:] == 0.0)


def test_column_scores_reduce_to_direct_product():
    E = np.array([[1.0], [0.3], [0.6], [0.9]])
    A, _ = geometric_prefix_attention(column_scores(E), build_order("crvnn_left", 4))
    e = E[:, 0]
    direct = np.zeros((4, 4))
    for i in range(4):
        for j in range(i):
            direct[i, j] = e[j] * np.prod(1.0 - e[j + 1:i])
    np.testing.assert_allclose(A.data, direct, atol=1e-12)


def test_geometric_attention_rejects_bad_scores():
    with pytest.raises(DomainError):
        geometric_prefix_attention(np.full((3, 3), 1.5), build_order("ndr", 3))
    with pytest.raises(ShapeError):
        geometric_prefix_attention(np.zeros((3, 4)), build_order("ndr", 3))


def test_geometric_attention_gradcheck(rng):
    order = build_order("ndr", 4)
    w = rng.standard_normal((4, 4))
    f = lambda C: (geometric_prefix_attention(C, order)[0] * w).sum()
    assert grad_check(f, rng.uniform(0.1, 0.9, size=(4, 4))) < 1e-5


# =========================
# Parada e readout
# =========================
@pytest.mark.parametrize("E, expected", [
    ([1.0, 0.0, 0.0], True),
    ([1.0, 0.6, 0.0], False),
    ([0.49, 0.51, 0.2], True),
])
def test_halt_check_examples(E, expected):
    assert halt_check(_state(E), HaltPolicy.existential(0.5)) is expected


def test_halt_policy_validates_tau():
    with pytest.raises(ConfigError):
        HaltPolicy.existential(1.0)


def test_readout_policies():
    H = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    st = _state([0.0, 0.0, 1.0], H=H)
    np.testing.assert_allclose(readout(st, "first").data, [1.0, 2.0])
    np.testing.assert_allclose(readout(st, "last_existing_weighted").data, [5.0, 6.0])
    padded = SeqState(H=Tensor(H), E=Tensor(np.array([[1.0], [1.0], [0.0]])), nonpad=np.array([1, 1, 0], bool))
    np.testing.assert_allclose(readout(padded, "last_nonpad").data, [3.0, 4.0])


def test_existence_weights_example():
    w = existence_weights(np.array([[1.0], [0.5]])).data
    np.testing.assert_allclose(w, [0.5, 0.5])


# =========================
# Driver
# =========================
class _Doubler:
    """Modelo de brinquedo: H <- 2H, E inalterado."""

    def retrieve(self, state):
        return Retrieval(X=state.H)

    def compose(self, retrieval, state):
        return SeqState(H=retrieval.X * 2.0, E=state.E, step=state.step + 1, nonpad=state.nonpad), StepInfo()


class _Poison(_Doubler):
    def compose(self, retrieval, state):
        H = Tensor(np.full(state.H.shape, np.nan))
        return SeqState(H=H, E=state.E, step=state.step + 1, nonpad=state.nonpad), StepInfo()


def test_run_config_rejects_zero_steps():
    with pytest.raises(ConfigError):
        RunConfig(t_max=0)


def test_run_recursion_without_halting_runs_t_max_steps():
    init = initial_state(Tensor(np.ones((3, 2))), np.ones(3, dtype=bool))
    res = run_recursion(_Doubler(), init, RunConfig(t_max=1, trace=True))
    assert res.final.step == 1 and len(res.trace) == 1
    res = run_recursion(_Doubler(), init, RunConfig(t_max=4))
    assert res.halt_step == 4
    np.testing.assert_array_equal(res.final.H.data, np.full((3, 2), 16.0))


def test_run_recursion_existential_halt_stops_early():
    init = initial_state(Tensor(np.ones((1, 2))), np.ones(1, dtype=bool))
    res = run_recursion(_Doubler(), init, RunConfig(t_max=5, halt=HaltPolicy.existential()))
    assert res.halt_step == 1


def test_run_recursion_per_example_limits_freeze_state():
    init = initial_state(Tensor(np.ones((2, 3, 1))), np.ones((2, 3), dtype=bool))
    res = run_recursion(_Doubler(), init, RunConfig(t_max=3, example_t_max=np.array([1, 3])))
    np.testing.assert_array_equal(res.halt_steps, [1, 3])
    assert np.all(res.final.H.data[0] == 2.0)
    assert np.all(res.final.H.data[1] == 8.0)


def test_run_recursion_reports_nan_step():
    init = initial_state(Tensor(np.ones((2, 2))), np.ones(2, dtype=bool))
    with pytest.raises(NumericalError) as exc:
        run_recursion(_Poison(), init, RunConfig(t_max=3))
    assert exc.value.step == 1


def test_trace_rows_schema():
    init = initial_state(Tensor(np.ones((3, 2))), np.ones(3, dtype=bool))
    res = run_recursion(_Doubler(), init, RunConfig(t_max=2, trace=True))
    rows = trace_rows(res.trace, tau=0.5)
    assert len(rows) == res.halt_step * 3
    assert rows[0] == {"step": 1, "position": 0, "E": 1.0, "G": None, "L": None, "E_bin": 1}
