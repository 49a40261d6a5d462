# core/harness/gradsuite.py
"""
Bateria de diferenças finitas centrais (float64): cada primitiva em
instâncias aleatórias e um passo completo de cada modelo (s=4, d=8).
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from core.layers.baseline import BaselineConfig, init_baseline_params, softmax_attention_block
from core.layers.crvnn import CRvNNConfig, CRvNNLayer, init_crvnn_params
from core.layers.ndr import NDRConfig, NDRLayer, init_ndr_params
from core.params import ParamSet
from core.recschema import SeqState, build_order, geometric_prefix_attention
from core.tensor import (Tensor, apply_elementwise, clamp, concat, cross_entropy, einsum, grad_check, index,
                         layer_norm, matmul, reduce, reshape, softmax, swapaxes, take_rows, transpose)

log = logging.getLogger(__name__)

PRIMITIVE_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    # perda escalar com pesos fixos: evita gradientes nulos por simetria
    return (out * w).sum()


# =========================
# Primitivas
# =========================
def _cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[Tensor], Tensor], np.ndarray]]:
    """nome -> (f, x0), com os outros operandos sorteados e fixos."""
    r = rng.standard_normal
    B = r((4, 2))
    A = r((3, 4))
    w32, w34, w4 = r((3, 2)), r((3, 4)), r(4)
    y34 = r((3, 4))
    bcast = r((1, 4))
    denom = rng.uniform(0.5, 2.0, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
    gain, bias = rng.uniform(0.5, 1.5, 4), r(4)
    keep = np.array([[True, True, False, True]] * 3)
    labels = rng.integers(0, 4, 3)
    emb_ids = np.array([[0, 2, 2], [1, 0, 3]])
    w_emb = r((2, 3, 5))
    P = r((2, 3, 4))
    wq = r((2, 3, 4))

    def ew(kind, lo=None, hi=None):
        x = rng.uniform(lo, hi, (3, 4)) if lo is not None else r((3, 4))
        return (lambda t: _weighted(apply_elementwise(kind, t), w34)), x

    cases = {
        "matmul.a": (lambda t: _weighted(matmul(t, B), w32), A),
        "matmul.b": (lambda t: _weighted(matmul(A, t), w32), B),
        "sigmoid": ew("sigmoid"),
        "tanh": ew("tanh"),
        "gelu": ew("gelu"),
        "exp": ew("exp", -1.0, 1.0),
        "log1p": ew("log1p", -0.5, 2.0),
        "log": ew("log", 0.5, 2.0),
        "neg": ew("neg"),
        "add.broadcast": (lambda t: _weighted(apply_elementwise("add", y34, t), w34), bcast),
        "sub": (lambda t: _weighted(apply_elementwise("sub", y34, t), w34), r((3, 4))),
        "mul.broadcast": (lambda t: _weighted(apply_elementwise("mul", t, y34), w34), bcast),
        "div.num": (lambda t: _weighted(apply_elementwise("div", t, denom), w34), r((3, 4))),
        "div.den": (lambda t: _weighted(apply_elementwise("div", y34, t), w34), denom),
        "reduce.sum": (lambda t: _weighted(reduce("sum", t, axis=1), w34[:, 0]), r((3, 4))),
        "reduce.mean": (lambda t: _weighted(reduce("mean", t, axis=0), w4), r((3, 4))),
        "reduce.max": (lambda t: _weighted(reduce("max", t, axis=1), w34[:, 1]),
                       rng.permutation(12).reshape(3, 4) * 0.3 + r((3, 4)) * 0.01),
        "layer_norm.x": (lambda t: _weighted(layer_norm(t, gain, bias), w34), r((3, 4))),
        "layer_norm.gain": (lambda t: _weighted(layer_norm(y34, t, bias), w34), gain),
        "layer_norm.bias": (lambda t: _weighted(layer_norm(y34, gain, t), w34), bias),
        "softmax.masked": (lambda t: _weighted(softmax(t, axis=-1, additive_mask=np.where(keep, 0.0, -1e9)), w34),
                           r((3, 4))),
        "cross_entropy": (lambda t: cross_entropy(t, labels), r((3, 4))),
        "reshape": (lambda t: _weighted(reshape(t, (4, 3)), w34.reshape(4, 3)), r((3, 4))),
        "transpose": (lambda t: _weighted(transpose(t, (1, 0)), w34.T), r((3, 4))),
        "swapaxes": (lambda t: _weighted(swapaxes(t, 0, 1), w34.T), r((3, 4))),
        "concat": (lambda t: _weighted(concat([t, y34], axis=0), np.concatenate([w34, w34], axis=0)), r((3, 4))),
        "index.slice": (lambda t: _weighted(index(t, (slice(None), slice(1, 3))), w34[:, :2]), r((3, 4))),
        "index.gather": (lambda t: _weighted(index(t, (np.array([0, 2, 2]),)), w34), r((3, 4))),
        "take_rows": (lambda t: _weighted(take_rows(t, emb_ids), w_emb), r((4, 5))),
        "einsum": (lambda t: _weighted(einsum("nij,njk->nik", P, t), wq), r((2, 4, 4))),
        "clamp": (lambda t: _weighted(clamp(t, -0.5, 0.5), w34),
                  rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.1, 0.4, (3, 4))
                  + rng.choice([0.0, 1.0], (3, 4))),
    }
    for kind in ("ndr", "crvnn_left", "crvnn_right"):
        order = build_order(kind, 4)
        wa, wr = r((4, 4)), r((4, 1))
        cases[f"geometric.{kind}"] = (
            lambda t, o=order, wa=wa, wr=wr: (lambda ar: _weighted(ar[0], wa) + _weighted(ar[1], wr))(
                geometric_prefix_attention(t, o)),
            rng.uniform(0.05, 0.95, (4, 4)))
    return cases


def primitive_checks(seed: int = 0, n_instances: int = 20, tol: float = PRIMITIVE_TOL) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    worst: Dict[str, float] = {}
    for _ in range(n_instances):
        for name, (f, x0) in _cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), grad_check(f, x0))
    return [CheckResult(f"primitive.{k}", v, tol) for k, v in worst.items()]


# =========================
# Passo completo dos modelos
# =========================
def _param_checks(label: str, loss_fn: Callable[[ParamSet, Tensor], Tensor], ps: ParamSet, H0: np.ndarray,
                  tol: float) -> List[CheckResult]:
    out = [CheckResult(f"{label}.H", grad_check(lambda t: loss_fn(ps, t), H0), tol)]
    for name in ps:
        def f(t, name=name):
            return loss_fn(ps.replace(name, t), Tensor(H0))
        out.append(CheckResult(f"{label}.{name}", grad_check(f, ps[name].data), tol))
    return out


def model_step_checks(seed: int = 0, s: int = 4, d: int = 8, tol: float = MODEL_TOL) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    H0 = rng.standard_normal((s, d))
    E0 = rng.uniform(0.3, 1.0, (s, 1))
    nonpad = np.ones(s, dtype=bool)
    wH, wE = rng.standard_normal((s, d)), rng.standard_normal((s, 1))
    results: List[CheckResult] = []

    def step_loss(layer_cls, cfg):
        def loss(ps, H):
            state = SeqState(H=H, E=Tensor(E0), nonpad=nonpad)
            layer = layer_cls(ps, cfg)
            new, _ = layer.compose(layer.retrieve(state), state)
            return _weighted(new.H, wH) + _weighted(new.E, wE)
        return loss

    ps = ParamSet("float64")
    ccfg = CRvNNConfig(d=d)
    init_crvnn_params(ps, rng, ccfg)
    results += _param_checks("crvnn_step", step_loss(CRvNNLayer, ccfg), ps, H0, tol)

    ps = ParamSet("float64")
    ccfg = CRvNNConfig(d=d, cell="lstm")
    init_crvnn_params(ps, rng, ccfg)
    results += _param_checks("crvnn_lstm_step", step_loss(CRvNNLayer, ccfg), ps, H0, tol)

    ps = ParamSet("float64")
    ncfg = NDRConfig(d=d, n_heads=2, ffn_hidden=2 * d, n_layers=2)
    init_ndr_params(ps, rng, ncfg)
    results += _param_checks("ndr_step", step_loss(NDRLayer, ncfg), ps, H0, tol)

    ps = ParamSet("float64")
    bcfg = BaselineConfig(d=d, n_heads=2, ffn_hidden=2 * d, n_layers=1)
    init_baseline_params(ps, rng, bcfg)
    E_pad = np.ones((s, 1))

    def block_loss(p, H):
        return _weighted(softmax_attention_block(H, Tensor(E_pad), p, bcfg), wH)
    results += _param_checks("baseline_block", block_loss, ps, H0, tol)
    return results


def run_suite(seed: int = 0) -> List[CheckResult]:
    t0 = time.perf_counter()
    results = primitive_checks(seed) + model_step_checks(seed)
    bad = [r for r in results if not r.passed]
    for r in results:
        log.debug("[GRADCHECK] %-40s %.3e", r.name, r.error)
    log.info("[GRADCHECK] %d verificações, %d falhas, %.1fs", len(results), len(bad), time.perf_counter() - t0)
    for r in bad:
        log.error("[GRADCHECK] falhou %s: erro %.3e >= %.0e", r.name, r.error, r.tol)
    return results
