# core/layers/common.py
# blocos reaproveitados pelos três modelos
import numpy as np

from core.params import ParamSet, glorot
from core.tensor import Tensor, gelu, layer_norm

LN_EPS = 1e-5


def init_linear(ps: ParamSet, rng: np.random.Generator, prefix: str, d_in: int, d_out: int,
                bias: bool = True, bias_value: float = 0.0):
    ps.add(f"{prefix}.W", glorot(rng, d_in, d_out))
    if bias:
        ps.add(f"{prefix}.b", np.full(d_out, bias_value))


def linear(x: Tensor, ps: ParamSet, prefix: str) -> Tensor:
    y = x @ ps[f"{prefix}.W"]
    b = f"{prefix}.b"
    return y + ps[b] if b in ps else y


def init_ffn(ps: ParamSet, rng: np.random.Generator, prefix: str, d_in: int, hidden: int, d_out: int,
             out_bias: float = 0.0):
    init_linear(ps, rng, f"{prefix}.l1", d_in, hidden)
    init_linear(ps, rng, f"{prefix}.l2", hidden, d_out, bias_value=out_bias)


def ffn(x: Tensor, ps: ParamSet, prefix: str) -> Tensor:
    """Duas camadas, GeLU no meio."""
    return linear(gelu(linear(x, ps, f"{prefix}.l1")), ps, f"{prefix}.l2")


def init_layer_norm(ps: ParamSet, prefix: str, d: int):
    ps.add(f"{prefix}.gain", np.ones(d))
    ps.add(f"{prefix}.bias", np.zeros(d))


def norm(x: Tensor, ps: ParamSet, prefix: str) -> Tensor:
    return layer_norm(x, ps[f"{prefix}.gain"], ps[f"{prefix}.bias"], LN_EPS)
