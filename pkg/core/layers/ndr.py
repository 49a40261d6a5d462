# core/layers/ndr.py
"""
Neural Data Router: atenção geométrica multi-cabeça (Retrieve) e
composição com gate vetorial (Compose). E passa inalterado.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.errors import ConfigError
from core.layers.common import ffn, init_ffn, init_layer_norm, norm
from core.params import ParamSet, glorot
from core.recschema import Retrieval, SeqState, StepInfo, build_order, geometric_prefix_attention
from core.tensor import Tensor, concat, sigmoid, swapaxes


@dataclass
class NDRConfig:
    d: int = 64
    n_heads: int = 2
    ffn_hidden: int = 256
    n_layers: int = 8
    eval_layers: Optional[int] = None
    gate_bias: float = -1.0   # viés do FFN_gate: começa copiando

    def __post_init__(self):
        if self.n_heads < 1 or self.d % self.n_heads:
            raise ConfigError(f"d={self.d} não é divisível por n_heads={self.n_heads}")
        if self.n_layers < 1:
            raise ConfigError("n_layers deve ser >= 1")
        if self.eval_layers is not None and self.eval_layers < 1:
            raise ConfigError("eval_layers deve ser >= 1")

    @property
    def d_h(self) -> int:
        return self.d // self.n_heads


def init_ndr_params(ps: ParamSet, rng: np.random.Generator, cfg: NDRConfig, prefix: str = "ndr"):
    d, dh = cfg.d, cfg.d_h
    for h in range(cfg.n_heads):
        ps.add(f"{prefix}.W_q.{h}", glorot(rng, d, dh))
        ps.add(f"{prefix}.W_k.{h}", glorot(rng, d, dh))
        ps.add(f"{prefix}.W_v.{h}", glorot(rng, d, dh))
    ps.add(f"{prefix}.W_o", glorot(rng, cfg.n_heads * dh, d))
    init_layer_norm(ps, f"{prefix}.ln1", d)
    init_layer_norm(ps, f"{prefix}.ln2", d)
    init_ffn(ps, rng, f"{prefix}.gate", d, cfg.ffn_hidden, d, out_bias=cfg.gate_bias)
    init_ffn(ps, rng, f"{prefix}.data", d, cfg.ffn_hidden, d)


def match_scores(H: Tensor, E: Tensor, params: ParamSet, head: int, cfg: NDRConfig,
                 prefix: str = "ndr") -> Tensor:
    """C_ij = sigmoid(q_i . k_j / sqrt(d_h)) * E_j (máscara no eixo das chaves)."""
    q = H @ params[f"{prefix}.W_q.{head}"]
    k = H @ params[f"{prefix}.W_k.{head}"]
    logits = (q @ swapaxes(k, -1, -2)) * (1.0 / np.sqrt(cfg.d_h))
    return sigmoid(logits) * swapaxes(E, -1, -2)


def ndr_retrieve(H: Tensor, E: Tensor, params: ParamSet, cfg: NDRConfig, prefix: str = "ndr",
                 return_attention: bool = False):
    order = build_order("ndr", H.shape[-2])
    heads: List[Tensor] = []
    attn: List[Tensor] = []
    for h in range(cfg.n_heads):
        A, _ = geometric_prefix_attention(match_scores(H, E, params, h, cfg, prefix), order)
        heads.append(A @ (H @ params[f"{prefix}.W_v.{h}"]))
        attn.append(A)
    Y = concat(heads, axis=-1) @ params[f"{prefix}.W_o"]
    X = norm(Y + H, params, f"{prefix}.ln1")
    return (X, attn) if return_attention else X


def ndr_compose(X: Tensor, H: Tensor, E: Tensor, params: ParamSet, prefix: str = "ndr",
                return_gate: bool = False):
    """H' = G * LN_2(FFN_data(X)) + (1 - G) * H, com G = sigmoid(FFN_gate(X)); E' = E."""
    G = sigmoid(ffn(X, params, f"{prefix}.gate"))
    D = norm(ffn(X, params, f"{prefix}.data"), params, f"{prefix}.ln2")
    H_new = G * D + (1.0 - G) * H
    return (H_new, E, G) if return_gate else (H_new, E)


class NDRLayer:
    """Camada NDR compartilhada entre todos os passos da recursão."""

    def __init__(self, params: ParamSet, cfg: NDRConfig, prefix: str = "ndr"):
        self.params = params
        self.cfg = cfg
        self.prefix = prefix

    def retrieve(self, state: SeqState) -> Retrieval:
        X, attn = ndr_retrieve(state.H, state.E, self.params, self.cfg, self.prefix, return_attention=True)
        return Retrieval(X=X, attention=attn)

    def compose(self, retrieval: Retrieval, state: SeqState) -> Tuple[SeqState, StepInfo]:
        H, E, G = ndr_compose(retrieval.X, state.H, state.E, self.params, self.prefix, return_gate=True)
        info = StepInfo(G=G.data.mean(axis=-1))
        return SeqState(H=H, E=E, step=state.step + 1, nonpad=state.nonpad), info
