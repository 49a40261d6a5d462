# core/layers/baseline.py
"""
Transformer encoder (pós-LN) escrito no mesmo esquema Retrieve/Compose.

Com share_layers=True vira um Universal Transformer: o mesmo bloco é
aplicado a cada passo e a profundidade pode mudar na avaliação.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.errors import ConfigError, DomainError, ShapeError
from core.layers.common import ffn, init_ffn, init_layer_norm, norm
from core.params import ParamSet, glorot
from core.recschema import Retrieval, RunConfig, SeqState, StepInfo, initial_state, run_recursion
from core.tensor import Tensor, additive_mask, concat, softmax, swapaxes, take_rows

POSITIONAL = ("sinusoidal",)


@dataclass
class BaselineConfig:
    d: int = 64
    n_heads: int = 2
    ffn_hidden: int = 256
    n_layers: int = 8
    share_layers: bool = True
    positional: str = "sinusoidal"
    eval_layers: Optional[int] = None

    def __post_init__(self):
        if self.n_heads < 1 or self.d % self.n_heads:
            raise ConfigError(f"d={self.d} não é divisível por n_heads={self.n_heads}")
        if self.n_layers < 1:
            raise ConfigError("n_layers deve ser >= 1")
        if self.positional not in POSITIONAL:
            raise ConfigError(f"posicional desconhecido: {self.positional}")
        if self.eval_layers is not None:
            if not self.share_layers:
                raise ConfigError("eval_layers só vale para camadas compartilhadas")
            if self.eval_layers < 1:
                raise ConfigError("eval_layers deve ser >= 1")

    @property
    def d_h(self) -> int:
        return self.d // self.n_heads

    @property
    def n_blocks(self) -> int:
        return 1 if self.share_layers else self.n_layers

    @property
    def depth(self) -> int:
        return self.eval_layers or self.n_layers


def block_prefix(prefix: str, layer: int) -> str:
    return f"{prefix}.blocks.{layer}"


def init_baseline_params(ps: ParamSet, rng: np.random.Generator, cfg: BaselineConfig, prefix: str = "baseline"):
    d, dh = cfg.d, cfg.d_h
    for layer in range(cfg.n_blocks):
        p = block_prefix(prefix, layer)
        for h in range(cfg.n_heads):
            ps.add(f"{p}.W_q.{h}", glorot(rng, d, dh))
            ps.add(f"{p}.W_k.{h}", glorot(rng, d, dh))
            ps.add(f"{p}.W_v.{h}", glorot(rng, d, dh))
        ps.add(f"{p}.W_o", glorot(rng, cfg.n_heads * dh, d))
        init_layer_norm(ps, f"{p}.ln1", d)
        init_ffn(ps, rng, f"{p}.ffn", d, cfg.ffn_hidden, d)
        init_layer_norm(ps, f"{p}.ln2", d)


def sinusoidal_positions(s: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(s)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    out = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return out.astype(dtype)


# =========================
# Bloco
# =========================
def attention_sublayer(H: Tensor, E: Tensor, params: ParamSet, cfg: BaselineConfig, prefix: str,
                       return_attention: bool = False):
    """Atenção multi-cabeça escalada com chaves de pad mascaradas, resíduo + LN."""
    keep = swapaxes(E, -1, -2).data > 0          # [..., 1, s]
    mask = additive_mask(keep, H.dtype)
    heads: List[Tensor] = []
    attn: List[Tensor] = []
    scale = 1.0 / np.sqrt(cfg.d_h)
    for h in range(cfg.n_heads):
        q = H @ params[f"{prefix}.W_q.{h}"]
        k = H @ params[f"{prefix}.W_k.{h}"]
        v = H @ params[f"{prefix}.W_v.{h}"]
        A = softmax((q @ swapaxes(k, -1, -2)) * scale, axis=-1, additive_mask=mask)
        heads.append(A @ v)
        attn.append(A)
    X = norm(concat(heads, axis=-1) @ params[f"{prefix}.W_o"] + H, params, f"{prefix}.ln1")
    return (X, attn) if return_attention else X


def ffn_sublayer(X: Tensor, params: ParamSet, prefix: str) -> Tensor:
    return norm(ffn(X, params, f"{prefix}.ffn") + X, params, f"{prefix}.ln2")


def softmax_attention_block(H: Tensor, E: Tensor, params: ParamSet, cfg: BaselineConfig,
                            prefix: str = "baseline.blocks.0") -> Tensor:
    if H.shape[-2] == 0:
        raise ShapeError("bloco de atenção com sequência vazia")
    if not np.all(np.any(E.data[..., 0] > 0, axis=-1)):
        raise DomainError("entrada só com pads: nenhuma chave válida")
    return ffn_sublayer(attention_sublayer(H, E, params, cfg, prefix), params, prefix)


class BaselineLayer:
    """Passo t usa o bloco 0 (compartilhado) ou o bloco t (pilha comum)."""

    def __init__(self, params: ParamSet, cfg: BaselineConfig, prefix: str = "baseline"):
        self.params = params
        self.cfg = cfg
        self.prefix = prefix

    def _block(self, step: int) -> str:
        if self.cfg.share_layers:
            return block_prefix(self.prefix, 0)
        if step >= self.cfg.n_layers:
            raise ConfigError(f"pilha sem compartilhamento tem só {self.cfg.n_layers} camadas")
        return block_prefix(self.prefix, step)

    def retrieve(self, state: SeqState) -> Retrieval:
        if not np.all(np.any(state.nonpad, axis=-1)):
            raise DomainError("entrada só com pads: nenhuma chave válida")
        X, attn = attention_sublayer(state.H, state.E, self.params, self.cfg, self._block(state.step),
                                     return_attention=True)
        return Retrieval(X=X, attention=attn)

    def compose(self, retrieval: Retrieval, state: SeqState) -> Tuple[SeqState, StepInfo]:
        H = ffn_sublayer(retrieval.X, self.params, self._block(state.step))
        return SeqState(H=H, E=state.E, step=state.step + 1, nonpad=state.nonpad), StepInfo()


def embed_tokens(tokens, params: ParamSet, name: str = "embed", positions: bool = False) -> Tensor:
    ids = np.asarray(tokens, dtype=np.int64)
    H = take_rows(params[name], ids)
    if positions:
        H = H + sinusoidal_positions(ids.shape[-1], H.shape[-1], H.dtype)
    return H


def transformer_encode(tokens, cfg: BaselineConfig, params: ParamSet, pad_id: int = 0,
                       prefix: str = "baseline", embed_name: str = "embed") -> SeqState:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim == 0 or ids.shape[-1] == 0:
        raise ShapeError("transformer_encode: sequência de tamanho 0")
    H = embed_tokens(ids, params, embed_name, positions=True)
    init = initial_state(H, ids != pad_id)
    result = run_recursion(BaselineLayer(params, cfg, prefix), init, RunConfig(t_max=cfg.depth))
    return result.final
