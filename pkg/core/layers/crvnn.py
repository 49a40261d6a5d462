# core/layers/crvnn.py
"""
CRvNN: recuperação do primeiro vizinho existente à esquerda, gates escalares
de decisão, célula recursiva e deleção existencial monotônica.
"""
from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np

from core.errors import ConfigError
from core.layers.common import ffn, init_ffn, init_layer_norm, init_linear, linear, norm
from core.params import ParamSet
from core.recschema import (Retrieval, SeqState, StepInfo, build_order, column_scores,
                            geometric_prefix_attention, last_position_onehot)
from core.tensor import Tensor, concat, sigmoid, tanh

CELLS = ("grc", "lstm")


@dataclass
class CRvNNConfig:
    d: int = 64
    cell: str = "grc"
    cell_hidden: Optional[int] = None   # padrão 4d
    df_hidden: Optional[int] = None     # padrão d

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ConfigError(f"célula desconhecida: {self.cell}")
        if self.d < 1:
            raise ConfigError("d deve ser >= 1")
        self.cell_hidden = self.cell_hidden or 4 * self.d
        self.df_hidden = self.df_hidden or self.d


def init_crvnn_params(ps: ParamSet, rng: np.random.Generator, cfg: CRvNNConfig, prefix: str = "crvnn"):
    d = cfg.d
    init_ffn(ps, rng, f"{prefix}.df", 3 * d, cfg.df_hidden, 1)
    if cfg.cell == "grc":
        init_ffn(ps, rng, f"{prefix}.cell", 2 * d, cfg.cell_hidden, 4 * d)
        init_layer_norm(ps, f"{prefix}.cell.ln", d)
    else:
        init_linear(ps, rng, f"{prefix}.cell.lin", 2 * d, 5 * d)


# =========================
# Retrieve
# =========================
def neighbor_attention(E, direction: str = "left") -> Tensor:
    """A_ij = E_j * prod_{k em S_ij} (1 - E_k): primeiro item existente à esquerda (ou direita)."""
    kind = {"left": "crvnn_left", "right": "crvnn_right"}.get(direction)
    if kind is None:
        raise ConfigError(f"direção desconhecida: {direction}")
    A, _ = geometric_prefix_attention(column_scores(E), build_order(kind, E.shape[-2]))
    return A


def crvnn_retrieve(H: Tensor, E: Tensor, return_attention: bool = False):
    A = neighbor_attention(E, "left")
    X = A @ H
    return (X, A) if return_attention else X


# =========================
# Decisão
# =========================
def gate_mask(nonpad: np.ndarray) -> np.ndarray:
    # pads e a última posição real nunca disparam
    nonpad = np.asarray(nonpad, dtype=bool)
    return nonpad & ~last_position_onehot(nonpad)


def decision_gates(H: Tensor, E: Tensor, params: ParamSet, nonpad: Optional[np.ndarray] = None,
                   X: Optional[Tensor] = None, prefix: str = "crvnn") -> Tensor:
    """G_i = E_i * sigmoid(DF([X_i ; H_i ; R_i])), zerado nos pads e na última posição real."""
    if nonpad is None:
        nonpad = np.ones(E.shape[:-1], dtype=bool)
    if X is None:
        X = crvnn_retrieve(H, E)
    R = neighbor_attention(E, "right") @ H
    raw = sigmoid(ffn(concat([X, H, R], axis=-1), params, f"{prefix}.df"))
    mask = gate_mask(nonpad).astype(H.dtype)[..., None]
    return E * raw * mask


# =========================
# Células
# =========================
def _split4(z: Tensor, d: int):
    return [z[..., k * d:(k + 1) * d] for k in range(4)]


def grc_cell(X: Tensor, H: Tensor, params: ParamSet, prefix: str = "crvnn.cell") -> Tensor:
    d = X.shape[-1]
    gl, gr, gc, c = _split4(ffn(concat([X, H], axis=-1), params, prefix), d)
    out = sigmoid(gl) * X + sigmoid(gr) * H + sigmoid(gc) * tanh(c)
    return norm(out, params, f"{prefix}.ln")


def lstm_cell(X: Tensor, H: Tensor, params: ParamSet, prefix: str = "crvnn.cell") -> Tensor:
    # LSTM binária sem canal de memória separado
    d = X.shape[-1]
    z = linear(concat([X, H], axis=-1), params, f"{prefix}.lin")
    i, fl, fr, o, g = [z[..., k * d:(k + 1) * d] for k in range(5)]
    c = sigmoid(fl) * X + sigmoid(fr) * H + sigmoid(i) * tanh(g)
    return sigmoid(o) * tanh(c)


def make_cell(params: ParamSet, cfg: CRvNNConfig, prefix: str = "crvnn") -> Callable[[Tensor, Tensor], Tensor]:
    fn = grc_cell if cfg.cell == "grc" else lstm_cell
    return partial(fn, params=params, prefix=f"{prefix}.cell")


# =========================
# Compose
# =========================
def crvnn_compose(X: Tensor, H: Tensor, E: Tensor, G: Tensor, A: Tensor,
                  cell: Callable[[Tensor, Tensor], Tensor], return_pull: bool = False):
    """L = A G; H' = L * Cell(X, H) + (1 - L) * H; E' = E * (1 - G)."""
    L = A @ G
    H_new = L * cell(X, H) + (1.0 - L) * H
    E_new = E * (1.0 - G)
    return (H_new, E_new, L) if return_pull else (H_new, E_new)


class CRvNNLayer:
    def __init__(self, params: ParamSet, cfg: CRvNNConfig, prefix: str = "crvnn"):
        self.params = params
        self.cfg = cfg
        self.prefix = prefix
        self.cell = make_cell(params, cfg, prefix)

    def retrieve(self, state: SeqState) -> Retrieval:
        X, A = crvnn_retrieve(state.H, state.E, return_attention=True)
        return Retrieval(X=X, attention=[A])

    def compose(self, retrieval: Retrieval, state: SeqState) -> Tuple[SeqState, StepInfo]:
        G = decision_gates(state.H, state.E, self.params, state.nonpad, X=retrieval.X, prefix=self.prefix)
        H, E, L = crvnn_compose(retrieval.X, state.H, state.E, G, retrieval.attention[0], self.cell,
                                return_pull=True)
        info = StepInfo(G=G.data[..., 0], L=L.data[..., 0])
        return SeqState(H=H, E=E, step=state.step + 1, nonpad=state.nonpad), info
