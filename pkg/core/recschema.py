# core/recschema.py
"""
Esquema recursivo comum: H^{t+1}, E^{t+1} = Compose(Retrieve(H^t, E^t), H^t, E^t).

Aqui ficam o estado (SeqState), as ordens de vizinhança, o kernel de atenção
geométrica por produto prefixado (compartilhado por NDR e CRvNN), o driver
da recursão, a parada dinâmica e as políticas de readout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

from core.errors import ConfigError, DomainError, NumericalError, ShapeError
from core.tensor import (Tensor, as_tensor, clamp, concat, einsum, exp, index,
                         log1p, reshape, swapaxes)

log = logging.getLogger(__name__)

ORDER_KINDS = ("ndr", "crvnn_left", "crvnn_right")
READOUT_POLICIES = ("first", "last_nonpad", "last_existing_weighted")
HALT_KINDS = ("none", "existential")

E_TOL = 1e-9
C_TOL = 1e-6


def _log_cap(dtype) -> float:
    # teto de C antes do log1p(-C); em float32 1-1e-12 arredonda para 1
    return 1.0 - max(1e-12, 4.0 * float(np.finfo(dtype).eps))


# =========================
# Estado
# =========================
@dataclass
class SeqState:
    H: Tensor                       # [..., s, d]
    E: Tensor                       # [..., s, 1]
    step: int = 0
    nonpad: Optional[np.ndarray] = None   # [..., s] máscara inicial (constante)

    def __post_init__(self):
        if self.H.shape[:-1] != self.E.shape[:-1] or self.E.shape[-1] != 1:
            raise ShapeError(f"SeqState: H {self.H.shape} incompatível com E {self.E.shape}")
        if self.nonpad is None:
            self.nonpad = self.E.data[..., 0] > 0
        else:
            self.nonpad = np.asarray(self.nonpad, dtype=bool)

    @property
    def s(self) -> int:
        return self.H.shape[-2]

    @property
    def d(self) -> int:
        return self.H.shape[-1]

    def check(self):
        e = self.E.data
        if np.any(e < -E_TOL) or np.any(e > 1 + E_TOL):
            raise DomainError("E fora de [0, 1]")
        if np.any(e[..., 0][~self.nonpad] != 0):
            raise DomainError("posição de pad com E != 0")


def initial_state(H: Tensor, nonpad: np.ndarray) -> SeqState:
    nonpad = np.asarray(nonpad, dtype=bool)
    E = Tensor(nonpad[..., None].astype(H.dtype))
    return SeqState(H=H, E=E, step=0, nonpad=nonpad)


# =========================
# Ordens de vizinhança
# =========================
@dataclass(frozen=True)
class NeighborhoodOrder:
    """order(i): posições de contexto, a primeira é a preferida.
    S_ij = posições que vêm antes de j em order(i)."""
    kind: str
    orders: Tuple[Tuple[int, ...], ...]

    @property
    def s(self) -> int:
        return len(self.orders)

    def order(self, i: int) -> Tuple[int, ...]:
        return self.orders[i]

    @cached_property
    def members(self) -> np.ndarray:
        m = np.zeros((self.s, self.s))
        for i, o in enumerate(self.orders):
            m[i, list(o)] = 1.0
        return m

    @cached_property
    def precedes(self) -> np.ndarray:
        # P[i, j, k] = 1 se k vem antes de j em order(i)
        p = np.zeros((self.s, self.s, self.s))
        for i, o in enumerate(self.orders):
            for r, j in enumerate(o):
                p[i, j, list(o[:r])] = 1.0
        return p


@lru_cache(maxsize=256)
def build_order(kind: str, s: int) -> NeighborhoodOrder:
    if s < 1:
        raise DomainError(f"build_order: s deve ser >= 1 (veio {s})")
    if kind == "ndr":
        # mesma distância: a posição da direita vem antes da esquerda
        orders = tuple(
            tuple(sorted((j for j in range(s) if j != i), key=lambda j: (abs(i - j), 0 if j > i else 1)))
            for i in range(s))
    elif kind == "crvnn_left":
        orders = tuple(tuple(range(i - 1, -1, -1)) for i in range(s))
    elif kind == "crvnn_right":
        orders = tuple(tuple(range(i + 1, s)) for i in range(s))
    else:
        raise DomainError(f"ordem desconhecida: {kind}")
    return NeighborhoodOrder(kind=kind, orders=orders)


@lru_cache(maxsize=256)
def _order_masks(order: NeighborhoodOrder, dtype: str) -> Tuple[np.ndarray, np.ndarray]:
    """(members, precedes) já convertidos para o dtype do cálculo."""
    return order.members.astype(dtype), order.precedes.astype(dtype)


# =========================
# Kernel geométrico
# =========================
def geometric_prefix_attention(C, order: NeighborhoodOrder) -> Tuple[Tensor, Tensor]:
    """A_ij = C_ij * prod_{k em S_ij} (1 - C_ik); residual_i = prod_{k em order(i)} (1 - C_ik).

    Os produtos saem de somas prefixadas de log1p(-C) na sequência de order(i).
    C: [..., s, s] com valores em [0, 1].
    """
    C = as_tensor(C)
    s = order.s
    if C.ndim < 2 or C.shape[-2:] != (s, s):
        raise ShapeError(f"C {C.shape} incompatível com ordem de tamanho {s}")
    if C.size and (C.data.min() < -C_TOL or C.data.max() > 1 + C_TOL):
        raise DomainError("C fora de [0, 1]")
    dtype = C.dtype
    valid, precedes = _order_masks(order, np.dtype(dtype).str)
    logs = log1p(-clamp(C, 0.0, _log_cap(dtype))) * valid
    flat = reshape(logs, (-1, s, s))
    prefix = reshape(einsum("ijk,nik->nij", precedes, flat), C.shape)
    A = C * exp(prefix) * valid
    residual = exp(logs.sum(axis=-1, keepdims=True))
    return A, residual


def column_scores(E) -> Tensor:
    """C_ij := E_j (repetido ao longo de i)."""
    E = as_tensor(E)
    s = E.shape[-2]
    return swapaxes(E, -1, -2) * np.ones((s, s), dtype=E.dtype)


# =========================
# Contrato Retrieve / Compose
# =========================
@dataclass
class Retrieval:
    X: Tensor
    attention: List[Tensor] = field(default_factory=list)   # uma matriz por cabeça
    extra: Dict[str, Tensor] = field(default_factory=dict)


@dataclass
class StepInfo:
    G: Optional[np.ndarray] = None   # [..., s] (NDR: média do gate vetorial)
    L: Optional[np.ndarray] = None   # [..., s]


class RecModel(Protocol):
    def retrieve(self, state: SeqState) -> Retrieval: ...

    def compose(self, retrieval: Retrieval, state: SeqState) -> Tuple[SeqState, StepInfo]: ...


@dataclass(frozen=True)
class HaltPolicy:
    kind: str = "none"
    tau: float = 0.5

    def __post_init__(self):
        if self.kind not in HALT_KINDS:
            raise ConfigError(f"política de parada desconhecida: {self.kind}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau deve estar em (0, 1), veio {self.tau}")

    @classmethod
    def existential(cls, tau: float = 0.5) -> "HaltPolicy":
        return cls("existential", tau)


@dataclass
class RunConfig:
    t_max: int
    halt: HaltPolicy = field(default_factory=HaltPolicy)
    readout_policy: str = "first"
    trace: bool = False
    example_t_max: Optional[np.ndarray] = None   # limite por exemplo (<= t_max) num batch com pads

    def __post_init__(self):
        if int(self.t_max) < 1:
            raise ConfigError(f"T_max deve ser >= 1 (veio {self.t_max})")
        if self.example_t_max is not None:
            self.example_t_max = np.minimum(np.maximum(np.asarray(self.example_t_max, dtype=np.int64), 1),
                                            int(self.t_max))
        if self.readout_policy not in READOUT_POLICIES:
            raise ConfigError(f"readout desconhecido: {self.readout_policy}")


@dataclass
class StepSummary:
    step: int
    E: np.ndarray
    G: Optional[np.ndarray]
    L: Optional[np.ndarray]
    attention: List[np.ndarray] = field(default_factory=list)


@dataclass
class RecursionResult:
    final: SeqState
    trace: List[StepSummary]
    halt_steps: np.ndarray   # passo de parada por exemplo

    @property
    def halt_step(self) -> int:
        return int(np.max(self.halt_steps))


# =========================
# Parada / driver
# =========================
def halt_mask(state: SeqState, tau: float) -> np.ndarray:
    alive = (state.E.data[..., 0] >= tau) & state.nonpad
    return alive.sum(axis=-1) <= 1


def halt_check(state: SeqState, policy: HaltPolicy) -> bool:
    if policy.kind != "existential":
        raise DomainError("halt_check só se aplica à política existencial")
    return bool(np.all(halt_mask(state, policy.tau)))


def _check_finite(state: SeqState, step: int):
    if not (np.all(np.isfinite(state.H.data)) and np.all(np.isfinite(state.E.data))):
        raise NumericalError(f"NaN/inf detectado no passo {step}", step=step)


def run_recursion(model: RecModel, init: SeqState, cfg: RunConfig) -> RecursionResult:
    state = init
    lead = init.E.shape[:-2]
    halted = np.zeros(lead, dtype=bool)
    halt_steps = np.zeros(lead, dtype=np.int64)
    trace: List[StepSummary] = []
    for t in range(1, int(cfg.t_max) + 1):
        retrieval = model.retrieve(state)
        new, info = model.compose(retrieval, state)
        H, E = new.H, new.E
        if np.any(halted):
            # exemplos que já pararam ficam congelados
            keep = halted.astype(H.dtype)[..., None, None]
            H = H * (1.0 - keep) + state.H * keep
            E = E * (1.0 - keep) + state.E * keep
        new = SeqState(H=H, E=E, step=t, nonpad=init.nonpad)
        _check_finite(new, t)
        if cfg.trace:
            trace.append(StepSummary(
                step=t, E=np.array(E.data[..., 0]),
                G=None if info.G is None else np.array(info.G),
                L=None if info.L is None else np.array(info.L),
                attention=[np.array(a.data) for a in retrieval.attention]))
        state = new
        halt_steps = np.where(halted, halt_steps, t)
        if cfg.halt.kind == "existential":
            halted = halted | halt_mask(state, cfg.halt.tau)
        if cfg.example_t_max is not None:
            halted = halted | (t >= np.broadcast_to(cfg.example_t_max, lead))
        if np.all(halted):
            break
    log.debug("[REC] %d passos, parada máxima %d", state.step, int(np.max(halt_steps)))
    return RecursionResult(final=state, trace=trace, halt_steps=halt_steps)


# =========================
# Readout
# =========================
def last_position_onehot(nonpad: np.ndarray) -> np.ndarray:
    nonpad = np.asarray(nonpad, dtype=bool)
    s = nonpad.shape[-1]
    last = s - 1 - np.argmax(nonpad[..., ::-1], axis=-1)
    return (np.arange(s) == last[..., None]) & nonpad.any(axis=-1, keepdims=True)


def existence_weights(E) -> Tensor:
    """w_i = E_i * prod_{k>i} (1 - E_k): probabilidade de i ser o último sobrevivente.

    É a linha de uma consulta virtual logo após o fim, na ordem espelhada.
    """
    E = as_tensor(E)
    s = E.shape[-2]
    E_ext = concat([E, np.zeros(E.shape[:-2] + (1, 1), dtype=E.dtype)], axis=-2)
    A, _ = geometric_prefix_attention(column_scores(E_ext), build_order("crvnn_left", s + 1))
    return index(A, (Ellipsis, s, slice(0, s)))


def readout(state: SeqState, policy: str) -> Tensor:
    H = state.H
    if policy == "first":
        return index(H, (Ellipsis, 0, slice(None)))
    if policy == "last_nonpad":
        w = last_position_onehot(state.nonpad).astype(H.dtype)[..., None]
        return (H * w).sum(axis=-2)
    if policy == "last_existing_weighted":
        w = reshape(existence_weights(state.E), state.E.shape)
        return (H * w).sum(axis=-2)
    raise ConfigError(f"readout desconhecido: {policy}")


def trace_rows(trace: List[StepSummary], tau: Optional[float] = None) -> List[dict]:
    """Linhas step,position,E,G,L (+E_bin se tau for dado) de um exemplo único."""
    rows = []
    for st in trace:
        e = np.asarray(st.E).reshape(-1)
        g = None if st.G is None else np.asarray(st.G).reshape(-1)
        l = None if st.L is None else np.asarray(st.L).reshape(-1)
        for pos in range(e.shape[0]):
            row = {"step": st.step, "position": pos, "E": float(e[pos]),
                   "G": None if g is None else float(g[pos]),
                   "L": None if l is None else float(l[pos])}
            if tau is not None:
                row["E_bin"] = int(e[pos] >= tau)
            rows.append(row)
    return rows
