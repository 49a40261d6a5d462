# core/harness/optim.py
import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from core.errors import NumericalError, ShapeError
from core.harness.settings import AdamHyper
from core.params import ParamSet

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: ParamSet) -> "AdamState":
        return cls(0, {k: np.zeros_like(a) for k, a in params.arrays().items()},
                   {k: np.zeros_like(a) for k, a in params.arrays().items()})


def _check_grads(params: ParamSet, grads: Mapping[str, np.ndarray]):
    extra = set(grads) - set(params)
    if extra:
        raise ShapeError(f"gradientes sem parâmetro correspondente: {sorted(extra)}")
    for name, g in grads.items():
        if np.shape(g) != params[name].shape:
            raise ShapeError(f"gradiente de {name}: forma {np.shape(g)} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"gradiente não finito em {name}", name=name)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Reescala todos os gradientes juntos quando a norma global passa de max_norm (0 = desligado)."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / (norm + 1e-12)
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


def adam_step(params: ParamSet, grads: Mapping[str, np.ndarray], state: Optional[AdamState],
              hyper: AdamHyper) -> Tuple[ParamSet, AdamState]:
    """Adam com correção de viés. Parâmetro sem gradiente conta como gradiente zero."""
    _check_grads(params, grads)
    state = state or AdamState.zeros(params)
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_arrays: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(p.data)), dtype=p.dtype)
        m = b1 * state.m.get(name, np.zeros_like(p.data)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p.data)) + (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        new_arrays[name] = (p.data - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return params.with_arrays(new_arrays), AdamState(t, new_m, new_v)
