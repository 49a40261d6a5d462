# core/models.py
"""
SequenceClassifier: embedding -> camada recursiva (CRvNN, NDR ou baseline)
-> readout -> cabeça linear d -> n_classes.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from core.data.dataset import LISTOPS_VOCAB, Vocab
from core.errors import ConfigError, ShapeError
from core.layers.baseline import BaselineConfig, BaselineLayer, embed_tokens, init_baseline_params
from core.layers.common import linear
from core.layers.crvnn import CELLS, CRvNNConfig, CRvNNLayer, init_crvnn_params
from core.layers.ndr import NDRConfig, NDRLayer, init_ndr_params
from core.params import ParamSet, make_rng, normal
from core.recschema import (READOUT_POLICIES, HaltPolicy, RecursionResult, RunConfig,
                            initial_state, readout, run_recursion)
from core.tensor import Tensor, cross_entropy, reshape

log = logging.getLogger(__name__)

MODEL_KINDS = ("crvnn", "ndr", "baseline")
HEAD_INIT_STD = 0.01

DEFAULT_READOUT = {
    "crvnn": "last_existing_weighted",   # o sobrevivente anda para a direita
    "ndr": "first",
    "baseline": "first",
}


@dataclass
class ModelConfig:
    model: str = "crvnn"
    vocab_size: int = 16
    n_classes: int = 10
    d: int = 64
    n_heads: int = 2
    ffn_hidden: int = 256
    n_layers: int = 8
    share_layers: bool = True
    cell: str = "grc"
    df_hidden: int = 0          # 0 = d
    t_max: int = 0              # 0 = automático (s no CRvNN, n_layers nos demais)
    tau: float = 0.5
    readout: str = "auto"
    pad_id: int = 0
    tokens: Optional[List[str]] = None   # vocabulário de shard externo; None = ListOps

    def __post_init__(self):
        if self.tokens is not None:
            self.tokens = list(self.tokens)
            self.vocab_size = len(self.tokens)
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"modelo desconhecido: {self.model}")
        if self.cell not in CELLS:
            raise ConfigError(f"célula desconhecida: {self.cell}")
        if self.readout != "auto" and self.readout not in READOUT_POLICIES:
            raise ConfigError(f"readout desconhecido: {self.readout}")
        if self.t_max < 0:
            raise ConfigError("t_max deve ser >= 0")
        if self.vocab_size < 1 or self.n_classes < 2 or self.d < 1:
            raise ConfigError("vocab_size, n_classes e d precisam ser positivos")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau deve estar em (0, 1), veio {self.tau}")
        if self.model == "baseline" and not self.share_layers and self.t_max not in (0, self.n_layers):
            raise ConfigError("baseline sem compartilhamento roda exatamente n_layers passos")

    @property
    def readout_policy(self) -> str:
        return DEFAULT_READOUT[self.model] if self.readout == "auto" else self.readout

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ModelConfig":
        known = {k: raw[k] for k in cls.__dataclass_fields__ if k in raw}
        return cls(**known)


@dataclass(frozen=True)
class Overrides:
    """Ajustes só de inferência: nunca tocam nos parâmetros."""
    eval_layers: Optional[int] = None
    t_max: Optional[int] = None
    tau: Optional[float] = None

    def is_empty(self) -> bool:
        return self.eval_layers is None and self.t_max is None and self.tau is None


@dataclass
class Forward:
    logits: Tensor
    result: RecursionResult
    readout: Tensor = field(repr=False, default=None)


class SequenceClassifier:
    def __init__(self, cfg: ModelConfig, params: ParamSet):
        self.cfg = cfg
        self.params = params

    # ---------- construção ----------
    @classmethod
    def build(cls, cfg: ModelConfig, seed: Optional[int] = 0, dtype="float64") -> "SequenceClassifier":
        rng = make_rng(seed)
        ps = ParamSet(dtype)
        ps.add("embed", normal(rng, (cfg.vocab_size, cfg.d), 1.0))
        if cfg.model == "crvnn":
            init_crvnn_params(ps, rng, cls._crvnn_cfg(cfg))
        elif cfg.model == "ndr":
            init_ndr_params(ps, rng, cls._ndr_cfg(cfg))
        else:
            init_baseline_params(ps, rng, cls._baseline_cfg(cfg))
        # cabeça quase nula: perda inicial ~ ln(n_classes)
        ps.add("head.W", normal(rng, (cfg.d, cfg.n_classes), HEAD_INIT_STD))
        ps.add("head.b", np.zeros(cfg.n_classes))
        log.info("[MODEL] %s com %d parâmetros escalares", cfg.model, ps.n_scalars())
        return cls(cfg, ps)

    def with_params(self, params: ParamSet) -> "SequenceClassifier":
        return SequenceClassifier(self.cfg, params)

    @property
    def vocab(self) -> Vocab:
        return LISTOPS_VOCAB if self.cfg.tokens is None else Vocab(self.cfg.tokens)

    @staticmethod
    def _crvnn_cfg(cfg: ModelConfig) -> CRvNNConfig:
        return CRvNNConfig(d=cfg.d, cell=cfg.cell, df_hidden=cfg.df_hidden or None)

    @staticmethod
    def _ndr_cfg(cfg: ModelConfig, eval_layers: Optional[int] = None) -> NDRConfig:
        return NDRConfig(d=cfg.d, n_heads=cfg.n_heads, ffn_hidden=cfg.ffn_hidden, n_layers=cfg.n_layers,
                         eval_layers=eval_layers)

    @staticmethod
    def _baseline_cfg(cfg: ModelConfig, eval_layers: Optional[int] = None) -> BaselineConfig:
        return BaselineConfig(d=cfg.d, n_heads=cfg.n_heads, ffn_hidden=cfg.ffn_hidden, n_layers=cfg.n_layers,
                              share_layers=cfg.share_layers, eval_layers=eval_layers)

    # ---------- recursão ----------
    def check_overrides(self, overrides: Optional[Overrides]):
        if overrides is None or overrides.is_empty():
            return
        cfg = self.cfg
        if cfg.model == "baseline" and not cfg.share_layers and (
                overrides.eval_layers is not None or overrides.t_max is not None):
            raise ConfigError("override de profundidade em baseline sem compartilhamento de camadas")
        if overrides.tau is not None and cfg.model != "crvnn":
            raise ConfigError("tau só se aplica à parada dinâmica do CRvNN")
        for name in ("eval_layers", "t_max"):
            v = getattr(overrides, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} deve ser >= 1")
        if overrides.tau is not None and not 0.0 < overrides.tau < 1.0:
            raise ConfigError(f"tau deve estar em (0, 1), veio {overrides.tau}")

    def layer(self, overrides: Optional[Overrides] = None):
        cfg = self.cfg
        if cfg.model == "crvnn":
            return CRvNNLayer(self.params, self._crvnn_cfg(cfg))
        ev = None if overrides is None else overrides.eval_layers
        if cfg.model == "ndr":
            return NDRLayer(self.params, self._ndr_cfg(cfg, ev))
        return BaselineLayer(self.params, self._baseline_cfg(cfg, ev))

    def run_config(self, s: int, overrides: Optional[Overrides] = None, trace: bool = False,
                   lengths: Optional[np.ndarray] = None) -> RunConfig:
        """T_max automático do CRvNN = tamanho real de cada exemplo (s quando não há pads)."""
        self.check_overrides(overrides)
        cfg = self.cfg
        ov = overrides or Overrides()
        per_example = None
        if cfg.model == "crvnn":
            t_max = ov.t_max or ov.eval_layers or cfg.t_max or s
            if not (ov.t_max or ov.eval_layers or cfg.t_max) and lengths is not None:
                per_example = lengths
            tau = cfg.tau if ov.tau is None else ov.tau
            halt = HaltPolicy.existential(tau)
        else:
            t_max = ov.t_max or ov.eval_layers or cfg.t_max or cfg.n_layers
            halt = HaltPolicy()
        return RunConfig(t_max=t_max, halt=halt, readout_policy=cfg.readout_policy, trace=trace,
                         example_t_max=per_example)

    def encode(self, tokens):
        ids = np.asarray(tokens, dtype=np.int64)
        if ids.ndim == 0 or ids.shape[-1] == 0:
            raise ShapeError("sequência de tamanho 0")
        H = embed_tokens(ids, self.params, "embed", positions=self.cfg.model == "baseline")
        return initial_state(H, ids != self.cfg.pad_id)

    def forward(self, tokens, overrides: Optional[Overrides] = None, trace: bool = False) -> Forward:
        init = self.encode(tokens)
        run_cfg = self.run_config(init.s, overrides, trace, lengths=init.nonpad.sum(axis=-1))
        result = run_recursion(self.layer(overrides), init, run_cfg)
        r = readout(result.final, run_cfg.readout_policy)
        if r.ndim == 1:
            logits = reshape(linear(reshape(r, (1, r.shape[0])), self.params, "head"), (self.cfg.n_classes,))
        else:
            logits = linear(r, self.params, "head")
        return Forward(logits=logits, result=result, readout=r)

    def loss(self, tokens, labels, overrides: Optional[Overrides] = None):
        fwd = self.forward(tokens, overrides)
        return cross_entropy(fwd.logits, labels), fwd
