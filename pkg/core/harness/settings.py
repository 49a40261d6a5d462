# core/harness/settings.py
"""
Configuração de experimento: arquivo KEY=VALUE (sintaxe dotenv, comentários com #).

Chaves (maiúsculas ou minúsculas):
  MODEL          crvnn | ndr | baseline
  D_MODEL        largura d (64)
  N_HEADS        cabeças de atenção, NDR/baseline (2)
  FFN_HIDDEN     largura interna dos FFN (256)
  N_LAYERS       passos de treino do NDR/baseline (8)
  SHARE_LAYERS   baseline: 1 = Universal Transformer, 0 = pilha comum (1)
  CELL           grc | lstm, só CRvNN (grc)
  DF_HIDDEN      largura interna do DF do CRvNN, 0 = d (0)
  T_MAX          limite de passos, 0 = automático (0)
  TAU            limiar da parada existencial (0.5)
  READOUT        auto | first | last_nonpad | last_existing_weighted (auto)
  N_CLASSES      classes da cabeça (10)
  TRAIN_SHARD    JSONL de treino (obrigatório)
  VAL_SHARD      JSONL de validação (obrigatório)
  TEST_SHARDS    lista nome=caminho separada por vírgula (vazio)
  LR, BETA1, BETA2, ADAM_EPS   Adam (1e-3, 0.9, 0.999, 1e-8)
  GRAD_CLIP      clip pela norma global, 0 = desligado (1.0)
  BATCH_SIZE     (64)
  MAX_STEPS      (20000)
  EVAL_INTERVAL  (500)
  EVAL_MAX_EXAMPLES  limite por split na avaliação periódica, 0 = tudo (0)
  SEED           (0)
  DTYPE          float32 | float64 (RECSCHEMA_DTYPE)
  OUT_DIR        pasta da rodada (RECSCHEMA_RUNS_DIR/<nome do arquivo>)
  RECORD_WALL    1 grava segundos de relógio; 0 grava 0.0 (1)
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values

import config
from core.errors import ConfigError
from core.models import ModelConfig
from core.tensor import DTYPES

log = logging.getLogger(__name__)


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("lr e eps do Adam devem ser positivos")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas do Adam devem estar em [0, 1)")


@dataclass
class ExperimentConfig:
    model: ModelConfig
    train_shard: str
    val_shard: str
    test_shards: Dict[str, str] = field(default_factory=dict)
    adam: AdamHyper = field(default_factory=AdamHyper)
    grad_clip: float = 1.0
    batch_size: int = 64
    max_steps: int = 20000
    eval_interval: int = 500
    eval_max_examples: int = 0
    seed: int = 0
    dtype: str = "float32"
    out_dir: str = "runs/default"
    record_wall: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("BATCH_SIZE deve ser >= 1")
        if self.max_steps < 0:
            raise ConfigError("MAX_STEPS deve ser >= 0")
        if self.eval_interval < 1:
            raise ConfigError("EVAL_INTERVAL deve ser >= 1")
        if self.grad_clip < 0:
            raise ConfigError("GRAD_CLIP deve ser >= 0")
        if self.dtype not in DTYPES:
            raise ConfigError(f"DTYPE não suportado: {self.dtype}")

    def check_shards(self):
        paths = {"TRAIN_SHARD": self.train_shard, "VAL_SHARD": self.val_shard}
        paths.update({f"TEST_SHARDS[{k}]": v for k, v in self.test_shards.items()})
        for key, path in paths.items():
            if not Path(path).exists():
                raise ConfigError(f"{key}: arquivo não encontrado: {path}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# =========================
# Leitura do arquivo
# =========================
def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "sim", "on"):
        return True
    if s in ("0", "false", "no", "nao", "não", "off"):
        return False
    raise ValueError(v)


def _test_shards(v: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for part in filter(None, (p.strip() for p in v.split(","))):
        name, sep, path = part.partition("=")
        if not sep or not name.strip() or not path.strip():
            raise ValueError(part)
        out[name.strip()] = path.strip()
    return out


# chave -> (destino, conversor); destino "model.x" vai para ModelConfig
_KEYS: Dict[str, tuple] = {
    "MODEL": ("model.model", str),
    "D_MODEL": ("model.d", int),
    "N_HEADS": ("model.n_heads", int),
    "FFN_HIDDEN": ("model.ffn_hidden", int),
    "N_LAYERS": ("model.n_layers", int),
    "SHARE_LAYERS": ("model.share_layers", _bool),
    "CELL": ("model.cell", str),
    "DF_HIDDEN": ("model.df_hidden", int),
    "T_MAX": ("model.t_max", int),
    "TAU": ("model.tau", float),
    "READOUT": ("model.readout", str),
    "N_CLASSES": ("model.n_classes", int),
    "TRAIN_SHARD": ("train_shard", str),
    "VAL_SHARD": ("val_shard", str),
    "TEST_SHARDS": ("test_shards", _test_shards),
    "LR": ("adam.lr", float),
    "BETA1": ("adam.beta1", float),
    "BETA2": ("adam.beta2", float),
    "ADAM_EPS": ("adam.eps", float),
    "GRAD_CLIP": ("grad_clip", float),
    "BATCH_SIZE": ("batch_size", int),
    "MAX_STEPS": ("max_steps", int),
    "EVAL_INTERVAL": ("eval_interval", int),
    "EVAL_MAX_EXAMPLES": ("eval_max_examples", int),
    "SEED": ("seed", int),
    "DTYPE": ("dtype", str),
    "OUT_DIR": ("out_dir", str),
    "RECORD_WALL": ("record_wall", _bool),
}


def parse_values(values: Dict[str, Optional[str]], default_out: str = "runs/default") -> ExperimentConfig:
    groups: Dict[str, Dict[str, Any]] = {"model": {}, "adam": {}, "": {}}
    for raw_key, raw_val in values.items():
        key = raw_key.strip().upper()
        if key not in _KEYS:
            raise ConfigError(f"chave desconhecida: {raw_key}")
        if raw_val is None:
            raise ConfigError(f"chave sem valor: {raw_key}")
        dest, conv = _KEYS[key]
        try:
            value = conv(raw_val)
        except ValueError:
            raise ConfigError(f"valor inválido para {key}: {raw_val!r}")
        group, _, name = dest.rpartition(".")
        groups[group][name] = value
    top = groups[""]
    for required in ("train_shard", "val_shard"):
        if required not in top:
            raise ConfigError(f"chave obrigatória ausente: {required.upper()}")
    top.setdefault("dtype", config.RECSCHEMA_DTYPE)
    top.setdefault("out_dir", default_out)
    try:
        return ExperimentConfig(model=ModelConfig(**groups["model"]), adam=AdamHyper(**groups["adam"]), **top)
    except TypeError as e:
        raise ConfigError(f"configuração inválida: {e}")


def load_experiment_config(path, check_shards: bool = True) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"arquivo de configuração não encontrado: {p}")
    cfg = parse_values(dotenv_values(p), default_out=str(Path(config.RECSCHEMA_RUNS_DIR) / p.stem))
    if check_shards:
        cfg.check_shards()
    log.info("[CONFIG] %s: modelo %s, seed %d, saída %s", p, cfg.model.model, cfg.seed, cfg.out_dir)
    return cfg
