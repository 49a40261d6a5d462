# core/harness/checkpoint.py
"""
Arquivo de checkpoint:

    RECSCHEMA-CKPT 1
    meta {"...": ...}
    tensors <n>
    <nome> <forma 3x4 ou -> <dtype>      (n linhas)
    <bytes little-endian de cada tensor, na ordem do cabeçalho>

Momentos do Adam vão como tensores "adam.m.<nome>" / "adam.v.<nome>".
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Optional

import numpy as np

from core.errors import CheckpointError
from core.harness.optim import AdamState
from core.models import ModelConfig, SequenceClassifier

log = logging.getLogger(__name__)

MAGIC = "RECSCHEMA-CKPT 1"
_WIRE = {"float32": "<f4", "float64": "<f8"}


def _shape_str(shape) -> str:
    return "x".join(str(n) for n in shape) if len(shape) else "-"


def _parse_shape(text: str):
    if text == "-":
        return ()
    try:
        return tuple(int(n) for n in text.split("x"))
    except ValueError:
        raise CheckpointError(f"forma inválida no cabeçalho: {text!r}")


def write_tensor_blob(f: BinaryIO, tensors: Mapping[str, np.ndarray]):
    f.write(f"tensors {len(tensors)}\n".encode())
    for name, arr in tensors.items():
        if " " in name or "\n" in name:
            raise CheckpointError(f"nome de tensor inválido: {name!r}")
        dt = np.asarray(arr).dtype.name
        if dt not in _WIRE:
            raise CheckpointError(f"{name}: dtype {dt} não suportado")
        f.write(f"{name} {_shape_str(np.shape(arr))} {dt}\n".encode())
    for name, arr in tensors.items():
        a = np.asarray(arr)
        f.write(np.ascontiguousarray(a, dtype=_WIRE[a.dtype.name]).tobytes())


def _readline(f: BinaryIO) -> str:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise CheckpointError("checkpoint truncado no cabeçalho")
    return line[:-1].decode()


def read_tensor_blob(f: BinaryIO) -> Dict[str, np.ndarray]:
    head = _readline(f).split()
    if len(head) != 2 or head[0] != "tensors":
        raise CheckpointError("esperado 'tensors <n>'")
    n = int(head[1])
    specs = []
    for _ in range(n):
        parts = _readline(f).split()
        if len(parts) != 3 or parts[2] not in _WIRE:
            raise CheckpointError(f"linha de tensor inválida: {' '.join(parts)!r}")
        specs.append((parts[0], _parse_shape(parts[1]), parts[2]))
    out: Dict[str, np.ndarray] = {}
    for name, shape, dt in specs:
        wire = np.dtype(_WIRE[dt])
        count = int(np.prod(shape, dtype=np.int64))
        raw = f.read(count * wire.itemsize)
        if len(raw) != count * wire.itemsize:
            raise CheckpointError(f"checkpoint truncado em {name}")
        out[name] = np.frombuffer(raw, dtype=wire).astype(dt).reshape(shape)
    return out


@dataclass
class Checkpoint:
    meta: dict
    params: Dict[str, np.ndarray]
    adam: Optional[AdamState] = None

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta["model"])

    @property
    def dtype(self) -> str:
        return self.meta.get("dtype", "float64")

    def to_model(self) -> SequenceClassifier:
        # a estrutura vem de build; os valores vêm do arquivo
        skeleton = SequenceClassifier.build(self.model_config, seed=0, dtype=self.dtype)
        unknown = set(self.params) - set(skeleton.params)
        if unknown:
            raise CheckpointError(f"parâmetros que o modelo não conhece: {sorted(unknown)}")
        return skeleton.with_params(skeleton.params.with_arrays(self.params, strict=True))


def save_checkpoint(path, model: SequenceClassifier, meta: Optional[dict] = None,
                    adam: Optional[AdamState] = None):
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    full_meta = dict(meta or {})
    full_meta["model"] = model.cfg.to_dict()
    full_meta["dtype"] = model.params.dtype.name
    full_meta["adam_step"] = 0 if adam is None else adam.step
    tensors: Dict[str, np.ndarray] = dict(model.params.arrays())
    if adam is not None:
        for k, a in adam.m.items():
            tensors[f"adam.m.{k}"] = a
        for k, a in adam.v.items():
            tensors[f"adam.v.{k}"] = a
    tmp = p.with_suffix(p.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(f"{MAGIC}\n".encode())
        f.write(f"meta {json.dumps(full_meta, sort_keys=True)}\n".encode())
        write_tensor_blob(f, tensors)
    tmp.replace(p)
    log.info("[CKPT] salvo %s (%d tensores)", p, len(tensors))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint não encontrado: {p}")
    with open(p, "rb") as f:
        if _readline(f) != MAGIC:
            raise CheckpointError(f"{p}: não é um checkpoint ({MAGIC})")
        meta_line = _readline(f)
        if not meta_line.startswith("meta "):
            raise CheckpointError(f"{p}: linha meta ausente")
        try:
            meta = json.loads(meta_line[5:])
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{p}: meta inválido ({e})")
        tensors = read_tensor_blob(f)
        if f.read(1):
            raise CheckpointError(f"{p}: bytes sobrando depois dos tensores")
    params, m, v = {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("adam.m."):
            m[name[7:]] = arr
        elif name.startswith("adam.v."):
            v[name[7:]] = arr
        else:
            params[name] = arr
    adam = AdamState(int(meta.get("adam_step", 0)), m, v) if m else None
    return Checkpoint(meta=meta, params=params, adam=adam)
