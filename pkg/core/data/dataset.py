# core/data/dataset.py
"""
Vocabulário, leitura de shards JSONL e batches determinísticos.

Qualquer shard com {"tokens": [...], "label": int} serve; depth/length/max_args
são opcionais (usados só nos relatórios).
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from core.data.listops import CLOSE, DIGITS, OPEN_TOKENS
from core.errors import ConfigError, DomainError

log = logging.getLogger(__name__)

PAD = "<pad>"
POOL_BATCHES = 50


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != PAD:
            raise ConfigError(f"o vocabulário precisa começar com {PAD}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulário com tokens repetidos")
        self.itos: List[str] = list(tokens)
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}

    @property
    def pad_id(self) -> int:
        return 0

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        try:
            return [self.stoi[t] for t in tokens]
        except KeyError as e:
            raise DomainError(f"token fora do vocabulário: {e.args[0]!r}")

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.itos[i] for i in ids if i != self.pad_id]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "Vocab":
        """Vocabulário de um shard externo (ordem de primeira aparição)."""
        seen: Dict[str, None] = {}
        for rec in records:
            for t in rec["tokens"]:
                seen.setdefault(t, None)
        return cls([PAD] + [t for t in seen if t != PAD])


LISTOPS_VOCAB = Vocab([PAD, *OPEN_TOKENS, CLOSE, *DIGITS])


def resolve_vocab(shards: Sequence[Sequence[dict]]) -> Vocab:
    """LISTOPS_VOCAB se todos os tokens couberem nele; senão um vocabulário montado dos próprios shards."""
    if all(t in LISTOPS_VOCAB.stoi for recs in shards for rec in recs for t in rec["tokens"]):
        return LISTOPS_VOCAB
    return Vocab.from_records([rec for recs in shards for rec in recs])


def load_shard(path, limit: Optional[int] = None) -> List[dict]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"shard não encontrado: {p}")
    records = []
    with open(p, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{p}:{lineno}: JSON inválido ({e})")
            if not isinstance(rec, dict) or "tokens" not in rec or "label" not in rec:
                raise ConfigError(f"{p}:{lineno}: registro sem tokens/label")
            if not rec["tokens"]:
                raise ConfigError(f"{p}:{lineno}: sequência vazia")
            records.append(rec)
            if limit is not None and len(records) >= limit:
                break
    log.debug("[DATA] %s: %d exemplos", p, len(records))
    return records


@dataclass
class Batch:
    ids: np.ndarray      # [B, s] int64, pad = 0
    labels: np.ndarray   # [B]
    depths: np.ndarray   # [B] (-1 quando o shard não informa)

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])


def encode_batch(records: Sequence[dict], vocab: Vocab = LISTOPS_VOCAB) -> Batch:
    if not records:
        raise DomainError("batch vazio")
    seqs = [vocab.encode(r["tokens"]) for r in records]
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), vocab.pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    labels = np.array([int(r["label"]) for r in records], dtype=np.int64)
    depths = np.array([int(r.get("depth", -1)) for r in records], dtype=np.int64)
    return Batch(ids=ids, labels=labels, depths=depths)


def batch_indices(lengths: Sequence[int], batch_size: int, rng: Optional[np.random.Generator] = None,
                  bucket: bool = True) -> List[np.ndarray]:
    """Embaralha, ordena por tamanho dentro de blocos de POOL_BATCHES batches e embaralha os batches."""
    if batch_size < 1:
        raise ConfigError("batch_size deve ser >= 1")
    n = len(lengths)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    lengths = np.asarray(lengths)
    batches: List[np.ndarray] = []
    pool = batch_size * POOL_BATCHES
    for start in range(0, n, pool):
        chunk = order[start:start + pool]
        if bucket:
            chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def iterate_batches(records: Sequence[dict], batch_size: int, rng: Optional[np.random.Generator] = None,
                    vocab: Vocab = LISTOPS_VOCAB, bucket: bool = True) -> Iterator[Batch]:
    lengths = [len(r["tokens"]) for r in records]
    for idx in batch_indices(lengths, batch_size, rng, bucket):
        yield encode_batch([records[i] for i in idx], vocab)


def batch_stream(records: Sequence[dict], batch_size: int, rng: np.random.Generator,
                 vocab: Vocab = LISTOPS_VOCAB) -> Iterator[Batch]:
    """Épocas sem fim, cada uma com um embaralhamento novo do mesmo gerador."""
    if not records:
        raise ConfigError("shard de treino vazio")
    while True:
        yield from iterate_batches(records, batch_size, rng, vocab)
