# core/harness/trainer.py
"""
Loop de treino (forward recursivo, backward, clip, Adam), avaliação com
overrides de inferência, mediana entre rodadas e dumps de trace.
"""
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from core.data.dataset import LISTOPS_VOCAB, Vocab, batch_stream, iterate_batches, load_shard, resolve_vocab
from core.data.listops import split_expression
from core.errors import ConfigError, DomainError, RecSchemaError
from core.harness.checkpoint import load_checkpoint, save_checkpoint
from core.harness.optim import AdamState, adam_step, clip_by_global_norm
from core.harness.settings import ExperimentConfig
from core.models import Overrides, SequenceClassifier
from core.recschema import trace_rows
from core.services.reports import (accuracy_by, halt_histogram, summarize_runs, write_metrics_csv,
                                   write_trace_csv)
from core.tensor import backward, cross_entropy

log = logging.getLogger(__name__)

EVAL_BATCH = 128


@dataclass
class TrainResult:
    model: SequenceClassifier
    final_ckpt: Path
    best_ckpt: Path
    metrics_path: Path
    rows: List[dict]
    best_accuracy: float


# =========================
# Avaliação
# =========================
def evaluate_examples(model: SequenceClassifier, records: Sequence[dict], overrides: Optional[Overrides] = None,
                      batch_size: int = EVAL_BATCH, vocab: Optional[Vocab] = None) -> dict:
    """Acurácia, perda, distribuição de parada e acurácia por profundidade sobre um conjunto."""
    if not records:
        raise ConfigError("conjunto de avaliação vazio")
    loss_sum = 0.0
    correct: List[bool] = []
    depths: List[int] = []
    halts: List[int] = []
    for batch in iterate_batches(records, batch_size, rng=None, vocab=vocab or model.vocab):
        fwd = model.forward(batch.ids, overrides)
        loss_sum += float(cross_entropy(fwd.logits, batch.labels).item()) * batch.size
        pred = np.argmax(fwd.logits.data, axis=-1)
        correct.extend((pred == batch.labels).tolist())
        depths.extend(batch.depths.tolist())
        halts.extend(np.broadcast_to(fwd.result.halt_steps, (batch.size,)).tolist())
    n = len(correct)
    report = {
        "n": n,
        "accuracy": float(np.mean(correct)),
        "loss": loss_sum / n,
        "median_halt": None,
        "halt_histogram": None,
        "accuracy_by_depth": accuracy_by(correct, depths),
    }
    if model.cfg.model == "crvnn":
        report["median_halt"] = float(np.median(halts))
        report["halt_histogram"] = halt_histogram(halts)
    return report


def evaluate(ckpt_path, shards: Dict[str, str], overrides: Optional[Overrides] = None,
             batch_size: int = EVAL_BATCH, limit: Optional[int] = None) -> dict:
    """Avalia um checkpoint em um ou mais shards; o checksum dos parâmetros vai junto no relatório."""
    ckpt = load_checkpoint(ckpt_path)
    model = ckpt.to_model()
    model.check_overrides(overrides)
    before = model.params.checksum()
    out = {}
    for name, path in shards.items():
        rep = evaluate_examples(model, load_shard(path, limit), overrides, batch_size)
        log.info("[EVAL] %s em %s: acc=%.4f loss=%.4f", ckpt_path, name, rep["accuracy"], rep["loss"])
        out[name] = rep
    if model.params.checksum() != before:
        raise RecSchemaError("avaliação alterou os parâmetros")
    return {"checkpoint": str(ckpt_path), "param_checksum": before, "splits": out}


def evaluate_runs(ckpt_paths: Sequence[str], shards: Dict[str, str], overrides: Optional[Overrides] = None,
                  batch_size: int = EVAL_BATCH, limit: Optional[int] = None) -> dict:
    """Várias rodadas (seeds) do mesmo experimento + mediana por split."""
    runs = [evaluate(p, shards, overrides, batch_size, limit) for p in ckpt_paths]
    summary = summarize_runs([r["splits"] for r in runs], [r["checkpoint"] for r in runs])
    med = summary[summary["run"] == "median"]
    medians = {row["split"]: {"accuracy": float(row["accuracy"]), "loss": float(row["loss"])}
               for _, row in med.iterrows()}
    return {"runs": runs, "median": medians, "summary": summary}


# =========================
# Treino
# =========================
def _eval_rows(model: SequenceClassifier, cfg: ExperimentConfig, sets: Dict[str, List[dict]], step: int,
               wall: float) -> List[dict]:
    rows = []
    for name, records in sets.items():
        rep = evaluate_examples(model, records, batch_size=max(cfg.batch_size, EVAL_BATCH))
        rows.append({"step": step, "split": name, "loss": rep["loss"], "accuracy": rep["accuracy"],
                     "median_halt": rep["median_halt"], "wall_s": wall})
        log.info("[EVAL] passo %d %s: acc=%.4f loss=%.4f", step, name, rep["accuracy"], rep["loss"])
    return rows


def train(cfg: ExperimentConfig) -> TrainResult:
    cfg.check_shards()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    init_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    init_seed = int(init_seq.generate_state(1)[0])
    data_rng = np.random.default_rng(data_seq)

    limit = cfg.eval_max_examples or None
    train_records = load_shard(cfg.train_shard)
    eval_sets = {"val": load_shard(cfg.val_shard, limit)}
    for name, path in cfg.test_shards.items():
        if name in eval_sets or name == "train":
            raise ConfigError(f"nome de split reservado ou repetido: {name}")
        eval_sets[name] = load_shard(path, limit)

    vocab = resolve_vocab([train_records, *eval_sets.values()])
    if vocab is not LISTOPS_VOCAB:
        cfg = replace(cfg, model=replace(cfg.model, tokens=vocab.itos))
        log.info("[TRAIN] shards fora do ListOps: vocabulário próprio com %d tokens", len(vocab))
    model = SequenceClassifier.build(cfg.model, seed=init_seed, dtype=cfg.dtype)
    adam = AdamState.zeros(model.params)
    meta = {"experiment": cfg.to_dict(), "step": 0}
    metrics_path = out / "metrics.csv"
    best_path = out / "best.ckpt"
    final_path = out / "final.ckpt"

    t0 = time.perf_counter()

    def wall() -> float:
        return round(time.perf_counter() - t0, 3) if cfg.record_wall else 0.0

    rows = _eval_rows(model, cfg, eval_sets, 0, wall())
    best = rows[0]["accuracy"]
    save_checkpoint(best_path, model, {**meta, "val_accuracy": best}, adam)
    write_metrics_csv(metrics_path, rows)

    stream = batch_stream(train_records, cfg.batch_size, data_rng, model.vocab)
    run_loss, run_correct, run_n = 0.0, 0, 0
    for step in range(1, cfg.max_steps + 1):
        batch = next(stream)
        try:
            loss, fwd = model.loss(batch.ids, batch.labels)
            grads = backward(loss)
            grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
            params, adam = adam_step(model.params, grads, adam, cfg.adam)
        except RecSchemaError as e:
            log.error("[TRAIN] falha no passo %d: %s", step, e)
            raise
        model = model.with_params(params)
        run_loss += float(loss.item()) * batch.size
        run_correct += int(np.sum(np.argmax(fwd.logits.data, axis=-1) == batch.labels))
        run_n += batch.size

        if step % cfg.eval_interval == 0 or step == cfg.max_steps:
            w = wall()
            rows.append({"step": step, "split": "train", "loss": run_loss / run_n,
                         "accuracy": run_correct / run_n, "median_halt": None, "wall_s": w})
            log.info("[TRAIN] passo %d: loss=%.4f acc=%.4f", step, run_loss / run_n, run_correct / run_n)
            run_loss, run_correct, run_n = 0.0, 0, 0
            new_rows = _eval_rows(model, cfg, eval_sets, step, w)
            rows.extend(new_rows)
            write_metrics_csv(metrics_path, rows)
            if new_rows[0]["accuracy"] > best:
                best = new_rows[0]["accuracy"]
                save_checkpoint(best_path, model, {**meta, "step": step, "val_accuracy": best}, adam)

    save_checkpoint(final_path, model, {**meta, "step": cfg.max_steps}, adam)
    log.info("[TRAIN] fim: melhor acc de validação %.4f, métricas em %s", best, metrics_path)
    return TrainResult(model=model, final_ckpt=final_path, best_ckpt=best_path, metrics_path=metrics_path,
                       rows=rows, best_accuracy=best)


# =========================
# Trace
# =========================
def _example_tokens(example) -> List[str]:
    if isinstance(example, str):
        text = example.strip()
        if text.startswith("{"):
            example = json.loads(text)
        else:
            return split_expression(text)
    if isinstance(example, dict):
        if "tokens" not in example:
            raise DomainError("exemplo sem 'tokens'")
        return list(example["tokens"])
    return list(example)


def trace_model(model: SequenceClassifier, example, overrides: Optional[Overrides] = None,
                vocab: Optional[Vocab] = None) -> dict:
    """Trajetória E/G/L passo a passo de um exemplo, mais as matrizes de atenção."""
    tokens = _example_tokens(example)
    ids = np.asarray((vocab or model.vocab).encode(tokens), dtype=np.int64)
    fwd = model.forward(ids, overrides, trace=True)
    tau = model.run_config(len(ids), overrides).halt.tau if model.cfg.model == "crvnn" else None
    rows = trace_rows(fwd.result.trace, tau)
    probs = np.exp(fwd.logits.data - fwd.logits.data.max())
    probs = probs / probs.sum()
    return {
        "tokens": tokens,
        "prediction": int(np.argmax(fwd.logits.data)),
        "probs": [float(p) for p in probs],
        "halt_step": fwd.result.halt_step,
        "rows": rows,
        "attention": [[a.tolist() for a in st.attention] for st in fwd.result.trace],
    }


def trace(ckpt_path, example, out_prefix, overrides: Optional[Overrides] = None) -> dict:
    """Grava <prefixo>.csv (step,position,E,G,L[,E_bin]) e <prefixo>.json (atenção por passo)."""
    model = load_checkpoint(ckpt_path).to_model()
    result = trace_model(model, example, overrides)
    prefix = str(out_prefix)
    write_trace_csv(Path(prefix + ".csv"), result["rows"])
    dump = {k: result[k] for k in ("tokens", "prediction", "probs", "halt_step", "attention")}
    Path(prefix + ".json").write_text(json.dumps(dump), encoding="utf-8")
    log.info("[TRACE] %d passos, previsão %d -> %s.{csv,json}", result["halt_step"], result["prediction"], prefix)
    return result
