# core/services/reports.py
# exportações em CSV (pandas): métricas de treino, trace e resumo de rodadas
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

METRIC_COLUMNS = ["step", "split", "loss", "accuracy", "median_halt", "wall_s"]
TRACE_COLUMNS = ["step", "position", "E", "G", "L"]


def _ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def write_metrics_csv(path, rows: List[dict]):
    df = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    _ensure_parent(path)
    df.to_csv(path, index=False)


def read_metrics_csv(path) -> pd.DataFrame:
    return pd.read_csv(path)


def write_trace_csv(path, rows: List[dict]):
    cols = TRACE_COLUMNS + (["E_bin"] if rows and "E_bin" in rows[0] else [])
    df = pd.DataFrame(rows, columns=cols)
    _ensure_parent(path)
    df.to_csv(path, index=False)


def accuracy_by(correct: Sequence[bool], keys: Sequence[int]) -> Dict[str, float]:
    """Acurácia agrupada (ex.: por profundidade)."""
    if len(correct) == 0:
        return {}
    df = pd.DataFrame({"key": list(keys), "ok": np.asarray(correct, dtype=float)})
    return {str(k): float(v) for k, v in df.groupby("key")["ok"].mean().sort_index().items()}


def halt_histogram(halt_steps: Sequence[int]) -> Dict[str, int]:
    s = pd.Series(list(halt_steps), dtype="int64")
    return {str(k): int(v) for k, v in s.value_counts().sort_index().items()}


def summarize_runs(reports: List[dict], labels: Optional[List[str]] = None) -> pd.DataFrame:
    """Uma linha por rodada e por split, mais a mediana entre rodadas (convenção mediana de 3)."""
    labels = labels or [f"run{i}" for i in range(len(reports))]
    rows = []
    for label, rep in zip(labels, reports):
        for split, r in rep.items():
            rows.append({"run": label, "split": split, "accuracy": r["accuracy"], "loss": r["loss"],
                         "median_halt": r.get("median_halt")})
    df = pd.DataFrame(rows, columns=["run", "split", "accuracy", "loss", "median_halt"])
    if df.empty:
        return df
    med = df.groupby("split", sort=False)[["accuracy", "loss", "median_halt"]].median().reset_index()
    med.insert(0, "run", "median")
    return pd.concat([df, med], ignore_index=True)


def pivot_accuracy(summary: pd.DataFrame) -> pd.DataFrame:
    """Tabela run x split só com a acurácia (usada pela suíte de mesa)."""
    return summary.pivot(index="run", columns="split", values="accuracy")
