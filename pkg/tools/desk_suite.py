# tools/desk_suite.py
"""
Suíte de mesa: treina CRvNN, NDR e baseline em 3 seeds, avalia no split de
validação e no de generalização (profundidade 5-6, tamanho 40-60) e imprime
a tabela de medianas. O NDR também roda com 1.2x e 2.4x as camadas treinadas.

    python -m tools.desk_suite --data data/listops/desk --out runs/desk_suite
"""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import pandas as pd

import config
from core.errors import RecSchemaError
from core.harness.settings import load_experiment_config
from core.harness.trainer import evaluate_runs, train
from core.models import Overrides
from core.services.reports import pivot_accuracy

log = logging.getLogger("recschema.desk_suite")

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
CONFIGS = {
    "crvnn": CONFIG_DIR / "desk_crvnn.env",
    "ndr": CONFIG_DIR / "desk_ndr.env",
    "baseline": CONFIG_DIR / "desk_baseline.env",
}
SEEDS = (1, 2, 3)
NDR_DEPTH_FACTORS = (1.2, 2.4)


def run(data_dir: Path, out_dir: Path, seeds=SEEDS, max_steps: int = None) -> pd.DataFrame:
    shards = {"val": str(data_dir / "val.jsonl"), "gen_test": str(data_dir / "gen_test.jsonl")}
    rows = []
    for name, cfg_path in CONFIGS.items():
        base = load_experiment_config(cfg_path, check_shards=False)
        ckpts = []
        for seed in seeds:
            cfg = dataclasses.replace(
                base, seed=seed, out_dir=str(out_dir / f"{name}_s{seed}"),
                train_shard=str(data_dir / "train.jsonl"), val_shard=shards["val"], test_shards={},
                max_steps=base.max_steps if max_steps is None else max_steps)
            ckpts.append(str(train(cfg).best_ckpt))
        variants = [(name, None)]
        if name == "ndr":
            variants += [(f"ndr@{f}x", Overrides(eval_layers=max(1, round(base.model.n_layers * f))))
                         for f in NDR_DEPTH_FACTORS]
        for label, ov in variants:
            rep = evaluate_runs(ckpts, shards, ov)
            for split, m in rep["median"].items():
                rows.append({"run": label, "split": split, "accuracy": m["accuracy"]})
    table = pivot_accuracy(pd.DataFrame(rows))
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "summary.csv")
    return table


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="Suíte de mesa (mediana de 3 seeds)")
    p.add_argument("--data", default=str(Path(config.RECSCHEMA_DATA_DIR) / "desk"))
    p.add_argument("--out", default=str(Path(config.RECSCHEMA_RUNS_DIR) / "desk_suite"))
    p.add_argument("--max-steps", type=int, default=None)
    args = p.parse_args(argv)
    config.setup_logging()
    try:
        table = run(Path(args.data), Path(args.out), max_steps=args.max_steps)
    except RecSchemaError as e:
        log.error("[ERRO] %s", e)
        return 2
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    print(json.dumps({"summary": str(Path(args.out) / "summary.csv")}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
