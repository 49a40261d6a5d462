# cli.py
"""
Linha de comando do recschema.

    python cli.py gen --spec specs/desk.json --seed 1 --out data/listops/desk
    python cli.py train --config configs/desk_crvnn.env
    python cli.py eval --ckpt runs/desk_crvnn/best.ckpt --shard data/listops/desk/gen_test.jsonl --tau 0.5
    python cli.py trace --ckpt runs/desk_crvnn/best.ckpt --example '[SM 4 5 7]'
    python cli.py gradcheck
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import config
from core.data.listops import build_splits, default_workers, load_specs
from core.errors import ConfigError, RecSchemaError
from core.harness.gradsuite import run_suite
from core.harness.settings import load_experiment_config
from core.harness.trainer import evaluate_runs, trace, train
from core.models import Overrides

log = logging.getLogger("recschema.cli")


def _shards(values: List[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for v in values:
        name, sep, path = v.partition("=")
        if not sep:
            name, path = Path(v).stem, v
        if name in out:
            raise ConfigError(f"shard repetido: {name}")
        out[name] = path
    return out


def _overrides(args) -> Optional[Overrides]:
    ov = Overrides(eval_layers=args.layers, t_max=args.tmax, tau=args.tau)
    return None if ov.is_empty() else ov


def cmd_gen(args) -> int:
    specs, spec_seed = load_specs(args.spec)
    seed = args.seed if args.seed is not None else spec_seed
    if seed is None:
        raise ConfigError("informe --seed (o arquivo de splits não define seed)")
    manifest = build_splits(specs, seed, args.out, workers=args.workers or default_workers())
    log.info("[GEN] %s", json.dumps(manifest["counts"]))
    return 0


def cmd_train(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    result = train(cfg)
    print(json.dumps({"best_accuracy": result.best_accuracy, "best_ckpt": str(result.best_ckpt),
                      "final_ckpt": str(result.final_ckpt), "metrics": str(result.metrics_path)}, indent=2))
    return 0


def cmd_eval(args) -> int:
    report = evaluate_runs(args.ckpt, _shards(args.shard), _overrides(args), limit=args.limit)
    summary = report.pop("summary")
    print(summary.to_string(index=False))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2), encoding="utf-8")
        log.info("[EVAL] relatório em %s", args.json)
    return 0


def cmd_trace(args) -> int:
    out = args.out or str(Path(args.ckpt).with_suffix("")) + ".trace"
    result = trace(args.ckpt, args.example, out, _overrides(args))
    print(json.dumps({"prediction": result["prediction"], "halt_step": result["halt_step"],
                      "csv": out + ".csv", "json": out + ".json"}))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed)
    bad = [r for r in results if not r.passed]
    for r in results:
        print(f"{'ok   ' if r.passed else 'FALHA'} {r.name:<45} {r.error:.3e}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recschema", description="Bancada do esquema recursivo (CRvNN / NDR / baseline)")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, ... (padrão: RECSCHEMA_LOG_LEVEL)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="gera shards ListOps a partir de um arquivo de splits")
    g.add_argument("--spec", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", default=config.RECSCHEMA_DATA_DIR)
    g.add_argument("--workers", type=int, default=0, help="0 = automático")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="treina a partir de um arquivo KEY=VALUE")
    t.add_argument("--config", required=True)
    t.add_argument("--out", default=None, help="sobrescreve OUT_DIR")
    t.set_defaults(func=cmd_train)

    def add_overrides(sp):
        sp.add_argument("--layers", type=int, default=None, help="profundidade de inferência (camadas compartilhadas)")
        sp.add_argument("--tmax", type=int, default=None)
        sp.add_argument("--tau", type=float, default=None)

    e = sub.add_parser("eval", help="avalia um ou mais checkpoints (mediana entre rodadas)")
    e.add_argument("--ckpt", action="append", required=True)
    e.add_argument("--shard", action="append", required=True, help="caminho ou nome=caminho")
    e.add_argument("--limit", type=int, default=None)
    e.add_argument("--json", default=None, help="grava o relatório completo")
    add_overrides(e)
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("trace", help="trajetória E/G/L e atenção de um exemplo")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--example", required=True, help="JSON com tokens ou expressão '[SM 4 5 7]'")
    tr.add_argument("--out", default=None, help="prefixo dos arquivos .csv/.json")
    add_overrides(tr)
    tr.set_defaults(func=cmd_trace)

    gc = sub.add_parser("gradcheck", help="diferenças finitas em todas as primitivas e passos dos modelos")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.setup_logging(args.log_level)
    try:
        return args.func(args)
    except RecSchemaError as e:
        log.error("[ERRO] %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
