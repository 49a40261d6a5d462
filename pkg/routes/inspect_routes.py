# routes/inspect_routes.py
import logging
from functools import lru_cache
from pathlib import Path

from flask import Blueprint, current_app, jsonify, request

from core.data.listops import evaluate, parse_expression, split_expression, tree_stats
from core.errors import ParseError, RecSchemaError
from core.harness.checkpoint import load_checkpoint
from core.harness.trainer import trace_model
from core.models import Overrides

log = logging.getLogger(__name__)

bp_inspect = Blueprint("inspect", __name__)


def _opt(v, conv):
    return None if v is None else conv(v)


@lru_cache(maxsize=8)
def _cached_model(path: str, mtime: float):
    return load_checkpoint(path).to_model()


def _resolve_ckpt(raw: str) -> Path:
    # só checkpoints dentro da pasta de rodadas
    base = Path(current_app.config["RUNS_DIR"]).resolve()
    p = (base / raw).resolve()
    if base != p and base not in p.parents:
        raise ValueError("checkpoint fora da pasta de rodadas")
    if not p.is_file():
        raise FileNotFoundError(raw)
    return p


@bp_inspect.post("/api/listops/parse")
def parse_listops():
    p = request.get_json(force=True, silent=True) or {}
    expr = p.get("expression")
    if not isinstance(expr, str) or not expr.strip():
        return jsonify({"ok": False, "error": "expression obrigatório"}), 400
    try:
        tree = parse_expression(expr)
    except ParseError as e:
        return jsonify({"ok": False, "error": str(e), "index": e.index}), 400
    depth, length, max_args = tree_stats(tree)
    return jsonify({
        "ok": True,
        "tokens": split_expression(expr),
        "label": evaluate(tree),
        "depth": depth,
        "length": length,
        "max_args": max_args,
    })


@bp_inspect.post("/api/trace")
def trace_example():
    p = request.get_json(force=True, silent=True) or {}
    ckpt = p.get("checkpoint")
    example = p.get("expression") or p.get("tokens")
    if not ckpt or not example:
        return jsonify({"ok": False, "error": "checkpoint e expression (ou tokens) são obrigatórios"}), 400
    try:
        path = _resolve_ckpt(str(ckpt))
        overrides = Overrides(eval_layers=_opt(p.get("layers"), int), t_max=_opt(p.get("tmax"), int),
                              tau=_opt(p.get("tau"), float))
        model = _cached_model(str(path), path.stat().st_mtime)
        result = trace_model(model, example, None if overrides.is_empty() else overrides)
    except FileNotFoundError:
        return jsonify({"ok": False, "error": f"checkpoint não encontrado: {ckpt}"}), 404
    except (RecSchemaError, ValueError, TypeError) as e:
        log.warning("[TRACE] Falha: %s", e)
        return jsonify({"ok": False, "error": str(e)}), 400
    out = {k: result[k] for k in ("tokens", "prediction", "probs", "halt_step", "rows")}
    if p.get("attention"):
        out["attention"] = result["attention"]
    return jsonify({"ok": True, **out})
