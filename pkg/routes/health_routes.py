# routes/health_routes.py
from flask import Blueprint, current_app, jsonify

from core.models import MODEL_KINDS

bp_health = Blueprint("health", __name__)


@bp_health.get("/api/health")
def health():
    return jsonify({
        "ok": True,
        "models": list(MODEL_KINDS),
        "runs_dir": str(current_app.config["RUNS_DIR"]),
    })
