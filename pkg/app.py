# app.py
from dotenv import load_dotenv
load_dotenv()  # antes de importar config
import os

from flask import Flask, jsonify

import config
from routes.health_routes import bp_health
from routes.inspect_routes import bp_inspect


def create_app(runs_dir: str = None) -> Flask:
    config.setup_logging()
    app = Flask(__name__)
    app.config.update(
        RUNS_DIR=runs_dir or config.RECSCHEMA_RUNS_DIR,
        JSON_SORT_KEYS=False,
    )
    app.register_blueprint(bp_health)
    app.register_blueprint(bp_inspect)

    @app.errorhandler(404)
    def not_found(_e):
        return jsonify({"ok": False, "error": "rota não encontrada"}), 404

    return app


if __name__ == "__main__":
    create_app().run(host="0.0.0.0", port=int(os.getenv("PORT", "5000")), debug=False)
