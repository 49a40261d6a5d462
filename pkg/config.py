# config.py
import logging
import os

from dotenv import load_dotenv
load_dotenv()

RECSCHEMA_LOG_LEVEL = os.getenv("RECSCHEMA_LOG_LEVEL", "INFO")
RECSCHEMA_RUNS_DIR = os.getenv("RECSCHEMA_RUNS_DIR", "runs")
RECSCHEMA_DTYPE = os.getenv("RECSCHEMA_DTYPE", "float32")
RECSCHEMA_DATA_DIR = os.getenv("RECSCHEMA_DATA_DIR", "data/listops")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_configured = False


def setup_logging(level: str = None):
    """Configura o logger raiz uma vez só (CLI e app Flask chamam no início)."""
    global _configured
    if _configured:
        return
    lvl = (level or RECSCHEMA_LOG_LEVEL).upper()
    logging.basicConfig(level=getattr(logging, lvl, logging.INFO), format=LOG_FORMAT)
    _configured = True
