# tests/conftest.py
import json
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.data.listops import SplitSpec, build_splits  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_specs():
    return [
        SplitSpec("train", 96, max_len=14, min_depth=1, max_depth=2, max_args=3),
        SplitSpec("val", 32, max_len=14, min_depth=1, max_depth=2, max_args=3),
        SplitSpec("gen_test", 16, min_len=10, max_len=24, min_depth=3, max_depth=3, max_args=3),
    ]


@pytest.fixture
def tiny_data(tmp_path, tiny_specs):
    out = tmp_path / "data"
    build_splits(tiny_specs, seed=7, out_dir=out)
    return out


def write_config(path: Path, data_dir: Path, out_dir: Path, **overrides) -> Path:
    values = {
        "MODEL": "crvnn",
        "D_MODEL": 8,
        "N_HEADS": 2,
        "FFN_HIDDEN": 16,
        "N_LAYERS": 2,
        "TRAIN_SHARD": data_dir / "train.jsonl",
        "VAL_SHARD": data_dir / "val.jsonl",
        "BATCH_SIZE": 16,
        "MAX_STEPS": 3,
        "EVAL_INTERVAL": 2,
        "SEED": 5,
        "DTYPE": "float64",
        "OUT_DIR": out_dir,
        "RECORD_WALL": 0,
    }
    values.update(overrides)
    path.write_text("\n".join(f"{k}={v}" for k, v in values.items()) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def make_config(tmp_path, tiny_data):
    def _make(name="exp.env", out="run", **overrides):
        return write_config(tmp_path / name, tiny_data, tmp_path / out, **overrides)
    return _make


def read_jsonl(path: Path):
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
