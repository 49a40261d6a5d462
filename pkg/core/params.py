# core/params.py
import hashlib
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from core.errors import CheckpointError, ShapeError
from core.tensor import Tensor, resolve_dtype


class ParamSet(Mapping):
    """Parâmetros nomeados (folhas do grafo), na ordem em que foram criados."""

    def __init__(self, dtype="float64"):
        self.dtype = resolve_dtype(dtype)
        self._items: Dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._items:
            raise ShapeError(f"parâmetro duplicado: {name}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {k: t.data for k, t in self._items.items()}

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: t.shape for k, t in self._items.items()}

    def n_scalars(self) -> int:
        return int(sum(t.size for t in self._items.values()))

    def replace(self, name: str, value) -> "ParamSet":
        """Cópia rasa com um parâmetro trocado (usado no gradcheck)."""
        if name not in self._items:
            raise KeyError(name)
        out = ParamSet(self.dtype)
        for k, t in self._items.items():
            if k != name:
                out._items[k] = t
            elif isinstance(value, Tensor):
                out._items[k] = value
            else:
                out._items[k] = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=k)
        return out

    def with_arrays(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> "ParamSet":
        out = ParamSet(self.dtype)
        for k, t in self._items.items():
            if k not in arrays:
                if strict:
                    raise CheckpointError(f"parâmetro ausente: {k}")
                out._items[k] = t
                continue
            arr = np.asarray(arrays[k])
            if arr.shape != t.shape:
                raise CheckpointError(f"forma de {k}: esperado {t.shape}, veio {arr.shape}")
            out.add(k, arr)
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, t in self._items.items():
            h.update(k.encode())
            h.update(str(t.shape).encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


# =========================
# Inicializadores
# =========================
def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def make_rng(seed: Optional[int]) -> np.random.Generator:
    return np.random.default_rng(seed)
