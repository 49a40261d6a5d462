# core/tensor.py
"""
Tensor denso com diferenciação automática reversa, em cima do numpy.

Cada primitiva devolve um Tensor novo que guarda os pais e uma regra local
de gradiente (g -> gradientes dos pais). `backward` percorre o grafo numa
ordem topológica fixa, então duas execuções dão gradientes idênticos bit a bit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import DomainError, ShapeError

log = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}

# deslocamento aditivo das posições mascaradas no softmax
MASK_OFFSET = -1e9
_MASKED = -1e8


def resolve_dtype(dtype) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float64)
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise DomainError(f"dtype não suportado: {dtype}")
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise DomainError(f"dtype não suportado: {dt}")
    return dt


class Tensor:
    __array_ufunc__ = None  # ndarray (op) Tensor cai nos métodos reversos

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None, _parents: Tuple["Tensor", ...] = (), _op: str = "leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=None if dtype is None else resolve_dtype(dtype))
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.op = _op
        self._parents: Tuple[Tensor, ...] = tuple(_parents)
        self._backward: Optional[Callable] = None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{tag})"

    # ---- atributos ----
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() exige tensor com um elemento, forma {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- açúcar sintático ----
    def __add__(self, o): return apply_elementwise("add", self, o)
    def __radd__(self, o): return apply_elementwise("add", o, self)
    def __sub__(self, o): return apply_elementwise("sub", self, o)
    def __rsub__(self, o): return apply_elementwise("sub", o, self)
    def __mul__(self, o): return apply_elementwise("mul", self, o)
    def __rmul__(self, o): return apply_elementwise("mul", o, self)
    def __truediv__(self, o): return apply_elementwise("div", self, o)
    def __rtruediv__(self, o): return apply_elementwise("div", o, self)
    def __neg__(self): return apply_elementwise("neg", self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, idx): return index(self, idx)

    @property
    def T(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False): return reduce("sum", self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return reduce("mean", self, axis, keepdims)
    def max(self, axis=None, keepdims=False): return reduce("max", self, axis, keepdims)
    def sigmoid(self): return apply_elementwise("sigmoid", self)
    def tanh(self): return apply_elementwise("tanh", self)
    def gelu(self): return apply_elementwise("gelu", self)
    def exp(self): return apply_elementwise("exp", self)
    def log1p(self): return apply_elementwise("log1p", self)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype if like is not None else None))


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, rule: Callable) -> Tensor:
    out = Tensor(data, _op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(*shapes) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(*shapes))
    except ValueError:
        raise ShapeError(f"formas incompatíveis para broadcast: {' e '.join(str(s) for s in shapes)}")


# =========================
# Elementares
# =========================
_GELU_C = float(np.sqrt(2.0 / np.pi))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


# kind -> (forward, regra(g, y, x, aux)); forward pode devolver (y, aux) para o backward reaproveitar
_UNARY: Dict[str, Tuple[Callable, Callable]] = {
    "sigmoid": (_sigmoid, lambda g, y, x, _: g * y * (1.0 - y)),
    "tanh": (np.tanh, lambda g, y, x, _: g * (1.0 - y * y)),
    "gelu": (_gelu, lambda g, y, x, t: g * _gelu_grad(x, t)),
    "exp": (np.exp, lambda g, y, x, _: g * y),
    "log1p": (np.log1p, lambda g, y, x, _: g / (1.0 + x)),
    "log": (np.log, lambda g, y, x, _: g / x),
    "neg": (np.negative, lambda g, y, x, _: -g),
}

# kind -> (forward, regra para a, regra para b)
_BINARY: Dict[str, Tuple[Callable, Callable, Callable]] = {
    "add": (np.add, lambda g, a, b: g, lambda g, a, b: g),
    "sub": (np.subtract, lambda g, a, b: g, lambda g, a, b: -g),
    "mul": (np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a),
    "div": (np.divide, lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b)),
}

ELEMENTWISE_KINDS = tuple(_UNARY) + tuple(_BINARY)


def _check_domain(kind: str, x: np.ndarray):
    if kind == "log1p" and np.any(x <= -1.0):
        raise DomainError("log1p fora do domínio (x <= -1)")
    if kind == "log" and np.any(x <= 0.0):
        raise DomainError("log fora do domínio (x <= 0)")


def apply_elementwise(kind: str, *operands) -> Tensor:
    if kind in _UNARY:
        if len(operands) != 1:
            raise ShapeError(f"{kind} espera 1 operando, recebeu {len(operands)}")
        x = as_tensor(operands[0])
        fwd, rule = _UNARY[kind]
        _check_domain(kind, x.data)
        out = fwd(x.data)
        y, aux = out if isinstance(out, tuple) else (out, None)
        return _make(y, (x,), kind, lambda g: (rule(g, y, x.data, aux),))
    if kind in _BINARY:
        if len(operands) != 2:
            raise ShapeError(f"{kind} espera 2 operandos, recebeu {len(operands)}")
        a, b = _pair(*operands)
        _broadcast_shape(a.shape, b.shape)
        fwd, rule_a, rule_b = _BINARY[kind]
        y = fwd(a.data, b.data)

        def back(g):
            ga = _unbroadcast(rule_a(g, a.data, b.data), a.shape) if a.requires_grad else None
            gb = _unbroadcast(rule_b(g, a.data, b.data), b.shape) if b.requires_grad else None
            return ga, gb
        return _make(y, (a, b), kind, back)
    raise DomainError(f"operação elementar desconhecida: {kind}")


def sigmoid(x): return apply_elementwise("sigmoid", x)
def tanh(x): return apply_elementwise("tanh", x)
def gelu(x): return apply_elementwise("gelu", x)
def exp(x): return apply_elementwise("exp", x)
def log1p(x): return apply_elementwise("log1p", x)


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    y = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(y, (x,), "clamp", lambda g: (g * inside,))


# =========================
# Álgebra linear
# =========================
def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: formas incompatíveis {a.shape} e {b.shape}")
    if a.ndim > 2 and b.ndim > 2:
        _broadcast_shape(a.shape[:-2], b.shape[:-2])
    y = np.matmul(a.data, b.data)

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb
    return _make(y, (a, b), "matmul", back)


def einsum(subscripts: str, a, b) -> Tensor:
    """einsum de dois operandos, índices explícitos (sem '...')."""
    a, b = _pair(a, b)
    spec = subscripts.replace(" ", "")
    if "..." in spec or "->" not in spec:
        raise ShapeError(f"einsum: use índices explícitos com '->': {subscripts}")
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    if not (set(sa) <= set(out) | set(sb) and set(sb) <= set(out) | set(sa)):
        raise ShapeError(f"einsum: índice contraído sem par em {subscripts}")
    try:
        y = np.einsum(spec, a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"einsum {subscripts}: {a.shape} e {b.shape}: {e}")

    def back(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, b.data) if a.requires_grad else None
        gb = np.einsum(f"{sa},{out}->{sb}", a.data, g) if b.requires_grad else None
        return ga, gb
    return _make(y, (a, b), "einsum", back)


# =========================
# Reduções
# =========================
def _norm_axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"eixo {ax} inválido para tensor de {ndim} dimensões")
        out.append(ax % ndim)
    return tuple(sorted(out))


def reduce(kind: str, x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    if x.size == 0 or any(x.shape[ax] == 0 for ax in axes):
        raise ShapeError(f"redução {kind} sobre eixo vazio: forma {x.shape}")
    n = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1

    def expand(g):
        return g if keepdims or not axes else np.expand_dims(g, axes)

    if kind == "sum":
        y = x.data.sum(axis=axes, keepdims=keepdims)
        return _make(y, (x,), "sum", lambda g: (np.broadcast_to(expand(g), x.shape),))
    if kind == "mean":
        y = x.data.mean(axis=axes, keepdims=keepdims)
        return _make(y, (x,), "mean", lambda g: (np.broadcast_to(expand(g) / n, x.shape),))
    if kind == "max":
        # gradiente vai para o primeiro máximo (menor índice)
        if axis is None:
            flat = int(np.argmax(x.data))
            y = x.data.max(keepdims=keepdims)

            def back_all(g):
                out = np.zeros_like(x.data)
                out.reshape(-1)[flat] = np.asarray(g).reshape(-1)[0]
                return (out,)
            return _make(y, (x,), "max", back_all)
        if len(axes) != 1:
            raise ShapeError("max aceita um único eixo")
        ax = axes[0]
        idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
        y = x.data.max(axis=ax, keepdims=keepdims)

        def back(g):
            out = np.zeros_like(x.data)
            np.put_along_axis(out, idx, g if keepdims else np.expand_dims(g, ax), axis=ax)
            return (out,)
        return _make(y, (x,), "max", back)
    raise DomainError(f"redução desconhecida: {kind}")


# =========================
# Normalização / softmax / perda
# =========================
def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    gain, bias = as_tensor(gain, like=x), as_tensor(bias, like=x)
    if eps <= 0:
        raise DomainError("layer_norm: eps deve ser > 0")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: ganho {gain.shape} / viés {bias.shape} não casam com d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def back(g):
        gx = gg = gb = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb
    return _make(y, (x, gain, bias), "layer_norm", back)


def additive_mask(keep: np.ndarray, dtype=np.float64) -> np.ndarray:
    return np.where(np.asarray(keep, dtype=bool), 0.0, MASK_OFFSET).astype(dtype)


def softmax(x, axis: int = -1, additive_mask: Optional[np.ndarray] = None) -> Tensor:
    x = as_tensor(x)
    z = x.data
    if additive_mask is not None:
        m = np.asarray(additive_mask, dtype=x.dtype)
        full = _broadcast_shape(m.shape, x.shape)
        if np.any(np.all(np.broadcast_to(m, full) <= _MASKED, axis=axis)):
            raise DomainError("softmax: linha totalmente mascarada (precisa de ao menos uma chave válida)")
        z = z + m
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (_unbroadcast(y * (g - (g * y).sum(axis=axis, keepdims=True)), x.shape),)
    return _make(y, (x,), "softmax", back)


def cross_entropy(logits, labels) -> Tensor:
    """Média de -log softmax(logits)[label]; logits [..., C]."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: rótulos {labels.shape} vs logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise DomainError(f"cross_entropy: rótulo fora de [0, {n_cls})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    n = max(labels.size, 1)
    y = np.asarray(-picked.sum() / n, dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, labels[..., None], np.take_along_axis(p, labels[..., None], axis=-1) - 1.0, axis=-1)
        return (g * p / n,)
    return _make(y, (logits,), "cross_entropy", back)


# =========================
# Forma / indexação
# =========================
def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {x.shape} -> {shape}")
    return _make(y, (x,), "reshape", lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), "transpose", lambda g: (g.transpose(inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,), "swapaxes", lambda g: (np.swapaxes(g, a1, a2),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat de lista vazia")
    like = next((t for t in tensors if isinstance(t, Tensor)), None)
    ts = [as_tensor(t, like=like) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: formas incompatíveis {[t.shape for t in ts]}")
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        parts = np.split(g, cuts, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, ts))
    return _make(y, ts, "concat", back)


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    y = x.data[idx]
    basic = _is_basic(idx)

    def back(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)
    return _make(np.array(y), (x,), "index", back)


def take_rows(weight, ids) -> Tensor:
    """Lookup de embedding: weight[ids]."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DomainError(f"take_rows: id fora de [0, {weight.shape[0]})")
    y = weight.data[ids]

    def back(g):
        out = np.zeros_like(weight.data)
        np.add.at(out, ids, g)
        return (out,)
    return _make(y, (weight,), "take_rows", back)


# =========================
# Grafo / backward
# =========================
@dataclass
class Graph:
    nodes: List[Tensor]   # ordem topológica, saída por último
    leaves: List[Tensor]


def build_graph(root: Tensor) -> Graph:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return Graph(nodes=order, leaves=[n for n in order if not n._parents])


def backward(loss: Tensor, graph: Optional[Graph] = None) -> Dict[str, np.ndarray]:
    """Propaga d(loss)/d(folha); devolve {nome: gradiente} das folhas nomeadas."""
    if loss.size != 1:
        raise ShapeError(f"backward exige perda escalar, forma {loss.shape}")
    if not loss.requires_grad:
        raise DomainError("a perda não depende de nenhuma folha com gradiente")
    graph = graph or build_graph(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        if not node._parents:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = gp if k not in grads else grads[k] + gp
    out: Dict[str, np.ndarray] = {}
    for leaf in graph.leaves:
        g = grads.get(id(leaf))
        leaf.grad = None if g is None else np.array(g, dtype=leaf.dtype)
        if leaf.name is not None and leaf.grad is not None:
            out[leaf.name] = leaf.grad
    return out


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    """Erro relativo máximo entre o gradiente analítico e diferenças centrais."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(x0.copy(), requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise ShapeError("grad_check: f deve devolver escalar")
    analytic = np.zeros_like(x0)
    if out.requires_grad:
        backward(out)
        if xt.grad is not None:
            analytic = xt.grad
    numeric = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        xp = x0.copy()
        xp[idx] += h
        xm = x0.copy()
        xm[idx] -= h
        numeric[idx] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2 * h)
    if x0.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
