# core/data/listops.py
"""
ListOps: gerador com restrições de profundidade/tamanho/aridade, oráculo
recursivo, tokenizador/parser e montagem de splits (JSONL + manifest).

Formato dos tokens: "[MAX", "[MIN", "[MED", "[SM", "]" e dígitos "0".."9".
SM = soma módulo 10; MED = mediana inferior quando a aridade é par.
"""
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from core.errors import ConfigError, ConstraintError, ParseError, VerificationError

log = logging.getLogger(__name__)

OPERATORS = ("MAX", "MIN", "MED", "SM")
OPEN_TOKENS = tuple("[" + op for op in OPERATORS)
CLOSE = "]"
DIGITS = tuple(str(i) for i in range(10))
MIN_ARITY = 2
DEFAULT_NEST_PROB = 0.6
DEFAULT_MAX_TRIES = 10000


# =========================
# Tipos
# =========================
@dataclass
class OpTree:
    op: str
    children: List[Union["OpTree", int]] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return tree_stats(self)[0]

    @property
    def length(self) -> int:
        return tree_stats(self)[1]

    @property
    def max_args(self) -> int:
        return tree_stats(self)[2]


Tree = Union[OpTree, int]


@dataclass
class Example:
    tokens: List[str]
    label: int
    depth: int
    length: int
    max_args: int

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class SplitSpec:
    name: str
    n_samples: int
    min_len: int = 1
    max_len: int = 100
    min_depth: int = 1
    max_depth: int = 6
    min_args: int = MIN_ARITY    # limite inferior do max_args da árvore
    max_args: int = 5
    nest_prob: float = DEFAULT_NEST_PROB
    max_tries: int = DEFAULT_MAX_TRIES

    @classmethod
    def from_dict(cls, raw: dict) -> "SplitSpec":
        raw = dict(raw)
        for key, (lo, hi) in (("length", ("min_len", "max_len")),
                              ("depth", ("min_depth", "max_depth")),
                              ("args", ("min_args", "max_args"))):
            if key in raw:
                v = raw.pop(key)
                raw[lo], raw[hi] = (v, v) if isinstance(v, int) else (v[0], v[1])
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"campos desconhecidos no split: {sorted(unknown)}")
        if "name" not in raw or "n_samples" not in raw:
            raise ConfigError("split precisa de name e n_samples")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


# =========================
# Estatísticas / oráculo
# =========================
def _children(node: Tree) -> List[Tree]:
    return node.children if isinstance(node, OpTree) else []


def tree_stats(tree: Tree) -> Tuple[int, int, int]:
    """(profundidade, tamanho em tokens, maior aridade), sem recursão Python."""
    if not isinstance(tree, OpTree):
        return 0, 1, 0
    depth = length = max_args = 0
    stack = [(tree, 1)]
    while stack:
        node, level = stack.pop()
        if isinstance(node, OpTree):
            depth = max(depth, level)
            length += 2
            max_args = max(max_args, len(node.children))
            stack.extend((c, level + 1) for c in node.children)
        else:
            length += 1
    return depth, length, max_args


def apply_op(op: str, values: Sequence[int]) -> int:
    if op == "MAX":
        return max(values)
    if op == "MIN":
        return min(values)
    if op == "MED":
        ordered = sorted(values)
        return ordered[(len(ordered) - 1) // 2]
    if op == "SM":
        return sum(values) % 10
    raise ConfigError(f"operador desconhecido: {op}")


def evaluate(tree: Tree) -> int:
    """Avaliação de baixo para cima (pilha explícita)."""
    if not isinstance(tree, OpTree):
        return int(tree)
    stack: List[Tuple[OpTree, int, List[int]]] = [(tree, 0, [])]
    while True:
        node, i, vals = stack[-1]
        if i < len(node.children):
            stack[-1] = (node, i + 1, vals)
            child = node.children[i]
            if isinstance(child, OpTree):
                stack.append((child, 0, []))
            else:
                vals.append(int(child))
            continue
        stack.pop()
        value = apply_op(node.op, vals)
        if not stack:
            return value
        stack[-1][2].append(value)


# =========================
# Tokens
# =========================
def tokenize(tree: Tree) -> List[str]:
    out: List[str] = []
    stack: List[Union[Tree, str]] = [tree]
    while stack:
        x = stack.pop()
        if isinstance(x, str):
            out.append(x)
        elif isinstance(x, OpTree):
            out.append("[" + x.op)
            stack.append(CLOSE)
            stack.extend(reversed(x.children))
        else:
            out.append(str(int(x)))
    return out


def parse(tokens: Sequence[str]) -> Tree:
    """Parser com pilha; erros apontam o índice do primeiro token inválido."""
    tokens = list(tokens)
    if not tokens:
        raise ParseError("sequência vazia", 0)
    stack: List[OpTree] = []
    root: Optional[Tree] = None
    for idx, tok in enumerate(tokens):
        if root is not None:
            raise ParseError("tokens sobrando depois da expressão", idx)
        if tok in OPEN_TOKENS:
            stack.append(OpTree(tok[1:], []))
        elif tok == CLOSE:
            if not stack:
                raise ParseError("']' sem operador aberto", idx)
            node = stack.pop()
            if not node.children:
                raise ParseError(f"operador {node.op} vazio", idx)
            if stack:
                stack[-1].children.append(node)
            else:
                root = node
        elif tok in DIGITS:
            if stack:
                stack[-1].children.append(int(tok))
            else:
                root = int(tok)
        else:
            raise ParseError(f"token desconhecido: {tok!r}", idx)
    if stack or root is None:
        raise ParseError("fim inesperado: colchetes desbalanceados", len(tokens))
    return root


def split_expression(text: str) -> List[str]:
    return text.replace(CLOSE, f" {CLOSE} ").split()


def parse_expression(text: str) -> Tree:
    return parse(split_expression(text))


# =========================
# Gerador
# =========================
def min_length(depth: int) -> int:
    # árvore mínima: cada nível tem o filho da espinha e um dígito
    return 3 * depth + 1 if depth > 0 else 1


def max_length(depth: int, arity: int) -> int:
    n = 1
    for _ in range(depth):
        n = 2 + arity * n
    return n


def feasible_depths(spec: SplitSpec) -> List[int]:
    out = []
    for d in range(spec.min_depth, spec.max_depth + 1):
        lo = 2 + min_length(d - 1) + (spec.min_args - 1)
        hi = 2 + spec.max_args * max_length(d - 1, spec.max_args)
        if lo <= spec.max_len and hi >= spec.min_len:
            out.append(d)
    return out


def check_feasible(spec: SplitSpec) -> List[int]:
    """Valida as faixas e devolve as profundidades alcançáveis dentro do tamanho pedido."""
    problems = []
    if spec.n_samples < 0:
        problems.append("n_samples negativo")
    if spec.min_len > spec.max_len:
        problems.append(f"faixa de tamanho vazia [{spec.min_len}, {spec.max_len}]")
    if spec.min_depth < 1 or spec.min_depth > spec.max_depth:
        problems.append(f"faixa de profundidade inválida [{spec.min_depth}, {spec.max_depth}]")
    if spec.min_args < MIN_ARITY or spec.min_args > spec.max_args:
        problems.append(f"faixa de aridade inválida [{spec.min_args}, {spec.max_args}] (mínimo {MIN_ARITY})")
    if not 0.0 <= spec.nest_prob <= 1.0:
        problems.append("nest_prob fora de [0, 1]")
    if spec.max_tries < 1:
        problems.append("max_tries deve ser >= 1")
    depths = [] if problems else feasible_depths(spec)
    if not problems and not depths:
        problems.append("nenhuma profundidade cabe na faixa de tamanho")
    if problems:
        raise ConstraintError(f"split {spec.name} inviável: " + "; ".join(problems),
                              report={"split": spec.name, "problems": problems})
    return depths


class _TooLong(Exception):
    pass


def _grow(rng: np.random.Generator, depth: int, spec: SplitSpec, p_nest: float, budget: List[int],
          root: bool = False) -> OpTree:
    """Nó com profundidade exata `depth`: um filho (a espinha) carrega depth-1."""
    lo = spec.min_args if root else MIN_ARITY
    arity = int(rng.integers(lo, spec.max_args + 1))
    spine = int(rng.integers(0, arity))
    op = OPERATORS[int(rng.integers(0, len(OPERATORS)))]
    budget[0] -= 2
    children: List[Tree] = []
    for i in range(arity):
        if budget[0] < 0:
            raise _TooLong()
        if i == spine and depth > 1:
            children.append(_grow(rng, depth - 1, spec, p_nest, budget))
        elif i != spine and depth > 1 and rng.random() < p_nest:
            sub = int(rng.integers(1, depth))
            children.append(_grow(rng, sub, spec, p_nest, budget))
        else:
            budget[0] -= 1
            children.append(int(rng.integers(0, 10)))
    if budget[0] < 0:
        raise _TooLong()
    return OpTree(op, children)


def generate_tree(rng: np.random.Generator, spec: SplitSpec, depths: Optional[List[int]] = None) -> OpTree:
    """Amostragem por rejeição até caber em todas as faixas (até spec.max_tries tentativas)."""
    depths = depths or check_feasible(spec)
    p = spec.nest_prob
    short = long = 0
    for _ in range(spec.max_tries):
        depth = depths[int(rng.integers(0, len(depths)))]
        p_try = float(np.clip(p * rng.uniform(0.75, 1.25), 0.0, 0.95))
        try:
            tree = _grow(rng, depth, spec, p_try, [spec.max_len], root=True)
        except _TooLong:
            long += 1
            p = max(p * 0.9, 0.01)
            continue
        d, length, args = tree_stats(tree)
        if length < spec.min_len:
            short += 1
            p = min(p * 1.1, 0.95)
            continue
        if spec.min_depth <= d <= spec.max_depth and spec.min_args <= args <= spec.max_args:
            return tree
    raise ConstraintError(
        f"split {spec.name}: {spec.max_tries} tentativas sem árvore válida",
        report={"split": spec.name, "tries": spec.max_tries, "too_short": short, "too_long": long,
                "depths": depths, "spec": spec.to_dict()})


def make_example(tree: Tree) -> Example:
    depth, length, args = tree_stats(tree)
    return Example(tokens=tokenize(tree), label=evaluate(tree), depth=depth, length=length, max_args=args)


def generate_examples(rng: np.random.Generator, spec: SplitSpec) -> List[Example]:
    depths = check_feasible(spec)
    return [make_example(generate_tree(rng, spec, depths)) for _ in range(spec.n_samples)]


# =========================
# Verificação
# =========================
def verify_record(rec: dict, spec: Optional[SplitSpec] = None) -> List[str]:
    """Reavalia um registro a partir dos tokens; devolve a lista de problemas (vazia = ok)."""
    problems = []
    try:
        tree = parse(rec["tokens"])
    except ParseError as e:
        return [f"parse: {e}"]
    depth, length, args = tree_stats(tree)
    if evaluate(tree) != rec["label"]:
        problems.append(f"rótulo {rec['label']} != {evaluate(tree)}")
    if (depth, length, args) != (rec["depth"], rec["length"], rec["max_args"]):
        problems.append("metadados não batem com os tokens")
    if spec is not None:
        if not spec.min_len <= length <= spec.max_len:
            problems.append(f"tamanho {length} fora de [{spec.min_len}, {spec.max_len}]")
        if not spec.min_depth <= depth <= spec.max_depth:
            problems.append(f"profundidade {depth} fora de [{spec.min_depth}, {spec.max_depth}]")
        if not spec.min_args <= args <= spec.max_args:
            problems.append(f"aridade {args} fora de [{spec.min_args}, {spec.max_args}]")
    return problems


def verify_shard(records: Iterable[dict], spec: Optional[SplitSpec] = None, name: str = "?") -> int:
    n = 0
    for i, rec in enumerate(records):
        problems = verify_record(rec, spec)
        if problems:
            raise VerificationError(f"shard {name}, exemplo {i}: " + "; ".join(problems))
        n += 1
    return n


# =========================
# Splits
# =========================
def histograms(records: List[dict]) -> Dict[str, Dict[str, int]]:
    if not records:
        return {k: {} for k in ("label", "depth", "length", "max_args")}
    df = pd.DataFrame(records, columns=["label", "depth", "length", "max_args"])
    return {col: {str(k): int(v) for k, v in df[col].value_counts().sort_index().items()}
            for col in df.columns}


def _generate_shard(spec_raw: dict, seed_seq: np.random.SeedSequence) -> List[dict]:
    spec = SplitSpec(**spec_raw)
    rng = np.random.default_rng(seed_seq)
    return [ex.to_record() for ex in generate_examples(rng, spec)]


def write_jsonl(path: Path, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def build_splits(specs: Sequence[SplitSpec], seed: int, out_dir, workers: int = 1) -> dict:
    """Um shard JSONL por split + manifest.json; cada split usa um filho de SeedSequence(seed)."""
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"nomes de split repetidos: {names}")
    for spec in specs:
        check_feasible(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(len(specs))
    raw = [s.to_dict() for s in specs]
    if workers > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            shards = list(pool.map(_generate_shard, raw, children))
    else:
        shards = [_generate_shard(r, c) for r, c in zip(raw, children)]

    manifest = {"seed": seed, "splits": [], "counts": {}, "histograms": {}}
    for spec, records in zip(specs, shards):
        verify_shard(records, spec, spec.name)
        path = out / f"{spec.name}.jsonl"
        write_jsonl(path, records)
        manifest["splits"].append(spec.to_dict())
        manifest["counts"][spec.name] = len(records)
        manifest["histograms"][spec.name] = histograms(records)
        log.info("[GEN] %s: %d exemplos -> %s", spec.name, len(records), path)
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_specs(path) -> Tuple[List[SplitSpec], Optional[int]]:
    """Lê um arquivo de splits: {"seed": n?, "splits": [{...}, ...]}."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"arquivo de splits não encontrado: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: JSON inválido ({e})")
    splits = raw.get("splits") if isinstance(raw, dict) else raw
    if not splits:
        raise ConfigError(f"{p}: nenhum split definido")
    seed = raw.get("seed") if isinstance(raw, dict) else None
    return [SplitSpec.from_dict(s) for s in splits], seed


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
