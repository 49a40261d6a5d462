# tests/test_listops.py
import json

import numpy as np
import pytest

from core.data.dataset import LISTOPS_VOCAB, Vocab, batch_indices, encode_batch, load_shard, resolve_vocab
from core.data.listops import (OpTree, SplitSpec, apply_op, build_splits, check_feasible, evaluate,
                               generate_examples, generate_tree, load_specs, parse, parse_expression, tokenize,
                               tree_stats, verify_shard)
from core.errors import ConfigError, ConstraintError, DomainError, ParseError, VerificationError
from conftest import ROOT, read_jsonl


# =========================
# Oráculo
# =========================
@pytest.mark.parametrize("expr, label", [
    ("[SM 4 5 7]", 6),
    ("[MAX 1 3 [SM 4 5 [MIN 9 7]] 4]", 6),
    ("[MED 1 2 9]", 2),
    ("[MIN 3 [MAX 0 8] 5]", 3),
])
def test_evaluate_examples(expr, label):
    assert evaluate(parse_expression(expr)) == label


def test_median_of_even_arity_is_lower():
    assert apply_op("MED", [9, 1, 3, 2]) == 2


def test_tree_stats():
    tree = parse_expression("[MAX 1 3 [SM 4 5 [MIN 9 7]] 4]")
    assert tree_stats(tree) == (3, 13, 4)


def test_deep_trees_do_not_hit_recursion_limit():
    tree = 1
    for _ in range(5000):
        tree = OpTree("SM", [tree, 1])
    assert evaluate(tree) == 1
    assert tree_stats(tree)[0] == 5000
    assert len(tokenize(tree)) == 3 * 5000 + 1


# =========================
# Tokens / parser
# =========================
def test_tokenize_and_parse():
    tree = OpTree("SM", [4, 5, 7])
    assert tokenize(tree) == ["[SM", "4", "5", "7", "]"]
    assert parse(["[SM", "4", "5", "7", "]"]) == tree


@pytest.mark.parametrize("tokens, index", [
    (["[MAX", "1"], 2),
    ([], 0),
    (["]"], 0),
    (["[MAX", "]"], 1),
    (["[MAX", "1", "X", "]"], 2),
    (["[MIN", "1", "2", "]", "3"], 4),
])
def test_parse_errors_point_at_the_token(tokens, index):
    with pytest.raises(ParseError) as exc:
        parse(tokens)
    assert exc.value.index == index


def test_round_trip_on_random_trees(rng):
    spec = SplitSpec("rt", 2000, max_len=60, max_depth=5, max_args=4)
    for ex in generate_examples(rng, spec):
        assert tokenize(parse(ex.tokens)) == ex.tokens


# =========================
# Gerador
# =========================
def test_minimal_trees(rng):
    spec = SplitSpec("min", 50, max_depth=1, max_args=2)
    for _ in range(50):
        tree = generate_tree(rng, spec)
        assert len(tree.children) == 2
        assert all(isinstance(c, int) for c in tree.children)


def test_depth_generalization_bounds(rng):
    spec = SplitSpec("dg", 1000, max_len=100, min_depth=8, max_depth=10, max_args=5)
    for ex in generate_examples(rng, spec):
        assert 8 <= ex.depth <= 10
        assert ex.length <= 100
        assert 2 <= ex.max_args <= 5


def test_argument_range_is_respected(rng):
    spec = SplitSpec("args", 200, min_len=20, max_len=200, min_depth=1, max_depth=3, min_args=6, max_args=8)
    for ex in generate_examples(rng, spec):
        assert 6 <= ex.max_args <= 8 and 20 <= ex.length <= 200


def test_generation_is_deterministic():
    spec = SplitSpec("det", 100, max_len=30, max_depth=4, max_args=3)
    a = generate_examples(np.random.default_rng(11), spec)
    b = generate_examples(np.random.default_rng(11), spec)
    assert [e.tokens for e in a] == [e.tokens for e in b]


def test_infeasible_spec_is_reported():
    with pytest.raises(ConstraintError) as exc:
        check_feasible(SplitSpec("bad", 10, max_len=10, min_depth=6, max_depth=6))
    assert exc.value.report["split"] == "bad"
    with pytest.raises(ConstraintError):
        check_feasible(SplitSpec("bad_args", 10, min_args=1))


def test_retry_cap_is_reported(rng):
    spec = SplitSpec("tight", 1, min_len=4, max_len=4, max_depth=1, max_args=2, nest_prob=0.0, max_tries=1)
    assert generate_tree(rng, spec).children
    # sem aninhamento, profundidade 3 com aridade 2 sempre dá 10 tokens
    hard = SplitSpec("hard", 1, min_len=11, max_len=22, min_depth=3, max_depth=3, max_args=2,
                     nest_prob=0.0, max_tries=5)
    with pytest.raises(ConstraintError) as exc:
        generate_tree(rng, hard)
    assert exc.value.report["tries"] == 5


def test_labels_cover_all_classes(rng):
    spec = SplitSpec("bal", 1000, max_len=30, max_depth=4, max_args=3)
    labels = {ex.label for ex in generate_examples(rng, spec)}
    assert labels == set(range(10))


def test_split_spec_from_dict_accepts_ranges():
    spec = SplitSpec.from_dict({"name": "x", "n_samples": 5, "length": [40, 60], "depth": 3, "args": [2, 4]})
    assert (spec.min_len, spec.max_len, spec.min_depth, spec.max_depth, spec.max_args) == (40, 60, 3, 3, 4)
    with pytest.raises(ConfigError):
        SplitSpec.from_dict({"name": "x", "n_samples": 5, "width": 3})


# =========================
# Shards
# =========================
def test_build_splits_writes_verified_shards(tmp_path, tiny_specs):
    manifest = build_splits(tiny_specs, seed=7, out_dir=tmp_path)
    assert manifest["counts"] == {"train": 96, "val": 32, "gen_test": 16}
    on_disk = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert on_disk["seed"] == 7
    for spec in tiny_specs:
        records = read_jsonl(tmp_path / f"{spec.name}.jsonl")
        assert verify_shard(records, spec, spec.name) == spec.n_samples
        assert sum(on_disk["histograms"][spec.name]["label"].values()) == spec.n_samples


def test_build_splits_is_reproducible(tmp_path, tiny_specs):
    build_splits(tiny_specs, seed=3, out_dir=tmp_path / "a")
    build_splits(tiny_specs, seed=3, out_dir=tmp_path / "b")
    for spec in tiny_specs:
        assert (tmp_path / "a" / f"{spec.name}.jsonl").read_bytes() == \
               (tmp_path / "b" / f"{spec.name}.jsonl").read_bytes()


def test_build_splits_rejects_duplicate_names(tmp_path):
    specs = [SplitSpec("a", 2, max_depth=1), SplitSpec("a", 2, max_depth=1)]
    with pytest.raises(ConfigError):
        build_splits(specs, seed=0, out_dir=tmp_path)


def test_verify_shard_catches_wrong_label():
    rec = {"tokens": ["[SM", "4", "5", "7", "]"], "label": 5, "depth": 1, "length": 5, "max_args": 3}
    with pytest.raises(VerificationError):
        verify_shard([rec], name="broken")


def test_repository_split_files_load():
    specs, seed = load_specs(ROOT / "specs" / "desk.json")
    assert seed == 1
    assert [s.name for s in specs] == ["train", "val", "gen_test"]
    for spec in specs:
        check_feasible(spec)


# =========================
# Dataset
# =========================
def test_vocab_and_batches():
    assert len(LISTOPS_VOCAB) == 16
    with pytest.raises(DomainError):
        LISTOPS_VOCAB.encode(["[SUM"])
    recs = [{"tokens": ["[SM", "4", "5", "]"], "label": 9}, {"tokens": ["3"], "label": 3}]
    batch = encode_batch(recs)
    assert batch.ids.shape == (2, 4)
    assert list(batch.ids[1, 1:]) == [0, 0, 0]
    assert LISTOPS_VOCAB.decode(batch.ids[1]) == ["3"]
    np.testing.assert_array_equal(batch.depths, [-1, -1])


def test_vocab_from_records_starts_with_pad():
    vocab = Vocab.from_records([{"tokens": ["a", "b", "a"]}])
    assert vocab.itos == ["<pad>", "a", "b"]


def test_resolve_vocab_prefers_listops_and_falls_back_to_shards():
    listops = [{"tokens": ["[MAX", "3", "9", "]"], "label": 9}]
    assert resolve_vocab([listops, listops]) is LISTOPS_VOCAB
    vocab = resolve_vocab([listops, [{"tokens": ["x", "3"], "label": 0}]])
    assert vocab.itos == ["<pad>", "[MAX", "3", "9", "]", "x"]


def test_batch_indices_cover_every_example_once(rng):
    lengths = rng.integers(1, 50, size=257)
    batches = batch_indices(lengths, 16, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(257))
    assert max(len(b) for b in batches) == 16


def test_load_shard_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_shard(tmp_path / "missing.jsonl")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"tokens": [], "label": 1}\n', encoding="utf-8")
    with pytest.raises(ConfigError):
        load_shard(bad)
