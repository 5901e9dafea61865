import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llm2comp.errors import DataError
from llm2comp.evalmetrics import (RankedList, accuracy, average_precision, format_score,
                                  mean_average_precision, ndcg_at_k, run_task, spearman, v_measure)
from llm2comp.tensor import DomainError

from oracles import pearson, rank_average, v_measure_oracle


def test_spearman_examples():
    x = [0.3, 1.5, -2.0, 4.0, 0.0]
    assert spearman(x, x) == pytest.approx(1.0, abs=1e-15)
    assert spearman(x, [-v for v in x]) == pytest.approx(-1.0, abs=1e-15)
    a, b = [1, 2, 2, 3], [1, 3, 2, 4]
    assert abs(spearman(a, b) - pearson(rank_average(a), rank_average(b))) < 1e-12
    with pytest.raises(DomainError):
        spearman([1, 1, 1], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=3, max_size=30))
def test_spearman_oracle_and_pair_order(pairs):
    x, y = [p[0] for p in pairs], [p[1] for p in pairs]
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    want = pearson(rank_average(x), rank_average(y))
    assert abs(spearman(x, y) - want) < 1e-12
    assert abs(spearman(x[::-1], y[::-1]) - want) < 1e-12


def test_ndcg_examples():
    assert ndcg_at_k([3, 2, 1, 0]) == 1.0
    assert ndcg_at_k([0, 0, 0]) == 0.0
    dcg = (2 ** 1 - 1) / math.log2(2) + (2 ** 3 - 1) / math.log2(3)
    ideal = (2 ** 3 - 1) / math.log2(2) + (2 ** 1 - 1) / math.log2(3)
    assert abs(ndcg_at_k(RankedList(["a", "b"], [1, 3]), 10) - dcg / ideal) < 1e-12
    with pytest.raises(ValueError):
        RankedList(["a", "a"], [1, 0])


def test_ndcg_cutoff():
    rels = [0] * 10 + [5]
    assert ndcg_at_k(rels, 10) == 0.0 and ndcg_at_k(rels, 11) > 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=15), st.data())
def test_ndcg_swap_down_never_helps(rels, data):
    i = data.draw(st.integers(0, len(rels) - 2))
    j = data.draw(st.integers(i + 1, len(rels) - 1))
    if rels[i] > 0 and rels[j] == 0:
        swapped = list(rels)
        swapped[i], swapped[j] = swapped[j], swapped[i]
        assert ndcg_at_k(swapped) <= ndcg_at_k(rels) + 1e-15


def test_map_examples():
    assert average_precision([1, 0, 0]) == 1.0
    assert average_precision([0, 1, 0]) == 0.5
    assert abs(average_precision([1, 0, 1]) - 5 / 6) < 1e-12
    lists = [[1, 0, 1], [0, 1], [1]]
    want = (5 / 6 + 0.5 + 1) / 3
    assert abs(mean_average_precision(lists) - want) < 1e-12
    assert abs(mean_average_precision(lists[::-1]) - want) < 1e-12
    with pytest.warns(UserWarning):
        assert mean_average_precision([[0, 0], [0, 1]]) == 0.5


def test_v_measure_examples():
    assert v_measure([0, 0, 1, 1, 2], ["x", "x", "y", "y", "z"]) == pytest.approx(1.0, abs=1e-12)
    assert v_measure(["a", "a", "b", "b"], [0, 0, 0, 0]) == 0.0
    labels = [0, 0, 0, 1, 1, 1]
    clusters = [0, 0, 1, 1, 2, 2]
    assert abs(v_measure(labels, clusters) - v_measure_oracle(labels, clusters)) < 1e-12


def test_v_measure_string_labelings():
    # a str is a sequence of one-character labels, not a single label
    assert v_measure([0, 0, 1, 1, 2], "xxyyz") == pytest.approx(1.0, abs=1e-12)
    assert v_measure("aabb", [0, 0, 0, 0]) == 0.0


@pytest.mark.parametrize("seed", range(50))
def test_v_measure_perfect_and_oracle(seed):
    r = np.random.default_rng(seed)
    n, c = int(r.integers(1, 40)), int(r.integers(1, 6))
    labels = [int(v) for v in r.integers(0, c, n)]
    relabel = {v: f"c{r.integers(1000)}_{v}" for v in set(labels)}
    assert abs(v_measure(labels, [relabel[v] for v in labels]) - 1.0) < 1e-12
    other = [int(v) for v in r.integers(0, 4, n)]
    assert abs(v_measure(labels, other) - v_measure_oracle(labels, other)) < 1e-12


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 2], [2, 1]) == 0.0
    assert accuracy([1, 2, 3, 4], [1, 2, 0, 0]) == 0.5


def _jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_run_task_sts(tmp_path, rng):
    emb = {f"t{i}": rng.normal(size=4) for i in range(12)}
    rows = []
    for i in range(0, 12, 2):
        u, v = emb[f"t{i}"], emb[f"t{i + 1}"]
        rows.append({"id1": f"t{i}", "id2": f"t{i + 1}",
                     "score": float(u @ v / np.linalg.norm(u) / np.linalg.norm(v))})
    assert run_task("sts", emb, _jsonl(tmp_path / "s.jsonl", rows)) == pytest.approx(1.0)


def test_run_task_retrieval_and_rerank(tmp_path, rng):
    emb = {f"d{i}": rng.normal(size=6) for i in range(6)}
    emb["q"] = emb["d3"].copy()
    row = {"query_id": "q", "candidate_ids": [f"d{i}" for i in range(6)],
           "relevance": [0, 0, 0, 1, 0, 0]}
    assert run_task("retrieval", emb, [row]) == 1.0
    assert run_task("rerank", emb, [row]) == 1.0


def test_run_task_clustering_blobs(rng):
    centers = np.zeros((2, 8))
    centers[1, 0] = 10.0
    centers += 1.0
    emb, rows = {}, []
    for i in range(40):
        emb[str(i)] = centers[i % 2] + 0.01 * rng.normal(size=8)
        rows.append({"id": str(i), "label": "ab"[i % 2]})
    assert run_task("clustering", emb, rows) == 1.0
    assert run_task("classify", emb, rows) == 1.0


def test_run_task_missing_id(rng):
    with pytest.raises(DataError, match="'zz'"):
        run_task("sts", {"a": rng.normal(size=3)}, [{"id1": "a", "id2": "zz", "score": 1.0}])
    with pytest.raises(ValueError):
        run_task("nope", {}, [{"id": "a"}])


def test_format_score():
    assert format_score("retrieval", 0.5) == "retrieval,ndcg@10,0.500000"
    assert format_score("sts", 1 / 3) == "sts,spearman,0.333333"
