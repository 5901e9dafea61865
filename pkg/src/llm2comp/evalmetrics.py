"""Downstream metrics (Spearman, NDCG@10, MAP, V-measure, accuracy) and task runners."""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .tensor import DomainError

TASKS = ("sts", "retrieval", "clustering", "rerank", "classify")
TASK_METRIC = {"sts": "spearman", "retrieval": "ndcg@10", "clustering": "v_measure",
               "rerank": "map", "classify": "accuracy"}


@dataclass
class RankedList:
    ids: list[str]
    relevance: list[float]

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ranked list has duplicate ids")
        if len(self.ids) != len(self.relevance):
            raise ValueError("ids and relevance differ in length")


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-tie ranks."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("spearman needs two equal-length inputs of length >= 2")
    rx, ry = rankdata(x) - (x.size + 1) / 2, rankdata(y) - (y.size + 1) / 2
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        raise DomainError("spearman undefined for constant input")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


def _dcg(rels: np.ndarray) -> float:
    return float(np.sum((2.0 ** rels - 1.0) / np.log2(np.arange(2, rels.size + 2))))


def ndcg_at_k(ranked: RankedList | Sequence[float], k: int = 10) -> float:
    """NDCG with gain 2^rel − 1 over relevance given in served order."""
    rels = np.asarray(ranked.relevance if isinstance(ranked, RankedList) else ranked,
                      dtype=np.float64)
    ideal = _dcg(np.sort(rels)[::-1][:k])
    return 0.0 if ideal == 0 else _dcg(rels[:k]) / ideal


def average_precision(relevant: Sequence) -> float:
    hits = np.asarray(relevant, dtype=np.float64) > 0
    if not hits.any():
        raise ValueError("average precision needs at least one relevant item")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def mean_average_precision(lists: Sequence[Sequence]) -> float:
    scores = []
    for n, rel in enumerate(lists):
        if not np.any(np.asarray(rel) > 0):
            warnings.warn(f"query {n} has no relevant candidate; excluded from MAP")
            continue
        scores.append(average_precision(rel))
    if not scores:
        raise ValueError("no query with a relevant candidate")
    return float(np.mean(scores))


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def v_measure(true_labels: Sequence, predicted: Sequence) -> float:
    if len(true_labels) != len(predicted) or not len(true_labels):
        raise ValueError("v_measure needs equal nonempty labelings")
    _, ci = np.unique(np.array(list(true_labels), dtype=object).astype(str), return_inverse=True)
    _, ki = np.unique(np.array(list(predicted), dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ci.max() + 1, ki.max() + 1))
    np.add.at(table, (ci, ki), 1.0)
    n = table.sum()
    h_c, h_k = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    nz = table > 0
    joint = table[nz] / n
    per_cluster = (table / table.sum(axis=0, keepdims=True))[nz]
    per_class = (table / table.sum(axis=1, keepdims=True))[nz]
    h_c_given_k = -float(np.sum(joint * np.log(per_cluster)))
    h_k_given_c = -float(np.sum(joint * np.log(per_class)))
    hom = 1.0 if h_c == 0 else 1.0 - h_c_given_k / h_c
    com = 1.0 if h_k == 0 else 1.0 - h_k_given_c / h_k
    return 0.0 if hom + com == 0 else 2.0 * hom * com / (hom + com)


def accuracy(pred: Sequence, gold: Sequence) -> float:
    if len(pred) != len(gold):
        raise ValueError("accuracy needs equal-length inputs")
    if not len(gold):
        return 0.0
    return float(np.mean([p == g for p, g in zip(pred, gold)]))


# ---------------------------------------------------------------- task runners


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{n}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no records")
    return rows


def _vec(emb: dict[str, np.ndarray], key) -> np.ndarray:
    try:
        return emb[str(key)]
    except KeyError:
        raise DataError(f"embedding missing for id {key!r}") from None


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def _ranked(emb, row) -> np.ndarray:
    q = _vec(emb, row["query_id"])
    cands = row["candidate_ids"]
    rel = np.asarray(row["relevance"], dtype=np.float64)
    if len(cands) != rel.size:
        raise DataError(f"query {row['query_id']!r}: candidate_ids and relevance differ in length")
    sims = np.array([_cos(q, _vec(emb, c)) for c in cands])
    order = np.argsort(-sims, kind="stable")
    return rel[order]


def kmeans_labels(x: np.ndarray, n_clusters: int, seed: int = 0) -> np.ndarray:
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=50, max_iter=100,
                random_state=seed)
    return km.fit_predict(x)


def knn_predict(x: np.ndarray, labels: Sequence, k: int = 5) -> list:
    """Leave-one-out k-NN under cosine similarity; ties go to the larger summed similarity."""
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    sims = unit @ unit.T
    np.fill_diagonal(sims, -np.inf)
    preds = []
    for i in range(len(labels)):
        nn = np.argsort(-sims[i], kind="stable")[:min(k, len(labels) - 1)]
        votes = Counter(labels[j] for j in nn)
        weight = Counter()
        for j in nn:
            weight[labels[j]] += sims[i, j]
        preds.append(max(votes, key=lambda lab: (votes[lab], weight[lab])))
    return preds


def run_task(task: str, embeddings: dict[str, np.ndarray], labels: str | Path | list[dict],
             seed: int = 0) -> float:
    rows = _read_jsonl(labels) if isinstance(labels, (str, Path)) else labels
    try:
        if task == "sts":
            sims = [_cos(_vec(embeddings, r["id1"]), _vec(embeddings, r["id2"])) for r in rows]
            return spearman(sims, [float(r["score"]) for r in rows])
        if task == "retrieval":
            return float(np.mean([ndcg_at_k(_ranked(embeddings, r), 10) for r in rows]))
        if task == "rerank":
            return mean_average_precision([_ranked(embeddings, r) for r in rows])
        if task in ("clustering", "classify"):
            x = np.stack([_vec(embeddings, r["id"]) for r in rows])
            gold = [r["label"] for r in rows]
            if task == "clustering":
                pred = kmeans_labels(x, len(set(map(str, gold))), seed)
                return v_measure(gold, pred)
            return accuracy(knn_predict(x, gold), gold)
    except KeyError as exc:
        raise DataError(f"label record missing field {exc}") from None
    raise ValueError(f"unknown task {task!r}")


def format_score(task: str, value: float) -> str:
    return f"{task},{TASK_METRIC[task]},{value:.6f}"
