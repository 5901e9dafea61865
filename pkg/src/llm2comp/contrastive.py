"""InfoNCE post-training: dropout positives (unsupervised) and labeled triples (supervised)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .embedder import embed_memory, mean_pool
from .model import TransformerModel
from .errors import DataError
from .tensor import ContractError, DomainError, Tensor

DEFAULT_TAU = 0.05


@dataclass
class ContrastiveBatch:
    anchors: Tensor  # [B, d]
    positives: Tensor  # [B, d]
    hard_negatives: Tensor | None = None  # [B, H, d]
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.anchors.ndim != 2 or self.anchors.shape != self.positives.shape:
            raise T.ShapeError("anchors and positives must both be [B, d]")
        if self.hard_negatives is not None:
            b, d = self.anchors.shape
            if self.hard_negatives.ndim != 3 or self.hard_negatives.shape[0] != b \
                    or self.hard_negatives.shape[2] != d:
                raise T.ShapeError("hard_negatives must be [B, H, d]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class SupervisedTriple:
    query: str
    positive: str
    negatives: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.query or not self.positive:
            raise DataError("query and positive must be nonempty")


def cosine_sim(u, v) -> float:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu <= 1e-12 or nv <= 1e-12:
        raise DomainError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _unit_rows(x: Tensor) -> Tensor:
    norms = T.sqrt(T.sum_(x * x, axis=-1, keepdims=True))
    if np.any(norms.data <= 1e-12):
        raise DomainError("cosine similarity of a zero vector")
    return x / norms


def infonce_loss(batch: ContrastiveBatch, anchor_negatives: bool = True,
                 include_self: bool = False) -> Tensor:
    """Mean over anchors of −log softmax at the anchor's own positive.

    Candidates for anchor i: every positive, plus (``anchor_negatives``) every
    other anchor, plus anchor i's own hard negatives. ``include_self`` keeps
    sim(z_i, z_i) in the denominator.
    """
    b = batch.anchors.shape[0]
    if b == 0:
        raise ContractError("empty contrastive batch")
    za = _unit_rows(batch.anchors)
    zp = _unit_rows(batch.positives)
    pool = T.concat([za, zp], axis=0) if anchor_negatives else zp
    logits = T.matmul(za, pool.T) * (1.0 / batch.tau)
    keep = np.ones(logits.shape, dtype=bool)
    if anchor_negatives and not include_self:
        keep[np.arange(b), np.arange(b)] = False
    if batch.hard_negatives is not None and batch.hard_negatives.shape[1] > 0:
        zh = _unit_rows(batch.hard_negatives)
        hard = T.sum_(T.reshape(za, (b, 1, -1)) * zh, axis=-1) * (1.0 / batch.tau)
        logits = T.concat([logits, hard], axis=1)
        keep = np.concatenate([keep, np.ones(hard.shape, dtype=bool)], axis=1)
    target = np.arange(b) + (b if anchor_negatives else 0)
    logp = T.log_softmax(logits, axis=-1, mask=keep)
    return -T.mean(logp[np.arange(b), target])


def make_ucl_pair(encoder: TransformerModel, text: str, rng: np.random.Generator,
                  dropout_rate: float | None = None) -> tuple[Tensor, Tensor]:
    """Two pooled embeddings of ``text`` under independent dropout masks."""
    z1 = mean_pool(embed_memory(encoder, text, True, rng, dropout_rate))
    z2 = mean_pool(embed_memory(encoder, text, True, rng, dropout_rate))
    return z1, z2


def ucl_loss(encoder: TransformerModel, texts: Sequence[str], rng: np.random.Generator,
             tau: float = DEFAULT_TAU, dropout_rate: float | None = None) -> Tensor:
    pairs = [make_ucl_pair(encoder, t, rng, dropout_rate) for t in texts]
    batch = ContrastiveBatch(T.stack([p[0] for p in pairs]), T.stack([p[1] for p in pairs]),
                             tau=tau)
    return infonce_loss(batch)


def scl_loss(encoder: TransformerModel, triples: Sequence[SupervisedTriple],
             tau: float = DEFAULT_TAU) -> Tensor:
    """In-batch positives plus each query's own hard negatives; dropout off."""
    if not triples:
        raise ContractError("scl_loss needs at least one triple")

    def emb(text):
        return mean_pool(embed_memory(encoder, text))

    queries = T.stack([emb(t.query) for t in triples])
    positives = T.stack([emb(t.positive) for t in triples])
    # ragged batches are cut to the smallest hard-negative count
    h = min(len(t.negatives) for t in triples)
    hard = None
    if h:
        hard = T.stack([T.stack([emb(n) for n in t.negatives[:h]]) for t in triples])
    return infonce_loss(ContrastiveBatch(queries, positives, hard, tau), anchor_negatives=False)


def load_triples(path: str | Path) -> list[SupervisedTriple]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                triple = SupervisedTriple(obj["query"], obj["positive"], list(obj.get("negatives", [])))
            except (json.JSONDecodeError, KeyError, TypeError, DataError) as exc:
                raise DataError(f"{path}:{n}: bad triple ({exc})") from exc
            out.append(triple)
    if not out:
        raise DataError(f"{path}: no triples")
    return out
