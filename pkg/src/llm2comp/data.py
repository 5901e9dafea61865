"""Corpus ingestion and seeded epoch-wise batch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataError
from .tokenizer import tokenize


@dataclass
class Corpus:
    texts: list[str]
    sequences: list[list[int]]


def read_lines(path: str | Path) -> list[str]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not UTF-8: {exc}") from exc
    return [line for line in text.split("\n") if line.strip()]


def load_corpus(path: str | Path, max_tokens: int, min_tokens: int = 1) -> Corpus:
    """One document per line, tokenized and right-truncated to ``max_tokens``."""
    texts, seqs = [], []
    for line in read_lines(path):
        ids = tokenize(line)[:max_tokens]
        if len(ids) >= min_tokens:
            texts.append(line)
            seqs.append(ids)
    if not seqs:
        raise DataError(f"{path}: no usable documents")
    return Corpus(texts, seqs)


def read_texts(path: str | Path) -> list[tuple[str, str]]:
    """``id<TAB>text`` lines; lines without a tab get their 0-based line number as id."""
    out = []
    for n, line in enumerate(read_lines(path)):
        key, sep, text = line.partition("\t")
        out.append((key, text) if sep else (str(n), line))
    return out


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[list[int]]:
    """Endless batches drawn without replacement within each shuffled epoch."""
    if n < 1:
        raise DataError("cannot sample from an empty dataset")
    order = rng.permutation(n)
    pos = 0
    while True:
        batch = []
        while len(batch) < batch_size:
            if pos == n:
                order, pos = rng.permutation(n), 0
            batch.append(int(order[pos]))
            pos += 1
        yield batch
