"""Sentence embeddings from memory tokens, and the JSONL / binary dump formats."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import tensor as T
from .model import TransformerModel
from .pretext import encode_memory
from .tensor import ContractError, Tensor
from .tokenizer import tokenize

BINARY_MAGIC = b"L2CE"
BINARY_VERSION = 1


class EmptyInputError(ValueError):
    pass


@dataclass
class EmbeddingRecord:
    id: str
    vector: Tensor
    norm: float

    @classmethod
    def of(cls, id: str, vector: Tensor) -> "EmbeddingRecord":
        return cls(id, vector, float(np.linalg.norm(vector.data)))


def mean_pool(memory: Tensor) -> Tensor:
    if memory.ndim != 2 or memory.shape[0] < 1:
        raise ContractError("mean_pool needs a nonempty [k, d] matrix")
    return T.mean(memory, axis=0)


def pool_effective(memory: Tensor, keep) -> Tensor:
    """Mean over the rows listed in ``keep`` only."""
    idx = sorted(set(int(i) for i in keep))
    if not idx:
        raise ContractError("pool_effective needs at least one kept row")
    if idx[0] < 0 or idx[-1] >= memory.shape[0]:
        raise ContractError(f"kept rows {idx} outside 0..{memory.shape[0] - 1}")
    return T.mean(memory[np.asarray(idx)], axis=0)


def text_tokens(encoder: TransformerModel, text: bytes | str) -> list[int]:
    raw = text.encode("utf-8") if isinstance(text, str) else text
    if not raw:
        raise EmptyInputError("cannot embed empty text")
    ids = tokenize(raw)
    room = encoder.config.max_seq_len - encoder.config.n_memory_tokens
    return ids[:room]


def embed_memory(encoder: TransformerModel, text: bytes | str, dropout_active: bool = False,
                 rng: np.random.Generator | None = None,
                 dropout_rate: float | None = None) -> Tensor:
    return encode_memory(encoder, text_tokens(encoder, text), dropout_active, rng,
                         dropout_rate).memory


def embed_text(encoder: TransformerModel, text: bytes | str, dropout_active: bool = False,
               rng: np.random.Generator | None = None, id: str = "",
               dropout_rate: float | None = None) -> EmbeddingRecord:
    memory = embed_memory(encoder, text, dropout_active, rng, dropout_rate)
    return EmbeddingRecord.of(id, mean_pool(memory))


def embed_corpus(encoder: TransformerModel, texts: Iterable[tuple[str, str]]) -> list[EmbeddingRecord]:
    with T.no_grad():
        return [embed_text(encoder, text, id=i) for i, text in texts]


# ---------------------------------------------------------------- dumps


def write_jsonl(records: Iterable[EmbeddingRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "vector": r.vector.data.tolist()}) + "\n")


def read_jsonl(path: str | Path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if not isinstance(obj.get("id"), str) or not isinstance(obj.get("vector"), list):
                raise ValueError(f"{path}:{n}: expected fields 'id' and 'vector'")
            out[obj["id"]] = np.asarray(obj["vector"], dtype=np.float64)
    return out


def write_binary(records: list[EmbeddingRecord], path: str | Path) -> None:
    d = records[0].vector.shape[0] if records else 0
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC + struct.pack("<IIQ", BINARY_VERSION, d, len(records)))
        for r in records:
            key = r.id.encode("utf-8")
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(np.asarray(r.vector.data, dtype="<f4").tobytes())


def read_binary(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != BINARY_MAGIC:
        raise ValueError("not an embedding dump (bad magic)")
    version, d, count = struct.unpack_from("<IIQ", blob, 4)
    if version != BINARY_VERSION:
        raise ValueError(f"unsupported embedding dump version {version}")
    pos, out = 20, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        key = blob[pos:pos + n].decode("utf-8")
        pos += n
        out[key] = np.frombuffer(blob, dtype="<f4", count=d, offset=pos).astype(np.float64)
        pos += 4 * d
    if pos != len(blob):
        raise ValueError("embedding dump has trailing or missing bytes")
    return out


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_binary(path) if head == BINARY_MAGIC else read_jsonl(path)
