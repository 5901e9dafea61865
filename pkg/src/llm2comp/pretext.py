"""Compression pretext objectives: reconstruction, continuation NLL and continuation KD.

The encoder compresses a context into ``k`` memory vectors; the frozen teacher
consumes those vectors as a soft prefix in place of the original tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import tensor as T
from .model import SequenceLengthError, TransformerModel
from .tensor import Tensor

CtkdMode = Literal["full_kl", "token_ratio"]


@dataclass
class MemoryEncoding:
    memory: Tensor  # [k, d_model]
    pooled: Tensor  # [d_model]
    source_len: int


@dataclass
class SplitExample:
    prefix: list[int]
    continuation: list[int]

    def __post_init__(self):
        if len(self.prefix) < 1 or len(self.continuation) < 1:
            raise ValueError("split needs a nonempty prefix and continuation")

    @property
    def a(self) -> int:
        return len(self.prefix)

    @property
    def tokens(self) -> list[int]:
        return self.prefix + self.continuation


def encode_memory(encoder: TransformerModel, context, dropout_active: bool = False,
                  rng: np.random.Generator | None = None,
                  dropout_rate: float | None = None,
                  row_invariant: bool = False) -> MemoryEncoding:
    """Run the encoder once over ``context ‖ m_1..m_k`` and read the memory positions.

    With a causal encoder and ``row_invariant=True``, m̃_i is bit-identical to
    running the encoder separately on ``context ‖ m_1..m_i``.
    """
    context = [int(t) for t in context]
    mem_ids = encoder.memory_ids
    k, a = len(mem_ids), len(context)
    if a + k > encoder.config.max_seq_len:
        raise SequenceLengthError(f"context of {a} plus {k} memory tokens exceeds max_seq_len")
    out = encoder.forward(context + mem_ids, dropout_active=dropout_active, rng=rng,
                          dropout_rate=dropout_rate, with_logits=False,
                          row_invariant=row_invariant)
    memory = out.hidden[a:a + k]
    return MemoryEncoding(memory, T.mean(memory, axis=0), a)


def _student_logits(teacher: TransformerModel, memory: Tensor, targets: list[int]) -> Tensor:
    """Teacher logits predicting each of ``targets`` given the soft prefix and the earlier targets."""
    k = memory.shape[0]
    out = teacher.forward(targets[:-1], mask_mode="causal", soft_prefix=memory)
    return out.logits[k - 1:]


def reconstruction_loss(encoder: TransformerModel, teacher: TransformerModel, context,
                        dropout_active: bool = False, rng: np.random.Generator | None = None,
                        dropout_rate: float | None = None) -> Tensor:
    context = [int(t) for t in context]
    if not context:
        raise ValueError("reconstruction needs a nonempty context")
    enc = encode_memory(encoder, context, dropout_active, rng, dropout_rate)
    logits = _student_logits(teacher, enc.memory, context)
    return T.cross_entropy(logits, np.asarray(context)).mean()


def continuation_nll_loss(encoder: TransformerModel, teacher: TransformerModel,
                          ex: SplitExample, dropout_active: bool = False,
                          rng: np.random.Generator | None = None,
                          dropout_rate: float | None = None) -> Tensor:
    enc = encode_memory(encoder, ex.prefix, dropout_active, rng, dropout_rate)
    logits = _student_logits(teacher, enc.memory, ex.continuation)
    return T.cross_entropy(logits, np.asarray(ex.continuation)).mean()


def teacher_continuation_logits(teacher: TransformerModel, ex: SplitExample) -> np.ndarray:
    """Teacher logits for every continuation token given the full original prefix (no tape)."""
    full = ex.tokens
    with T.no_grad():
        out = teacher.forward(full[:-1], mask_mode="causal")
    return out.logits.data[ex.a - 1:]


def ctkd_loss(encoder: TransformerModel, teacher: TransformerModel, ex: SplitExample,
              mode: CtkdMode = "full_kl", dropout_active: bool = False,
              rng: np.random.Generator | None = None,
              dropout_rate: float | None = None, memory: Tensor | None = None) -> Tensor:
    """Mean over continuation positions of KL(p_teacher ‖ p_student).

    ``memory`` overrides the encoder output (used to probe the objective with
    hand-built soft prefixes). ``mode="token_ratio"`` instead averages the
    log-ratio of the two distributions at the ground-truth token.
    """
    if memory is None:
        memory = encode_memory(encoder, ex.prefix, dropout_active, rng, dropout_rate).memory
    t_logits = Tensor(teacher_continuation_logits(teacher, ex))
    s_logits = _student_logits(teacher, memory, ex.continuation)
    if mode == "full_kl":
        with T.no_grad():
            p_t = T.softmax(t_logits)
        return T.kl_divergence(p_t, T.softmax(s_logits)).mean()
    if mode == "token_ratio":
        targets = np.asarray(ex.continuation)
        rows = np.arange(targets.size)
        with T.no_grad():
            lp_t = T.log_softmax(t_logits).data[rows, targets]
        lp_s = T.log_softmax(s_logits)[rows, targets]
        return (Tensor(lp_t) - lp_s).mean()
    raise ValueError(f"unknown ctkd mode {mode!r}")


def split_prefix_continuation(seq, rng: np.random.Generator) -> SplitExample:
    """Split with prefix length drawn uniformly from [ceil(L/4), floor(3L/4)]."""
    seq = [int(t) for t in seq]
    n = len(seq)
    if n < 4:
        raise ValueError(f"sequence of length {n} is too short to split")
    a = int(rng.integers(math.ceil(n / 4), (3 * n) // 4 + 1))
    return SplitExample(seq[:a], seq[a:])


def pretext_loss(objective: str, encoder: TransformerModel, teacher: TransformerModel,
                 seq, rng: np.random.Generator, ctkd_mode: CtkdMode = "full_kl",
                 dropout_rate: float = 0.0) -> Tensor:
    """Per-example loss for one pretext objective (``rc``, ``nll`` or ``ctkd``)."""
    drop = dropout_rate > 0.0
    if objective == "rc":
        return reconstruction_loss(encoder, teacher, seq, drop, rng, dropout_rate)
    ex = split_prefix_continuation(seq, rng)
    if objective == "nll":
        return continuation_nll_loss(encoder, teacher, ex, drop, rng, dropout_rate)
    if objective == "ctkd":
        return ctkd_loss(encoder, teacher, ex, ctkd_mode, drop, rng, dropout_rate)
    raise ValueError(f"unknown objective {objective!r}")
