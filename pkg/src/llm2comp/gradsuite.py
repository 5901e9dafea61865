"""Finite-difference check of every training loss on a tiny model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .contrastive import ContrastiveBatch, infonce_loss
from .model import ModelPair, init_base
from .pretext import (SplitExample, continuation_nll_loss, ctkd_loss, encode_memory,
                      reconstruction_loss)
from .tensor import Tensor, grad_check

SUITE_CONFIG = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, base_vocab=28,
                           n_memory_tokens=4, max_seq_len=32, lora_rank=4, lora_alpha=8.0)
TOLERANCE = 1e-3


@dataclass
class GradResult:
    loss: str
    tensor: str
    max_rel_error: float


def suite_pair(seed: int) -> ModelPair:
    """Tiny pair (total vocab 32) with nonzero LoRA B so every adapter path carries gradient."""
    rng = np.random.default_rng(seed)
    pair = ModelPair.fresh(init_base(SUITE_CONFIG, rng), rng)
    for _, b in pair.encoder.lora.pairs.values():
        b.data[...] = rng.normal(0.0, 0.1, b.data.shape)
    return pair


def _probe_tensors(pair: ModelPair) -> dict[str, Tensor]:
    lora = pair.encoder.lora.pairs
    return {"embed": pair.encoder.weights["embed"], "lora.0.q.A": lora[(0, "q")][0],
            "lora.1.v.B": lora[(1, "v")][1], "lora.0.down.A": lora[(0, "down")][0],
            "lora.1.gate.B": lora[(1, "gate")][1]}


def run_suite(seed: int = 0) -> list[GradResult]:
    pair = suite_pair(seed)
    enc, teacher = pair.encoder, pair.teacher
    rng = np.random.default_rng(seed + 1)
    v = SUITE_CONFIG.base_vocab
    seq = [int(t) for t in rng.integers(0, v, 10)]
    ex = SplitExample(seq[:4], seq[4:])
    # byte texts do not fit a 32-token vocabulary, so the contrastive path pools token ids directly
    docs = [[int(t) for t in rng.integers(0, v, n)] for n in (3, 4, 5, 2, 4, 3)]

    def model_infonce(_):
        z = [encode_memory(enc, d).pooled for d in docs]
        batch = ContrastiveBatch(T.stack([z[0], z[3]]), T.stack([z[1], z[4]]),
                                 T.stack([T.stack([z[2]]), T.stack([z[5]])]), tau=0.5)
        return infonce_loss(batch, anchor_negatives=False)

    losses: dict[str, Callable[[Tensor], Tensor]] = {
        "rc": lambda _: reconstruction_loss(enc, teacher, seq[:6]),
        "nll": lambda _: continuation_nll_loss(enc, teacher, ex),
        "ctkd_full_kl": lambda _: ctkd_loss(enc, teacher, ex, "full_kl"),
        "ctkd_token_ratio": lambda _: ctkd_loss(enc, teacher, ex, "token_ratio"),
        "infonce_model": model_infonce,
    }
    results = []
    for name, f in losses.items():
        for tname, t in _probe_tensors(pair).items():
            results.append(GradResult(name, tname, grad_check(f, t)))

    # raw InfoNCE against its inputs, B=2 with one hard negative each
    za = Tensor(rng.normal(size=(2, 6)))
    zp = Tensor(rng.normal(size=(2, 6)))
    zh = Tensor(rng.normal(size=(2, 1, 6)))
    for tname, t in (("anchors", za), ("positives", zp), ("hard_negatives", zh)):
        f = lambda _: infonce_loss(ContrastiveBatch(za, zp, zh, tau=0.5))
        results.append(GradResult("infonce", tname, grad_check(f, t)))
    return results


def summarize(results: list[GradResult]) -> dict[str, float]:
    out: dict[str, float] = {}
    for r in results:
        out[r.loss] = max(out.get(r.loss, 0.0), r.max_rel_error)
    return out
