"""Toy Llama-style decoder used both as the frozen teacher and as the LoRA encoder.

Pre-norm RMS blocks, rotary positions, SwiGLU MLP. The teacher and the encoder
share the per-layer weight tensors; the encoder owns a trainable embedding
table widened by ``k`` memory-token rows and a set of LoRA adapters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigError
from .tensor import ContractError, Tensor

MaskMode = Literal["causal", "bidirectional"]
LORA_TARGETS = ("q", "v", "o", "up", "down", "gate")
_PROJ = {"q": "wq", "k": "wk", "v": "wv", "o": "wo", "up": "w_up", "down": "w_down", "gate": "w_gate"}


class SequenceLengthError(ValueError):
    pass


@dataclass
class LoraSet:
    rank: int
    alpha: float
    pairs: dict[tuple[int, str], tuple[Tensor, Tensor]]

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def parameters(self) -> list[Tensor]:
        out = []
        for key in sorted(self.pairs):
            out.extend(self.pairs[key])
        return out


@dataclass
class ForwardOutput:
    hidden: Tensor
    logits: Optional[Tensor]


@lru_cache(maxsize=64)
def _rope_tables(start: int, n: int, d_head: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    inv_freq = theta ** (-np.arange(0, d_head, 2, dtype=np.float64) / d_head)
    angles = np.arange(start, start + n, dtype=np.float64)[:, None] * inv_freq[None, :]
    angles = np.concatenate([angles, angles], axis=-1)
    return np.cos(angles), np.sin(angles)


@lru_cache(maxsize=64)
def _causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def attention(q: Tensor, k: Tensor, v: Tensor, mask_mode: MaskMode = "causal",
              dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Scaled dot-product attention over ``[..., seq, d_head]`` inputs."""
    n, d_head = q.shape[-2], q.shape[-1]
    if k.shape[-2] != n or v.shape[-2] != n:
        raise T.ShapeError("attention inputs disagree on sequence length")
    scores = T.matmul(q, T.transpose(k, _swap_last(k.ndim))) * (1.0 / np.sqrt(d_head))
    mask = _causal_mask(n) if mask_mode == "causal" else None
    weights = T.softmax(scores, axis=-1, mask=mask)
    if dropout_rate > 0.0:
        weights = T.dropout(weights, dropout_rate, rng)
    return T.matmul(weights, v)


def causal_attention_rows(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Causal attention computed one query position at a time over exactly its visible keys.

    Every row's arithmetic (operand shapes, reduction lengths) depends only on its
    position, never on how many later positions exist, so a prefix of the output is
    bit-identical to the output for that prefix alone.
    """
    n, d_head = q.shape[-2], q.shape[-1]
    scale = 1.0 / np.sqrt(d_head)
    rows = []
    for p in range(n):
        kp, vp = k[:, :p + 1, :], v[:, :p + 1, :]
        s = T.matmul(q[:, p:p + 1, :], T.transpose(kp, (0, 2, 1))) * scale
        rows.append(T.matmul(T.softmax(s, axis=-1), vp))
    return T.concat(rows, axis=1)


def linear_rows(x: Tensor, weight: Tensor) -> Tensor:
    """``linear`` applied row by row so each output row is independent of the row count."""
    return T.concat([T.linear(x[i:i + 1], weight) for i in range(x.shape[0])], axis=0)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class TransformerModel:
    """A decoder with named weights; ``lora is None`` means teacher role."""

    def __init__(self, config: ModelConfig, weights: dict[str, Tensor],
                 lora: LoraSet | None = None, extended: bool = False):
        self.config = config
        self.weights = weights
        self.lora = lora
        self.extended = extended

    @property
    def role(self) -> str:
        return "teacher" if self.lora is None else "encoder"

    @property
    def vocab_size(self) -> int:
        return self.weights["embed"].shape[0]

    @property
    def memory_ids(self) -> list[int]:
        if not self.extended:
            raise ContractError("memory tokens exist only after extend_vocab")
        base = self.config.base_vocab
        return list(range(base, base + self.config.n_memory_tokens))

    def trainable(self) -> list[Tensor]:
        """Trainables in a fixed order: embedding table first, then LoRA pairs."""
        params = [w for _, w in sorted(self.weights.items()) if w.requires_grad]
        if self.lora is not None:
            params += self.lora.parameters()
        return params

    # ------------------------------------------------------------ projections

    def lora_forward(self, x: Tensor, layer: int, target: str,
                     row_invariant: bool = False) -> Tensor:
        """``W·x + (alpha/r)·B·(A·x)`` for a LoRA-adapted projection."""
        if self.lora is None or (layer, target) not in self.lora.pairs:
            raise ConfigError(f"no LoRA adapter for layer {layer} target {target!r}")
        lin = linear_rows if row_invariant else T.linear
        a, b = self.lora.pairs[(layer, target)]
        base = lin(x, self.weights[f"layers.{layer}.{_PROJ[target]}"])
        return base + lin(lin(x, a), b) * self.lora.scale

    def _proj(self, x: Tensor, layer: int, target: str, row_invariant: bool = False) -> Tensor:
        if self.lora is not None and (layer, target) in self.lora.pairs:
            return self.lora_forward(x, layer, target, row_invariant)
        lin = linear_rows if row_invariant else T.linear
        return lin(x, self.weights[f"layers.{layer}.{_PROJ[target]}"])

    # ------------------------------------------------------------ forward

    def forward(self, tokens, mask_mode: MaskMode | None = None,
                soft_prefix: Tensor | None = None, dropout_active: bool = False,
                rng: np.random.Generator | None = None, dropout_rate: float | None = None,
                with_logits: bool = True, row_invariant: bool = False) -> ForwardOutput:
        """Final-norm hidden states (and logits) for ``soft_prefix ‖ embed(tokens)``.

        ``row_invariant`` (causal only) trades speed for bit-exact prefix
        consistency: hidden row i is identical whether or not later tokens follow.
        """
        cfg = self.config
        ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
        p = 0 if soft_prefix is None else soft_prefix.shape[0]
        n = p + ids.size
        if n == 0:
            raise SequenceLengthError("empty input")
        if n > cfg.max_seq_len:
            raise SequenceLengthError(f"sequence of {n} exceeds max_seq_len {cfg.max_seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError(f"token id outside vocabulary of {self.vocab_size}")
        if mask_mode is None:
            mask_mode = "causal" if self.lora is None else cfg.encoder_mask
        rate = cfg.dropout_rate if dropout_rate is None else dropout_rate
        rate = rate if dropout_active else 0.0
        if rate > 0.0 and rng is None:
            raise ContractError("dropout needs an rng")
        if row_invariant and (mask_mode != "causal" or rate > 0.0):
            raise ContractError("row_invariant needs causal attention without dropout")

        parts = []
        if p:
            if soft_prefix.shape[-1] != cfg.d_model:
                raise T.ShapeError("soft prefix width differs from d_model")
            parts.append(soft_prefix)
        if ids.size:
            parts.append(self.weights["embed"][ids])
        x = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)

        h_, dh = cfg.n_heads, cfg.d_head
        cos, sin = _rope_tables(1, n, dh, cfg.rope_theta)
        w = self.weights
        for i in range(cfg.n_layers):
            h = T.rms_norm(x, w[f"layers.{i}.attn_norm"])
            ri = row_invariant
            q = self._split_heads(self._proj(h, i, "q", ri), n)
            k = self._split_heads(self._proj(h, i, "k", ri), n)
            v = self._split_heads(self._proj(h, i, "v", ri), n)
            q, k = T.rope(q, cos, sin), T.rope(k, cos, sin)
            if ri:
                att = causal_attention_rows(q, k, v)
            else:
                att = attention(q, k, v, mask_mode, rate, rng)
            att = T.transpose(att, (1, 0, 2)).reshape(n, h_ * dh)
            x = x + self._proj(att, i, "o", ri)
            h = T.rms_norm(x, w[f"layers.{i}.mlp_norm"])
            f = T.silu(self._proj(h, i, "gate", ri)) * self._proj(h, i, "up", ri)
            if rate > 0.0:
                f = T.dropout(f, rate, rng)
            x = x + self._proj(f, i, "down", ri)
        hidden = T.rms_norm(x, w["final_norm"])
        head = linear_rows if row_invariant else T.linear
        logits = head(hidden, w["lm_head"]) if with_logits else None
        return ForwardOutput(hidden, logits)

    def _split_heads(self, x: Tensor, n: int) -> Tensor:
        return T.transpose(x.reshape(n, self.config.n_heads, self.config.d_head), (1, 0, 2))


def lora_forward(model: TransformerModel, x: Tensor, layer: int, target: str) -> Tensor:
    return model.lora_forward(x, layer, target)


def forward(model: TransformerModel, tokens, mask_mode: MaskMode | None = None,
            soft_prefix: Tensor | None = None, dropout_active: bool = False,
            rng: np.random.Generator | None = None, **kw) -> ForwardOutput:
    return model.forward(tokens, mask_mode, soft_prefix, dropout_active, rng, **kw)


def init_base(config: ModelConfig, rng: np.random.Generator) -> TransformerModel:
    """Random frozen base model over ``base_vocab`` ids (teacher role)."""
    d, f, L = config.d_model, config.d_ff, config.n_layers
    out_scale = 1.0 / np.sqrt(2.0 * L)

    def gauss(shape, std):
        return Tensor(rng.normal(0.0, std, size=shape))

    weights = {"embed": gauss((config.base_vocab, d), 1.0)}
    for i in range(L):
        pre = f"layers.{i}."
        weights[pre + "attn_norm"] = Tensor(np.ones(d))
        for name in ("wq", "wk", "wv"):
            weights[pre + name] = gauss((d, d), 1.0 / np.sqrt(d))
        weights[pre + "wo"] = gauss((d, d), out_scale / np.sqrt(d))
        weights[pre + "mlp_norm"] = Tensor(np.ones(d))
        weights[pre + "w_gate"] = gauss((f, d), 1.0 / np.sqrt(d))
        weights[pre + "w_up"] = gauss((f, d), 1.0 / np.sqrt(d))
        weights[pre + "w_down"] = gauss((d, f), out_scale / np.sqrt(f))
    weights["final_norm"] = Tensor(np.ones(d))
    weights["lm_head"] = gauss((config.base_vocab, d), 1.0 / np.sqrt(d))
    for name, t in weights.items():
        t.name = name
    return TransformerModel(config, weights)


def extend_vocab(model: TransformerModel, k: int, rng: np.random.Generator) -> TransformerModel:
    """Copy of ``model`` whose embedding and logit tables gain ``k`` memory-token rows.

    Layer weights are shared with ``model``; the embedding table is a fresh copy.
    """
    if model.extended:
        raise ContractError("extend_vocab already applied")
    if k < 1:
        raise ContractError("k must be >= 1")
    cfg = model.config.model_copy(update={"n_memory_tokens": k})
    weights = dict(model.weights)
    d = cfg.d_model
    for name in ("embed", "lm_head"):
        old = model.weights[name].data
        rows = rng.normal(0.0, 0.02, size=(k, d))
        weights[name] = Tensor(np.concatenate([old, rows], axis=0), name=name)
    return TransformerModel(cfg, weights, model.lora, extended=True)


def init_lora(config: ModelConfig, rng: np.random.Generator) -> LoraSet:
    r = config.lora_rank
    pairs = {}
    for i in range(config.n_layers):
        for target in LORA_TARGETS:
            d_in, d_out = _proj_dims(config, target)
            a = Tensor(rng.normal(0.0, 1.0 / r, size=(r, d_in)), requires_grad=True,
                       name=f"lora.{i}.{target}.A")
            b = Tensor(np.zeros((d_out, r)), requires_grad=True, name=f"lora.{i}.{target}.B")
            pairs[(i, target)] = (a, b)
    return LoraSet(r, config.lora_alpha, pairs)


def _proj_dims(config: ModelConfig, target: str) -> tuple[int, int]:
    d, f = config.d_model, config.d_ff
    return {"up": (d, f), "gate": (d, f), "down": (f, d)}.get(target, (d, d))


def build_encoder(teacher: TransformerModel, rng: np.random.Generator,
                  k: int | None = None) -> TransformerModel:
    """Encoder role: extended vocab, trainable embedding table, fresh LoRA adapters."""
    if teacher.role != "teacher":
        raise ContractError("build_encoder expects a teacher-role model")
    enc = extend_vocab(teacher, k or teacher.config.n_memory_tokens, rng)
    enc.weights["embed"].requires_grad = True
    enc.lora = init_lora(enc.config, rng)
    return enc


def teacher_view(encoder: TransformerModel, teacher_embed: Tensor) -> TransformerModel:
    """Teacher-role model sharing the encoder's frozen layers and base logit rows."""
    cfg = encoder.config
    weights = dict(encoder.weights)
    weights["embed"] = teacher_embed
    head = encoder.weights["lm_head"].data[: cfg.base_vocab]
    weights["lm_head"] = Tensor(head, name="lm_head")
    return TransformerModel(cfg, weights)


@dataclass
class ModelPair:
    """The trainable encoder and the frozen teacher built from one weight store."""

    encoder: TransformerModel
    teacher: TransformerModel

    @classmethod
    def fresh(cls, base: TransformerModel, rng: np.random.Generator) -> "ModelPair":
        encoder = build_encoder(base, rng)
        return cls(encoder, teacher_view(encoder, base.weights["embed"]))
