"""Stage loops: pretext (rc / nll / ctkd), unsupervised and supervised contrastive."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import StageConfig
from .contrastive import load_triples, scl_loss, ucl_loss
from .data import epoch_batches, load_corpus, read_lines
from .errors import ConfigError, DataError
from .model import ModelPair, TransformerModel, init_base
from .optim import AdamWState, adamw_step, clip_grad_norm, lr_schedule
from .pretext import pretext_loss
from .tensor import Tensor

log = logging.getLogger(__name__)

MAX_GRAD_NORM = 1.0


class TrainingError(RuntimeError):
    pass


@dataclass
class StageResult:
    pair: ModelPair
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    def log_csv(self) -> str:
        rows = ["step,lr,loss"]
        rows += [f"{i},{lr!r},{loss!r}" for i, (lr, loss) in enumerate(zip(self.lrs, self.losses))]
        return "\n".join(rows) + "\n"


def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent generators for init, data order, splits and dropout."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))


def stage_lr(step: int, cfg: StageConfig) -> float:
    return lr_schedule(step, cfg.steps, cfg.lr, cfg.min_lr, cfg.warmup_steps)


def fit_base_lm(base: TransformerModel, sequences: list[list[int]], steps: int, lr: float,
                rng: np.random.Generator, batch_size: int = 8) -> list[float]:
    """Fit the base decoder as a causal LM so the frozen teacher is not a random network."""
    params = [w for _, w in sorted(base.weights.items())]
    for p in params:
        p.requires_grad = True
    state = AdamWState.for_params(params)
    batches = epoch_batches(len(sequences), batch_size, rng)
    graph = T.Graph()
    losses = []
    try:
        for step in range(steps):
            lr_t = lr_schedule(step, steps, lr, lr / 10, max(1, steps // 10))
            with graph:
                terms = []
                for i in next(batches):
                    seq = sequences[i]
                    out = base.forward(seq[:-1], mask_mode="causal")
                    terms.append(T.cross_entropy(out.logits, np.asarray(seq[1:])).mean())
                loss = T.stack(terms).mean()
                T.backward(graph, loss)
            grads, _ = clip_grad_norm([_grad(p) for p in params], MAX_GRAD_NORM)
            adamw_step(params, grads, state, lr_t, 0.0)
            graph.reset()
            T.zero_grad(params)
            losses.append(loss.item())
    finally:
        for p in params:
            p.requires_grad = False
            p.grad = None
    return losses


def _grad(p: Tensor) -> np.ndarray:
    return np.zeros_like(p.data) if p.grad is None else p.grad


def build_pair(cfg: StageConfig, init_rng: np.random.Generator,
               base_sequences: list[list[int]] | None = None) -> ModelPair:
    if cfg.init_checkpoint:
        return load_checkpoint(cfg.init_checkpoint, expected=cfg.model)
    base = init_base(cfg.model, init_rng)
    if cfg.base_lm_steps > 0:
        if not base_sequences:
            raise DataError("base LM fitting needs a token corpus")
        fit_base_lm(base, base_sequences, cfg.base_lm_steps, cfg.base_lm_lr, init_rng)
    return ModelPair.fresh(base, init_rng)


def _loss_fn(cfg: StageConfig, data_path: str | None) -> tuple[Callable, int, list | None]:
    """(batch -> loss, dataset size, token sequences usable for base fitting)."""
    path = data_path or cfg.data_path
    if not path:
        raise ConfigError("no data_path given")
    max_tokens = cfg.model.max_seq_len - cfg.model.n_memory_tokens
    if cfg.stage == "pretext":
        corpus = load_corpus(path, max_tokens, min_tokens=1 if cfg.objective == "rc" else 4)
        seqs = corpus.sequences

        def loss(pair, batch, split_rng, drop_rng):
            terms = [pretext_loss(cfg.objective, pair.encoder, pair.teacher, seqs[i], split_rng,
                                  cfg.ctkd_mode, cfg.dropout_rate) for i in batch]
            return T.stack(terms).mean()

        return loss, len(seqs), seqs
    if cfg.stage == "ucl":
        if cfg.dropout_rate <= 0:
            raise ConfigError("ucl needs dropout_rate > 0")
        texts = read_lines(path)
        if not texts:
            raise DataError(f"{path}: no texts")

        def loss(pair, batch, split_rng, drop_rng):
            return ucl_loss(pair.encoder, [texts[i] for i in batch], drop_rng, cfg.tau,
                            cfg.dropout_rate)

        from .tokenizer import tokenize
        return loss, len(texts), [tokenize(t)[:max_tokens] for t in texts]
    triples = load_triples(path)

    def loss(pair, batch, split_rng, drop_rng):
        return scl_loss(pair.encoder, [triples[i] for i in batch], cfg.tau)

    return loss, len(triples), None


def train_stage(cfg: StageConfig, out: str | Path | None = None,
                data_path: str | None = None) -> StageResult:
    """Run one stage; writes ``out`` and ``<out>.log.csv`` when ``out`` is given."""
    init_rng, order_rng, split_rng, drop_rng = _streams(cfg.seed)
    loss_fn, n_items, seqs = _loss_fn(cfg, data_path)
    pair = build_pair(cfg, init_rng, seqs)
    params = pair.encoder.trainable()
    state = AdamWState.for_params(params)
    batches = epoch_batches(n_items, cfg.batch_size, order_rng)
    result = StageResult(pair)
    graph = T.Graph()
    for step in range(cfg.steps):
        lr_t = stage_lr(step, cfg)
        try:
            with graph:
                loss = loss_fn(pair, next(batches), split_rng, drop_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise FloatingPointError("non-finite loss")
                T.backward(graph, loss)
            grads, norm = clip_grad_norm([_grad(p) for p in params], MAX_GRAD_NORM)
            adamw_step(params, grads, state, lr_t, cfg.weight_decay)
        except (FloatingPointError, T.DomainError) as exc:
            _dump_diagnostics(out, step, lr_t, params, exc)
            raise TrainingError(f"step {step}: {exc}") from exc
        finally:
            graph.reset()
            T.zero_grad(params)
        result.losses.append(value)
        result.lrs.append(lr_t)
        if step % 25 == 0 or step == cfg.steps - 1:
            log.info("%s step %d lr %.3g loss %.5f grad-norm %.3f", cfg.stage, step, lr_t, value, norm)
    if out is not None:
        save_checkpoint(pair, out)
        Path(f"{out}.log.csv").write_text(result.log_csv())
    return result


def _dump_diagnostics(out, step, lr_t, params, exc) -> None:
    info = {"step": step, "lr": lr_t, "error": str(exc),
            "param_norms": {p.name or str(i): float(np.linalg.norm(p.data))
                            for i, p in enumerate(params)}}
    target = Path(f"{out}.diag.json") if out is not None else None
    if target is not None:
        target.write_text(json.dumps(info, indent=2))
    log.error("training aborted: %s", json.dumps(info)[:2000])
