"""Command-line entry point: ``l2c <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointFormatError, CheckpointIntegrityError, load_checkpoint
from .config import load_stage_config
from .errors import ConfigError, DataError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("llm2comp")


def _thread_limit() -> int:
    raw = os.environ.get("L2C_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"L2C_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("L2C_THREADS must be >= 1")
    return n


def _train(args, stage: str, **overrides) -> int:
    from .train import train_stage

    cfg = load_stage_config(args.config, **overrides)
    if cfg.stage != stage:
        raise ConfigError(f"config is for stage {cfg.stage!r}, expected {stage!r}")
    result = train_stage(cfg, args.out)
    print(f"{stage}: {cfg.steps} steps, loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f}, "
          f"checkpoint {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    return _train(args, "pretext", objective=args.objective, data_path=args.data)


def cmd_ucl(args) -> int:
    return _train(args, "ucl", init_checkpoint=args.init, data_path=args.data)


def cmd_scl(args) -> int:
    return _train(args, "scl", init_checkpoint=args.init, data_path=args.data)


def cmd_embed(args) -> int:
    from .data import read_texts
    from .embedder import embed_corpus, write_binary, write_jsonl

    pair = load_checkpoint(args.ckpt)
    records = embed_corpus(pair.encoder, read_texts(args.input))
    (write_binary if args.binary else write_jsonl)(records, args.output)
    print(f"embedded {len(records)} texts -> {args.output}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from . import tensor as T
    from .data import read_texts
    from .diagnostics import collapse_report, write_report
    from .embedder import embed_memory

    pair = load_checkpoint(args.ckpt)
    texts = read_texts(args.input)
    if len(texts) < 2:
        raise DataError("diagnose needs at least two texts")
    with T.no_grad():
        memories = [embed_memory(pair.encoder, t).data for _, t in texts]
    pooled = np.stack([m.mean(axis=0) for m in memories])
    report = collapse_report(pooled, memories)
    write_report(report, args.outdir)
    print(f"effective dimension {report.effective_dim}/{pooled.shape[1]}, "
          f"effective tokens {len(report.effective_tokens)}/{len(report.corr)} -> {args.outdir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .embedder import read_embeddings
    from .evalmetrics import format_score, run_task

    try:
        emb = read_embeddings(args.embeddings)
    except (ValueError, UnicodeDecodeError) as exc:
        raise DataError(f"{args.embeddings}: {exc}") from exc
    print(format_score(args.task, run_task(args.task, emb, args.labels, seed=args.seed)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite, summarize

    worst = summarize(run_suite(args.seed))
    for loss, err in worst.items():
        print(f"{loss},{err:.3e},{'ok' if err < TOLERANCE else 'FAIL'}")
    return EXIT_OK if max(worst.values()) < TOLERANCE else EXIT_FAIL


def cmd_make_toy_data(args) -> int:
    from .synthetic import make_toy_data

    make_toy_data(args.outdir, args.seed)
    print(f"toy data written to {args.outdir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="l2c", description="Compression-pretext text embeddings")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="pretext stage (rc, nll or ctkd)")
    s.add_argument("--config", required=True)
    s.add_argument("--objective", choices=("rc", "nll", "ctkd"))
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("ucl", help="unsupervised contrastive stage")
    s.add_argument("--config", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ucl)

    s = sub.add_parser("scl", help="supervised contrastive stage")
    s.add_argument("--config", required=True)
    s.add_argument("--init", required=True)
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_scl)

    s = sub.add_parser("embed", help="embed one text per line")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--binary", action="store_true")
    s.set_defaults(fn=cmd_embed)

    s = sub.add_parser("diagnose", help="collapse diagnostics")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--outdir", required=True)
    s.set_defaults(fn=cmd_diagnose)

    s = sub.add_parser("eval", help="score embeddings on a labelled task")
    s.add_argument("--task", required=True, choices=("sts", "retrieval", "clustering", "rerank",
                                                     "classify"))
    s.add_argument("--embeddings", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("make-toy-data", help="write the synthetic toy corpus and configs")
    s.add_argument("--outdir", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_make_toy_data)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_thread_limit()):
            return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointFormatError, CheckpointIntegrityError, OSError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
