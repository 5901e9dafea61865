"""Dimensional-collapse diagnostics for pooled embeddings and memory tokens."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import ContractError, DomainError

DEFAULT_REL_THRESHOLD = 0.01
DEFAULT_TOKEN_THRESHOLD = 0.9


@dataclass
class CollapseReport:
    spectrum: np.ndarray
    effective_dim: int
    rel_threshold: float
    corr: np.ndarray
    clusters: list[list[int]]
    effective_tokens: list[int]
    token_threshold: float
    n_samples: int


def covariance_spectrum(z) -> np.ndarray:
    """Singular values (descending) of the unbiased covariance of the rows of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ContractError("covariance_spectrum needs an N x d matrix with N >= 2")
    # shifting by a data row first keeps constant columns exactly zero after centering
    shifted = z - z[:1]
    centered = shifted - shifted.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (z.shape[0] - 1)
    return np.linalg.svd(cov, compute_uv=False)


def effective_dimension(spectrum, rel_threshold: float = DEFAULT_REL_THRESHOLD) -> int:
    s = np.asarray(spectrum, dtype=np.float64)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s >= rel_threshold * s[0]))


def token_correlation(samples: Sequence) -> np.ndarray:
    """Average over samples of the cosine-similarity matrix between memory tokens."""
    if len(samples) == 0:
        raise ContractError("token_correlation needs at least one sample")
    mats = [np.asarray(m, dtype=np.float64) for m in samples]
    if len({m.shape for m in mats}) != 1 or mats[0].ndim != 2:
        raise ContractError("samples must share one k x d shape")
    total = np.zeros((mats[0].shape[0],) * 2)
    for m in mats:
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        if np.any(norms <= 0):
            raise DomainError("memory token with zero norm")
        unit = m / norms
        total += unit @ unit.T
    return total / len(mats)


def _linked(corr: np.ndarray, a: list[int], b: list[int], threshold: float) -> bool:
    return float(corr[np.ix_(a, b)].min()) > threshold


def effective_tokens(corr, threshold: float = DEFAULT_TOKEN_THRESHOLD,
                     rng: np.random.Generator | None = None) -> tuple[list[list[int]], list[int]]:
    """Complete-linkage merging at ``threshold``; one representative per cluster.

    Clusters are kept sorted by their smallest member, and each round merges
    the lexicographically first linkable pair. The representative is the
    smallest index, or a uniform draw when ``rng`` is given.
    """
    corr = np.asarray(corr, dtype=np.float64)
    clusters = [[i] for i in range(corr.shape[0])]
    merged = True
    while merged:
        merged = False
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                if _linked(corr, clusters[i], clusters[j], threshold):
                    clusters[i] = sorted(clusters[i] + clusters[j])
                    del clusters[j]
                    merged = True
                    break
            if merged:
                break
    if rng is None:
        reps = [c[0] for c in clusters]
    else:
        reps = [int(rng.choice(c)) for c in clusters]
    return clusters, reps


def collapse_report(pooled, memories: Sequence, rel_threshold: float = DEFAULT_REL_THRESHOLD,
                    token_threshold: float = DEFAULT_TOKEN_THRESHOLD,
                    rng: np.random.Generator | None = None) -> CollapseReport:
    spectrum = covariance_spectrum(pooled)
    corr = token_correlation(memories)
    clusters, reps = effective_tokens(corr, token_threshold, rng)
    return CollapseReport(spectrum, effective_dimension(spectrum, rel_threshold), rel_threshold,
                          corr, clusters, reps, token_threshold, len(memories))


def write_report(report: CollapseReport, outdir: str | Path) -> None:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "singular_value"])
        for i, s in enumerate(report.spectrum):
            w.writerow([i, repr(float(s))])
    with open(out / "corr.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in report.corr:
            w.writerow([repr(float(x)) for x in row])
    reps = set(report.effective_tokens)
    with open(out / "clusters.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["token_index", "cluster_id", "is_representative"])
        rows = sorted((t, cid) for cid, c in enumerate(report.clusters) for t in c)
        for t, cid in rows:
            w.writerow([t, cid, int(t in reps)])
    plot_spectra({"embeddings": report.spectrum}, out / "spectrum.svg",
                 title=f"effective dim {report.effective_dim} "
                       f"(threshold {report.rel_threshold:g} of max)")


def plot_spectra(spectra: dict[str, np.ndarray], path: str | Path, title: str = "") -> None:
    """Log-scale singular value vs component index, one line per label."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "llm2comp"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, s in spectra.items():
        s = np.asarray(s, dtype=np.float64)
        floor = max(float(s[0]) * 1e-12, 1e-300) if s.size and s[0] > 0 else 1e-300
        ax.plot(np.arange(1, s.size + 1), np.maximum(s, floor), label=label)
    ax.set_yscale("log")
    ax.set_xlabel("principal component index")
    ax.set_ylabel("singular value")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
