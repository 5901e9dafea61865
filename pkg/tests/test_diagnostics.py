import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llm2comp.diagnostics import (collapse_report, covariance_spectrum, effective_dimension,
                                  effective_tokens, plot_spectra, token_correlation, write_report)
from llm2comp.tensor import ContractError, DomainError

from oracles import as_partition, jacobi_eigenvalues, merge_fixpoints, random_similarity_instances


def test_spectrum_examples(rng):
    n = 10
    z = np.array([[1.0, 0.0], [-1.0, 0.0]] * (n // 2))
    # covariance [[n/(n-1), 0], [0, 0]] by the direct formula
    assert np.allclose(covariance_spectrum(z), [n / (n - 1), 0.0], rtol=0, atol=1e-9)
    assert not covariance_spectrum(np.tile(rng.normal(size=4), (6, 1))).any()
    with pytest.raises(ContractError):
        covariance_spectrum(np.ones((1, 3)))


def test_spectrum_matches_jacobi(rng):
    z = rng.normal(size=(200, 16)) * rng.uniform(0.1, 3.0, size=16)
    c = z - z.mean(axis=0)
    cov = c.T @ c / 199
    oracle = jacobi_eigenvalues(cov)
    got = covariance_spectrum(z)
    assert np.max(np.abs(got - oracle) / oracle[0]) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_spectrum_invariances(seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(30, 6))
    s = covariance_spectrum(z)
    assert np.all(np.diff(s) <= 1e-12) and np.all(s >= 0)
    tol = 1e-9 * s[0]
    assert np.max(np.abs(covariance_spectrum(z[r.permutation(30)]) - s)) < tol
    assert np.max(np.abs(covariance_spectrum(z + r.normal(size=6) * 10) - s)) < tol
    c = z - z.mean(axis=0)
    trace = np.trace(c.T @ c / 29)
    assert abs(s.sum() - trace) < 1e-8 * trace


def test_effective_dimension_examples():
    assert effective_dimension(np.zeros(4)) == 0
    assert effective_dimension([1.0, 0.5, 0.009]) == 2
    assert effective_dimension([1.0, 0.5, 0.01]) == 3


@pytest.mark.parametrize("r", [1, 2, 3, 5])
def test_effective_dimension_constructed_rank(r, rng):
    basis = np.linalg.qr(rng.normal(size=(32, r)))[0].T
    z = rng.normal(size=(1000, r)) @ basis
    assert effective_dimension(covariance_spectrum(z)) == r


def test_token_correlation_examples(rng):
    v = rng.normal(size=5)
    same = [np.tile(v, (4, 1)) * rng.uniform(0.5, 2, size=(4, 1)) for _ in range(3)]
    assert np.allclose(token_correlation(same), np.ones((4, 4)), rtol=0, atol=1e-12)
    q = np.linalg.qr(rng.normal(size=(6, 6)))[0]
    assert np.allclose(token_correlation([q]), np.eye(6), rtol=0, atol=1e-12)
    with pytest.raises(DomainError):
        token_correlation([np.zeros((2, 3))])
    with pytest.raises(ContractError):
        token_correlation([np.ones((2, 3)), np.ones((3, 3))])


def test_token_correlation_loop_oracle(rng):
    samples = [rng.normal(size=(8, 16)) for _ in range(10)]
    oracle = np.zeros((8, 8))
    for m in samples:
        for i in range(8):
            for j in range(8):
                oracle[i, j] += sum(m[i] * m[j]) / (np.sqrt(sum(m[i] ** 2)) * np.sqrt(sum(m[j] ** 2)))
    oracle /= 10
    got = token_correlation(samples)
    assert np.max(np.abs(got - oracle)) < 1e-10
    assert np.max(np.abs(got - got.T)) < 1e-9 and np.max(np.abs(np.diag(got) - 1)) < 1e-9
    assert got.min() >= -1 - 1e-9 and got.max() <= 1 + 1e-9


def test_effective_tokens_examples():
    corr = np.full((5, 5), 0.95)
    np.fill_diagonal(corr, 1.0)
    clusters, reps = effective_tokens(corr)
    assert clusters == [[0, 1, 2, 3, 4]] and reps == [0]
    clusters, reps = effective_tokens(np.eye(4))
    assert clusters == [[0], [1], [2], [3]] and reps == [0, 1, 2, 3]


def test_effective_tokens_thresholds(rng):
    corr = next(random_similarity_instances(1, seed=5))
    assert len(effective_tokens(corr, threshold=1.01)[0]) == 8
    off = corr[~np.eye(8, dtype=bool)].min()
    assert len(effective_tokens(corr, threshold=off - 1e-6)[0]) == 1


def test_effective_tokens_random_representative():
    corr = np.full((4, 4), 0.95)
    np.fill_diagonal(corr, 1.0)
    reps = {effective_tokens(corr, rng=np.random.default_rng(s))[1][0] for s in range(40)}
    assert reps == {0, 1, 2, 3}


def test_effective_tokens_is_a_complete_linkage_fixpoint():
    for corr in random_similarity_instances(200):
        clusters, reps = effective_tokens(corr)
        assert sorted(i for c in clusters for i in c) == list(range(8))
        assert len(reps) == len(clusters) and all(r in c for r, c in zip(reps, clusters))
        assert as_partition(clusters) in merge_fixpoints(corr)


def test_complete_linkage_fixpoint_can_depend_on_merge_order():
    # ab and bc clear the threshold but ac does not: {a,b},{c} and {a},{b,c} are both fixpoints
    corr = np.array([[1.0, 0.95, 0.5], [0.95, 1.0, 0.95], [0.5, 0.95, 1.0]])
    fps = merge_fixpoints(corr)
    assert fps == {as_partition([[0, 1], [2]]), as_partition([[0], [1, 2]])}
    assert as_partition(effective_tokens(corr)[0]) == as_partition([[0, 1], [2]])


def test_collapse_report_files(tmp_path, rng):
    memories = [rng.normal(size=(4, 6)) for _ in range(12)]
    pooled = np.stack([m.mean(axis=0) for m in memories])
    rep = collapse_report(pooled, memories)
    assert rep.n_samples == 12 and rep.corr.shape == (4, 4)
    write_report(rep, tmp_path)
    lines = (tmp_path / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "index,singular_value" and len(lines) == 7
    assert (tmp_path / "clusters.csv").read_text().splitlines()[0] == \
        "token_index,cluster_id,is_representative"
    assert len((tmp_path / "corr.csv").read_text().splitlines()) == 4
    assert (tmp_path / "spectrum.svg").read_text().lstrip().startswith("<?xml")


def test_plot_is_byte_stable(tmp_path):
    spectra = {"a": np.array([3.0, 1.0, 0.1]), "b": np.array([2.0, 0.0, 0.0])}
    plot_spectra(spectra, tmp_path / "1.svg")
    plot_spectra(spectra, tmp_path / "2.svg")
    assert (tmp_path / "1.svg").read_bytes() == (tmp_path / "2.svg").read_bytes()
