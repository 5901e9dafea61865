import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llm2comp import tensor as T
from llm2comp.contrastive import (ContrastiveBatch, SupervisedTriple, cosine_sim, infonce_loss,
                                  load_triples, make_ucl_pair, scl_loss, ucl_loss)
from llm2comp.embedder import embed_memory, mean_pool
from llm2comp.errors import DataError
from llm2comp.tensor import ContractError, DomainError, Tensor


def cos(u, v):
    return float(np.dot(u, v) / math.sqrt(np.dot(u, u) * np.dot(v, v)))


def naive_infonce(za, zp, zh, tau, anchor_negatives=True):
    """Per-anchor loop straight from the InfoNCE definition."""
    b = len(za)
    total = 0.0
    for i in range(b):
        cands = list(zp)
        if anchor_negatives:
            cands += [za[j] for j in range(b) if j != i]
        if zh is not None:
            cands += list(zh[i])
        num = math.exp(cos(za[i], zp[i]) / tau)
        den = sum(math.exp(cos(za[i], c) / tau) for c in cands)
        total += -math.log(num / den)
    return total / b


def test_cosine_examples(rng):
    u = rng.normal(size=5)
    assert abs(cosine_sim(u, u) - 1.0) < 1e-15
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0
    v = rng.normal(size=5)
    assert abs(cosine_sim(u, v) - cos(u, v)) < 1e-12
    with pytest.raises(DomainError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


def test_infonce_trivial_cases(rng):
    z = Tensor(rng.normal(size=(1, 4)))
    assert infonce_loss(ContrastiveBatch(z, Tensor(rng.normal(size=(1, 4))))).item() == 0.0
    same = Tensor(np.ones((2, 3)))
    assert abs(infonce_loss(ContrastiveBatch(same, same)).item() - math.log(3)) < 1e-9
    with pytest.raises(ContractError):
        infonce_loss(ContrastiveBatch(Tensor(np.zeros((0, 3))), Tensor(np.zeros((0, 3)))))


@pytest.mark.parametrize("seed", range(20))
def test_infonce_loop_oracle(seed):
    r = np.random.default_rng(seed)
    b, h, d = int(r.integers(1, 5)), int(r.integers(0, 4)), 6
    za, zp = r.normal(size=(b, d)), r.normal(size=(b, d))
    zh = r.normal(size=(b, h, d)) if h else None
    for tau in (0.05, 0.5):
        for anchor_neg in (True, False):
            batch = ContrastiveBatch(Tensor(za), Tensor(zp), None if zh is None else Tensor(zh), tau)
            got = infonce_loss(batch, anchor_negatives=anchor_neg).item()
            assert abs(got - naive_infonce(za, zp, zh, tau, anchor_neg)) < 1e-9


def test_include_self_adds_self_term(rng):
    za, zp = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    batch = ContrastiveBatch(Tensor(za), Tensor(zp), tau=0.5)
    got = infonce_loss(batch, include_self=True).item()
    total = 0.0
    for i in range(3):
        cands = list(zp) + list(za)
        den = sum(math.exp(cos(za[i], c) / 0.5) for c in cands)
        total -= math.log(math.exp(cos(za[i], zp[i]) / 0.5) / den)
    assert abs(got - total / 3) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 4.0))
def test_infonce_properties(seed, c):
    r = np.random.default_rng(seed)
    za, zp, zh = r.normal(size=(3, 5)), r.normal(size=(3, 5)), r.normal(size=(3, 2, 5))
    base = infonce_loss(ContrastiveBatch(Tensor(za), Tensor(zp), Tensor(zh), 0.1)).item()
    assert base >= 0
    perm = r.permutation(3)
    shuffled = infonce_loss(ContrastiveBatch(Tensor(za[perm]), Tensor(zp[perm]),
                                             Tensor(zh[perm]), 0.1)).item()
    assert abs(base - shuffled) < 1e-12
    # rescaling all vectors leaves cosine similarities, hence the loss, unchanged
    scaled = infonce_loss(ContrastiveBatch(Tensor(za * c), Tensor(zp * c), Tensor(zh * c), 0.1)).item()
    assert abs(base - scaled) < 1e-9


def test_infonce_confident_limit():
    za = np.eye(3)
    loss = infonce_loss(ContrastiveBatch(Tensor(za), Tensor(za.copy()), tau=0.01)).item()
    assert loss < 1e-9


def test_infonce_gradients(rng):
    za, zp, zh = (Tensor(rng.normal(size=s)) for s in ((2, 4), (2, 4), (2, 1, 4)))
    f = lambda _: infonce_loss(ContrastiveBatch(za, zp, zh, 0.5))
    for t in (za, zp, zh):
        assert T.grad_check(f, t) < 1e-4


def test_ucl_pair(byte_pair):
    enc = byte_pair.encoder
    z1, z2 = make_ucl_pair(enc, "some text", np.random.default_rng(0), dropout_rate=0.0)
    assert np.array_equal(z1.data, z2.data)
    a = make_ucl_pair(enc, "some text", np.random.default_rng(5), dropout_rate=0.2)
    b = make_ucl_pair(enc, "some text", np.random.default_rng(5), dropout_rate=0.2)
    assert np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
    r = np.random.default_rng(1)
    for text in [f"sentence number {i}" for i in range(10)]:
        z, zz = make_ucl_pair(enc, text, r, dropout_rate=0.2)
        assert cosine_sim(z.data, zz.data) < 1.0


def test_ucl_loss_runs(byte_pair):
    loss = ucl_loss(byte_pair.encoder, ["a b", "c d", "e f"], np.random.default_rng(0), 0.05, 0.2)
    assert loss.item() > 0


def test_scl_examples(byte_pair):
    enc = byte_pair.encoder
    assert scl_loss(enc, [SupervisedTriple("query", "positive")]).item() == 0.0
    one = scl_loss(enc, [SupervisedTriple("query", "positive", ["positive"])]).item()
    assert abs(one - math.log(2)) < 1e-9
    with pytest.raises(DataError):
        SupervisedTriple("query", "")


def test_scl_loop_oracle(byte_pair):
    enc = byte_pair.encoder
    triples = [SupervisedTriple(f"q{i} text", f"p{i} other", [f"n{i}a", f"n{i}b words"])
               for i in range(3)]
    emb = lambda s: mean_pool(embed_memory(enc, s)).data
    za = np.stack([emb(t.query) for t in triples])
    zp = np.stack([emb(t.positive) for t in triples])
    zh = np.stack([np.stack([emb(n) for n in t.negatives]) for t in triples])
    got = scl_loss(enc, triples, tau=0.05).item()
    assert abs(got - naive_infonce(za, zp, zh, 0.05, anchor_negatives=False)) < 1e-9


def test_load_triples(tmp_path):
    p = tmp_path / "t.jsonl"
    p.write_text('{"query": "a", "positive": "b", "negatives": ["c"]}\n\n{"query": "d", "positive": "e"}\n')
    got = load_triples(p)
    assert [t.negatives for t in got] == [["c"], []]
    p.write_text('{"query": "a"}\n')
    with pytest.raises(DataError):
        load_triples(p)
