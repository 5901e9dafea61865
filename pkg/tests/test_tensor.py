import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from llm2comp import tensor as T
from llm2comp.tensor import ContractError, DomainError, Graph, ShapeError, Tensor


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def test_matmul_examples(rng):
    out = T.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    assert np.array_equal(out.data, [[1, 2], [3, 4]])
    assert np.array_equal(T.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]])).data, [[0.0]])
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    assert np.max(np.abs(T.matmul(Tensor(a), Tensor(b)).data - triple_loop(a, b))) < 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
    out = T.softmax(Tensor(np.log([1.0, 2.0, 3.0]))).data
    assert np.max(np.abs(out - np.array([1, 2, 3]) / 6)) < 1e-15
    x = np.array([0.3, -1.2, 4.0])
    assert np.max(np.abs(T.softmax(Tensor(x)).data - T.softmax(Tensor(x + 7.0)).data)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
def test_softmax_normalized(x):
    assert abs(T.softmax(Tensor(x)).data.sum() - 1.0) < 1e-9


def test_cross_entropy_examples(rng):
    for t in range(4):
        assert abs(T.cross_entropy(Tensor(np.zeros(4)), t).item() - math.log(4)) < 1e-15
    logits = np.zeros(5)
    logits[2] = 30.0
    assert T.cross_entropy(Tensor(logits), 2).item() < 1e-12
    x = rng.normal(size=11) * 3
    oracle = -math.log(math.exp(x[7]) / sum(math.exp(v) for v in x))
    assert abs(T.cross_entropy(Tensor(x), 7).item() - oracle) < 1e-12


def test_cross_entropy_rows_and_range(rng):
    x = rng.normal(size=(3, 6))
    rows = T.cross_entropy(Tensor(x), [0, 5, 2]).data
    for i, t in enumerate([0, 5, 2]):
        assert abs(rows[i] - T.cross_entropy(Tensor(x[i]), t).item()) < 1e-14
    with pytest.raises(IndexError):
        T.cross_entropy(Tensor(np.zeros(4)), 4)


def test_cross_entropy_clamped():
    logits = np.zeros(3)
    logits[0] = 1000.0
    assert T.cross_entropy(Tensor(logits), 1).item() == pytest.approx(-math.log(1e-12))


def kl_oracle(p, q):
    p = [np.longdouble(v) for v in p]
    q = [np.longdouble(v) for v in q]
    return float(sum(pi * (np.log(pi) - np.log(qi)) for pi, qi in zip(p, q) if pi > 0))


def test_kl_examples(rng):
    p = rng.dirichlet(np.ones(5))
    assert T.kl_divergence(Tensor(p), Tensor(p)).item() == 0.0
    assert abs(T.kl_divergence(Tensor([1.0, 0.0]), Tensor([0.5, 0.5])).item() - math.log(2)) < 1e-15
    p, q = rng.dirichlet(np.ones(16)), rng.dirichlet(np.ones(16))
    assert abs(T.kl_divergence(Tensor(p), Tensor(q)).item() - kl_oracle(p, q)) < 1e-10


def test_kl_errors():
    with pytest.raises(ShapeError):
        T.kl_divergence(Tensor([0.5, 0.5]), Tensor([0.2, 0.3, 0.5]))
    with pytest.raises(DomainError):
        T.kl_divergence(Tensor([0.5, 0.6]), Tensor([0.5, 0.5]))


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.floats(0.0, 30.0))
def test_kl_nonnegative_and_zero_iff_equal(v, seed, sharp):
    r = np.random.default_rng(seed)
    p = T.softmax(Tensor(r.normal(size=v) * sharp)).data
    q = T.softmax(Tensor(r.normal(size=v) * sharp)).data
    kl = T.kl_divergence(Tensor(p), Tensor(q)).item()
    assert kl >= -1e-12
    if np.max(np.abs(p - q)) >= 1e-9 and np.all(q > 1e-12):
        assert kl > 0
    assert T.kl_divergence(Tensor(p), Tensor(p)).item() < 1e-10


def test_backward_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Graph() as g:
        loss = (x * x).sum()
        T.backward(g, loss)
    assert np.array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_constant_loss():
    x = Tensor([1.0, 2.0])
    with Graph() as g:
        loss = (x * x).sum()
        T.backward(g, loss)
    assert x.grad is None and not g.nodes


def test_backward_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Graph() as g:
        y = x * 2.0
        with pytest.raises(ContractError):
            T.backward(g, y)


def test_composite_softmax_matmul_grad(rng):
    w = Tensor(rng.normal(size=(4, 3)))
    c = rng.normal(size=(2, 3))
    x = Tensor(rng.normal(size=(2, 4)))
    err = T.grad_check(lambda t: (T.softmax(T.matmul(t, w)) * c).sum(), x)
    assert err < 1e-6


def test_grad_check_square():
    assert T.grad_check(lambda t: (t * t).sum(), Tensor([3.0])) < 1e-9


def test_reuse_accumulates_exactly(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    with Graph() as g:
        T.backward(g, T.exp(x).sum())
    single = x.grad.copy()
    x.grad = None
    with Graph() as g:
        T.backward(g, T.exp(x).sum() + T.exp(x).sum())
    assert np.array_equal(x.grad, single + single)


def test_nonfinite_rejected():
    with pytest.raises(DomainError):
        T.exp(Tensor([1000.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([0.0]))


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with Graph() as g:
        with T.no_grad():
            (x * x).sum()
    assert not g.nodes


def _cos_sin(n, d):
    ang = np.arange(1, n + 1)[:, None] * (10000.0 ** (-np.arange(0, d, 2) / d))[None]
    ang = np.concatenate([ang, ang], axis=-1)
    return np.cos(ang), np.sin(ang)


PRIMITIVES = {
    "add_broadcast": lambda x, r: (x + Tensor(r.normal(size=(1, 4)))).sum(),
    "sub_div": lambda x, r: ((x - 1.0) / (T.exp(x) + 1.0)).sum(),
    "sqrt_clamp": lambda x, r: T.sqrt(T.clamp_min(x * x, 0.05) + 1.0).sum(),
    "silu": lambda x, r: (T.silu(x) * Tensor(r.normal(size=(3, 4)))).sum(),
    "mean_axis": lambda x, r: (T.mean(x, axis=0) * Tensor(r.normal(size=4))).sum(),
    "reshape_transpose": lambda x, r: (T.transpose(x.reshape(2, 6), (1, 0)) * Tensor(r.normal(size=(6, 2)))).sum(),
    "take": lambda x, r: (x[np.array([0, 2, 0])] * Tensor(r.normal(size=(3, 4)))).sum(),
    "concat_stack": lambda x, r: (T.stack([x, x * 2.0]).sum(axis=0) * T.concat([x[:1], x[1:]], axis=0)).sum(),
    "linear": lambda x, r: (T.linear(x, Tensor(r.normal(size=(5, 4)))) * Tensor(r.normal(size=(3, 5)))).sum(),
    "rms_norm": lambda x, r: (T.rms_norm(x, Tensor(r.normal(size=4))) * Tensor(r.normal(size=(3, 4)))).sum(),
    "rope": lambda x, r: (T.rope(x, *_cos_sin(3, 4)) * Tensor(r.normal(size=(3, 4)))).sum(),
    "log_softmax_masked": lambda x, r: (T.log_softmax(x, mask=np.tril(np.ones((3, 4), bool))) * Tensor(r.normal(size=(3, 4)))).sum(),
    "cross_entropy": lambda x, r: T.cross_entropy(x, [1, 0, 3]).mean(),
    "kl": lambda x, r: T.kl_divergence(Tensor(T.softmax(Tensor(r.normal(size=(3, 4)))).data), T.softmax(x)).sum(),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients(name, seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(3, 4)))
    fixed = np.random.default_rng(seed + 100)
    state = fixed.bit_generator.state

    def f(t):
        fixed.bit_generator.state = state
        return PRIMITIVES[name](t, fixed)

    assert T.grad_check(f, x) < 1e-3
