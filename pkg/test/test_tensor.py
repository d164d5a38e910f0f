from __future__ import annotations

from hypothesis import given
from hypothesis import settings
from hypothesis.strategies import floats
from hypothesis.strategies import integers
import numpy as np
import pytest

from uhdres.errors import ContractError
from uhdres.errors import NonFiniteError
from uhdres.errors import ShapeError
from uhdres.gradcheck import grad_check
from uhdres.tensor import Parameter
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import add
from uhdres.tensor import backward
from uhdres.tensor import concat
from uhdres.tensor import configure
from uhdres.tensor import create
from uhdres.tensor import current_graph
from uhdres.tensor import elementwise
from uhdres.tensor import gelu
from uhdres.tensor import leaky_relu
from uhdres.tensor import mul
from uhdres.tensor import narrow
from uhdres.tensor import neg
from uhdres.tensor import no_grad
from uhdres.tensor import permute
from uhdres.tensor import reduce
from uhdres.tensor import reshape
from uhdres.tensor import sigmoid
from uhdres.tensor import split
from uhdres.tensor import thread_count


def test_create():
    t = create((2, 3), "ones", dtype="float64")
    assert t.shape == (2, 3)
    assert t.dtype == np.float64
    assert t.data.sum() == 6

    assert create((4,)).dtype == np.float32

    with pytest.raises(ShapeError, match="at least 1"):
        create((2, 0))
    with pytest.raises(ContractError, match="requires an rng"):
        create((2, 2), "uniform")
    with pytest.raises(ContractError, match="Unknown initialization"):
        create((2, 2), "xavier")


def test_create_random_is_reproducible():
    a = create((3, 4), "normal", rng=SeededRng(7), dtype="float64")
    b = create((3, 4), "normal", rng=SeededRng(7), dtype="float64")
    c = create((3, 4), "normal", rng=SeededRng(8), dtype="float64")
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


@given(integers(0, 2**64 - 1), integers(0, 1000))
@settings(max_examples=25)
def test_rng_streams(seed, stream):
    first = SeededRng(seed, stream)
    second = SeededRng(seed, stream)
    assert np.array_equal(first.uniform(0, 1, (5,)), second.uniform(0, 1, (5,)))
    # successive draws differ
    assert not np.array_equal(first.uniform(0, 1, (5,)), SeededRng(seed, stream).uniform(0, 1, (5,)))


def test_rng_precision_independent():
    f32 = SeededRng(3).uniform(-1, 1, (16,), np.float32)
    f64 = SeededRng(3).uniform(-1, 1, (16,), np.float64)
    assert np.array_equal(f32, f64.astype(np.float32))


def test_rng_fork():
    root = SeededRng(0)
    assert not np.array_equal(root.fork(1).uniform(0, 1, (4,)), root.fork(2).uniform(0, 1, (4,)))
    assert np.array_equal(root.fork(5).uniform(0, 1, (4,)), SeededRng(0).fork(5).uniform(0, 1, (4,)))
    with pytest.raises(ContractError, match="Seed"):
        SeededRng(-1)


def test_backward_accumulates_shared_inputs():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = reduce("sum", add(mul(x, x), x))
    backward(y)
    assert np.allclose(x.grad, 2 * x.data + 1)
    assert len(current_graph()) == 0


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        backward(mul(x, 2.0))
    with pytest.raises(ContractError, match="requires gradients"):
        backward(reduce("sum", Tensor(np.ones(3))))


def test_backward_leaves_parameters_accumulating():
    p = Parameter(np.array([2.0]))
    for _ in range(2):
        backward(reduce("sum", mul(p, 3.0)))
    assert p.grad.tolist() == [6.0]
    p.zero_grad()
    assert p.grad.tolist() == [0.0]


def test_no_grad():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad
    assert y.node is None


def test_broadcasting():
    a = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(np.full((1, 3, 1, 1), 2.0), requires_grad=True)
    backward(reduce("sum", mul(a, b)))
    assert b.grad.shape == (1, 3, 1, 1)
    assert np.all(b.grad == 32)

    with pytest.raises(ShapeError, match="Cannot add"):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_split_concat():
    x = Tensor(np.arange(24.0).reshape(1, 4, 2, 3))
    parts = split(x, 2)
    assert [p.shape for p in parts] == [(1, 2, 2, 3)] * 2
    assert np.array_equal(concat(parts).data, x.data)

    with pytest.raises(ShapeError, match="3 equal groups"):
        split(x, 3)
    with pytest.raises(ShapeError, match="concatenate"):
        concat([x, Tensor(np.ones((1, 1, 3, 3)))])
    with pytest.raises(ShapeError, match="outside"):
        narrow(x, 1, 3, 2)


def test_reshape_permute():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert permute(x, (1, 0)).shape == (3, 2)
    assert reshape(x, (3, 2)).shape == (3, 2)
    with pytest.raises(ShapeError):
        reshape(x, (4, 2))
    with pytest.raises(ShapeError, match="permutation"):
        permute(x, (0, 0))


def test_reduce_max_ties():
    x = Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, 2.0]]), requires_grad=True)
    m = reduce("max", x, 1)
    assert m.data.ravel().tolist() == [3.0, 2.0]
    backward(reduce("sum", m))
    assert x.grad.tolist() == [[0, 1, 0], [1, 0, 0]]


def test_reduce_keeps_dims():
    x = Tensor(np.ones((2, 3, 4, 5)))
    assert reduce("mean", x, (2, 3)).shape == (2, 3, 1, 1)
    assert reduce("sum", x).shape == (1, 1, 1, 1)
    with pytest.raises(ContractError, match="Unknown reduction"):
        reduce("min", x)


def test_elementwise_dispatch():
    x = Tensor(np.array([-1.0, 2.0]))
    assert elementwise("leaky_relu", x).data.tolist() == pytest.approx([-0.1, 2.0])
    assert elementwise("leaky_relu", x, slope=0.0).data.tolist() == [0.0, 2.0]
    assert elementwise("mul", x, x).data.tolist() == [1.0, 4.0]
    with pytest.raises(ContractError, match="two operands"):
        elementwise("add", x)
    with pytest.raises(ContractError, match="Unknown elementwise"):
        elementwise("tanh", x)


def test_activations_values():
    assert gelu(Tensor(np.array([0.0]))).item() == 0
    assert gelu(Tensor(np.array([1.0]))).item() == pytest.approx(0.8413447460685429)
    assert sigmoid(Tensor(np.array([0.0]))).item() == 0.5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_check_elementwise_chain(seed):
    rng = SeededRng(seed)
    x = Tensor(rng.normal(0, 1, (3, 4), np.float64))
    w = Tensor(rng.normal(0, 1, (3, 4), np.float64))

    def f(t):
        return reduce("sum", mul(sigmoid(gelu(leaky_relu(t, 0.1))), w))

    report = grad_check(f, x)
    assert report.passed, str(report)


def test_grad_check_requires_float64():
    x = Tensor(np.ones(3, np.float32))
    with pytest.raises(ContractError, match="64-bit"):
        grad_check(lambda t: reduce("sum", t), x)


def test_check_finite():
    configure(check_finite=True)
    try:
        with pytest.raises(NonFiniteError, match="'neg'"):
            neg(Tensor(np.array([np.inf])))
    finally:
        configure(check_finite=False)
    assert neg(Tensor(np.array([np.inf]))).item() == -np.inf


def test_configure_dtype():
    configure(dtype="float64")
    try:
        assert Tensor([1, 2]).dtype == np.float64
    finally:
        configure(dtype="float32")
    assert Tensor([1, 2]).dtype == np.float32
    with pytest.raises(ContractError, match="float16"):
        configure(dtype="float16")


def test_thread_count(monkeypatch):
    monkeypatch.delenv("UHDRES_THREADS", raising=False)
    assert thread_count() == 1
    monkeypatch.setenv("UHDRES_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("UHDRES_THREADS", "0")
    with pytest.raises(ContractError, match="UHDRES_THREADS"):
        thread_count()


@given(floats(-3, 3), floats(-3, 3), integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_gradient_is_linear(a, b, seed):
    rng = SeededRng(seed)
    data = rng.normal(0, 1, (3, 4), np.float64)
    w = Tensor(rng.normal(0, 1, (3, 4), np.float64))

    def f(t):
        return reduce("sum", mul(gelu(t), w))

    def g(t):
        return reduce("sum", mul(sigmoid(t), t))

    def grad(fn):
        x = Tensor(data.copy(), requires_grad=True)
        backward(fn(x))
        return x.grad

    combined = grad(lambda t: add(mul(f(t), a), mul(g(t), b)))
    assert np.allclose(combined, a * grad(f) + b * grad(g), rtol=1e-10, atol=1e-12)
