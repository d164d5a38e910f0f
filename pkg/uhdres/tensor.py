"""
This module implements the numerical substrate of uhdres: N-dimensional real tensors and a
reverse-mode automatic differentiation tape.

A `Tensor` wraps a contiguous `numpy.ndarray` in channel-first `(batch, channel, height, width)`
layout. Every differentiable operation goes through `apply_op`, which appends a node to the
current thread's `GradGraph` whenever one of its inputs requires gradients. Nodes are appended in
execution order, so the parents of node *k* always have an index smaller than *k* and a sweep in
reverse append order is a valid topological order. `backward` performs that sweep, accumulates
gradients into every reachable leaf (most importantly `Parameter.grad`) and then drops the tape.

Broadcasting is deliberately minimal: binary operations accept operands of equal rank whose
extents are either equal or 1.
"""

from __future__ import annotations

from collections.abc import Callable
from collections.abc import Iterator
from collections.abc import Sequence
from contextlib import contextmanager
import dataclasses
import math
import os
import threading
from typing import Union

import numpy as np
from scipy import special

from uhdres.errors import ContractError
from uhdres.errors import NonFiniteError
from uhdres.errors import ShapeError

Grad = Union[np.ndarray, None]
BackwardFn = Callable[[np.ndarray], Sequence[Grad]]

DTYPES: dict[str, type[np.floating]] = {"float32": np.float32, "float64": np.float64}
"""Supported element types, addressed by name."""


@dataclasses.dataclass
class _Settings:
    dtype: str = "float32"
    check_finite: bool = False


_settings = _Settings(check_finite=os.environ.get("UHDRES_CHECK_FINITE", "") == "1")


def configure(*, dtype: str | None = None, check_finite: bool | None = None) -> None:
    """
    Configure process-wide numeric settings.

    - `dtype` is the default element type for newly created tensors, `"float32"` (the default) or `"float64"`.
    - `check_finite` enables the debug assertion mode: every operation verifies that its output is
      finite and raises `uhdres.errors.NonFiniteError` naming the operation otherwise.
      This can also be enabled by setting `UHDRES_CHECK_FINITE=1`.
    """
    if dtype is not None:
        if dtype not in DTYPES:
            raise ContractError(f"Unsupported element type {dtype!r}, expected one of {sorted(DTYPES)}.")
        _settings.dtype = dtype
    if check_finite is not None:
        _settings.check_finite = check_finite


def default_dtype() -> type[np.floating]:
    """The numpy type of the currently configured default element type."""
    return DTYPES[_settings.dtype]


def resolve_dtype(dtype: str | type | np.dtype | None) -> type[np.floating]:
    if dtype is None:
        return default_dtype()
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ContractError(f"Unsupported element type {dtype!r}, expected one of {sorted(DTYPES)}.")
        return DTYPES[dtype]
    resolved = np.dtype(dtype).type
    if resolved not in (np.float32, np.float64):
        raise ContractError(f"Unsupported element type {np.dtype(dtype).name!r}.")
    return resolved  # type: ignore[return-value]


def thread_count() -> int:
    """
    The number of worker threads used inside operators that parallelize over channels.

    Read from the `UHDRES_THREADS` environment variable, defaulting to 1.
    Results are bitwise identical for every thread count because work is split along channels only.
    """
    raw = os.environ.get("UHDRES_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise ContractError(f"UHDRES_THREADS must be a positive integer, not {raw!r}.") from None
    if count < 1:
        raise ContractError(f"UHDRES_THREADS must be a positive integer, not {raw!r}.")
    return count


class SeededRng:
    """
    A counter-based random number source with a platform-independent stream.

    The algorithm is Philox-4x64-10 as implemented by `numpy.random.Philox`. The 128-bit key is
    `(seed, stream)`; draw number *k* of this object runs the generator from counter
    `(0, 0, 0, k)`, so every draw is a pure function of `(seed, stream, k)`. Floating-point
    variates are always generated in 64-bit precision and then cast, so identical seeds yield
    identical scalars on every platform and for both element types.

    `fork(stream)` derives an independent source; the trainer uses it to give every training step
    its own stream, which makes resuming at an arbitrary step exact.
    """

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        if not 0 <= seed < 2**64:
            raise ContractError(f"Seed must fit into 64 unsigned bits, got {seed}.")
        if not 0 <= stream < 2**64:
            raise ContractError(f"Stream must fit into 64 unsigned bits, got {stream}.")
        self.seed = seed
        self.stream = stream
        self.counter = counter

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def fork(self, stream: int) -> SeededRng:
        """Return an independent source keyed by this seed and `stream`."""
        return SeededRng(self.seed, stream)

    def _generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        counter = np.array([0, 0, 0, self.counter], dtype=np.uint64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def uniform(self, low: float, high: float, shape: Sequence[int], dtype=None) -> np.ndarray:
        values = self._generator().uniform(low, high, size=tuple(shape))
        return values.astype(resolve_dtype(dtype))

    def normal(self, mean: float, std: float, shape: Sequence[int], dtype=None) -> np.ndarray:
        values = self._generator().normal(mean, std, size=tuple(shape))
        return values.astype(resolve_dtype(dtype))

    def integers(self, low: int, high: int, size: int | None = None):
        """Uniform integers in `[low, high)`."""
        values = self._generator().integers(low, high, size=size)
        return int(values) if size is None else values


class Tensor:
    """
    An N-dimensional real array that may take part in automatic differentiation.

    Tensors are treated as immutable once created; only `Parameter` values and gradients are
    mutated, by the optimizer and by `backward`.
    """

    __slots__ = ("data", "requires_grad", "node", "grad", "trace_id")

    data: np.ndarray
    """The contiguous scalar storage; `product(shape) == data.size`."""
    requires_grad: bool
    node: Node | None
    """The node that produced this tensor in the current tape, if any."""
    grad: np.ndarray | None
    """Accumulated gradient, populated for leaves by `backward`."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data)
        if dtype is not None or not np.issubdtype(array.dtype, np.floating):
            array = array.astype(resolve_dtype(dtype))
        self.data = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.node = None
        self.grad = None
        self.trace_id = None

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}.")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, dims: Sequence[int] | None = None) -> Tensor:
        return reduce("sum", self, dims)

    def mean(self, dims: Sequence[int] | None = None) -> Tensor:
        return reduce("mean", self, dims)


class Parameter(Tensor):
    """
    A trainable leaf tensor. A parameter is its own value tensor; `grad` always has the value's
    shape and starts at zero.
    """

    __slots__ = ("name", "decay")

    name: str
    """Unique dotted path within the owning model, assigned when the model is built."""
    decay: bool
    """Whether decoupled weight decay applies (convolution weights only)."""

    def __init__(self, data, name: str = "", decay: bool = False):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.decay = decay

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.data.dtype.name})"

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0)


@dataclasses.dataclass(eq=False)
class Node:
    """One recorded operation of a `GradGraph`."""

    op: str
    parents: tuple[int | None, ...]
    backward: BackwardFn | None
    leaf: Tensor | None
    index: int
    graph: GradGraph
    generation: int


class GradGraph:
    """
    An append-only tape of operations. Parents of node *k* always have an index below *k*.
    The tape is dropped (and its generation advanced) after every `backward` sweep.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.generation = 0

    def __len__(self):
        return len(self.nodes)

    def is_current(self, node: Node | None) -> bool:
        return node is not None and node.graph is self and node.generation == self.generation

    def append(
        self,
        op: str,
        parents: tuple[int | None, ...],
        backward: BackwardFn | None,
        leaf: Tensor | None = None,
    ) -> Node:
        node = Node(op, parents, backward, leaf, len(self.nodes), self, self.generation)
        self.nodes.append(node)
        return node

    def index_of(self, tensor: Tensor) -> int:
        """The node index of `tensor`, appending a leaf node if it has none in this tape yet."""
        if not self.is_current(tensor.node):
            tensor.node = self.append("leaf", (), None, leaf=tensor)
        assert tensor.node is not None
        return tensor.node.index

    def clear(self) -> None:
        self.nodes = []
        self.generation += 1


class ScheduleTrace:
    """
    Records the forward schedule (operation order, output sizes and consumers) of a computation.
    Used by `uhdres.bench` to estimate peak activation memory.
    """

    def __init__(self):
        self.sizes: list[int] = []
        self.ops: list[str] = []
        self.consumers: list[list[int]] = []
        """For each recorded tensor, the event indices at which it is consumed."""

    def _id(self, tensor: Tensor) -> int | None:
        if isinstance(tensor, Parameter):
            return None
        if tensor.trace_id is None or tensor.trace_id[0] is not self:
            tensor.trace_id = (self, len(self.sizes))
            self.sizes.append(tensor.data.nbytes)
            self.ops.append("input")
            self.consumers.append([])
        return tensor.trace_id[1]

    def record(self, op: str, out: Tensor, parents: Sequence[Tensor]) -> None:
        event = len(self.sizes)
        for parent in parents:
            pid = self._id(parent)
            if pid is not None:
                self.consumers[pid].append(event)
        out.trace_id = (self, event)
        self.sizes.append(out.data.nbytes)
        self.ops.append(op)
        self.consumers.append([])


class _ThreadState(threading.local):
    def __init__(self):
        self.graph = GradGraph()
        self.grad_enabled = True
        self.trace: ScheduleTrace | None = None


_state = _ThreadState()


def current_graph() -> GradGraph:
    """The tape of the calling thread."""
    return _state.graph


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording within the block, e.g. for inference."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def trace_schedule() -> Iterator[ScheduleTrace]:
    """Record the forward schedule of all operations executed within the block."""
    previous = _state.trace
    trace = ScheduleTrace()
    _state.trace = trace
    try:
        yield trace
    finally:
        _state.trace = previous


def apply_op(op: str, data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """
    Wrap the result `data` of operation `op` into a tensor and record it on the tape.

    `backward` receives the gradient of the output and returns one gradient (or `None`) per parent.
    """
    if _settings.check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Operation {op!r} produced non-finite values.")
    out = Tensor(data)
    if _state.trace is not None:
        _state.trace.record(op, out, parents)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        graph = _state.graph
        indices = tuple(graph.index_of(p) if p.requires_grad else None for p in parents)
        out.requires_grad = True
        out.node = graph.append(op, indices, backward)
    return out


def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(leaf) into the `grad` of every leaf reachable from `loss`, then drop the tape.

    Leaves that are not reachable keep their gradient untouched.
    """
    if loss.size != 1:
        raise ContractError(f"backward() requires a scalar loss, got shape {loss.shape}.")
    graph = _state.graph
    if not loss.requires_grad or not graph.is_current(loss.node):
        raise ContractError("The loss was not computed from any tensor that requires gradients.")
    assert loss.node is not None
    grads: dict[int, np.ndarray] = {loss.node.index: np.ones_like(loss.data)}
    try:
        for node in reversed(graph.nodes[: loss.node.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.leaf is not None:
                leaf = node.leaf
                if leaf.grad is None:
                    leaf.grad = np.zeros_like(leaf.data)
                leaf.grad += g.astype(leaf.data.dtype, copy=False)
                continue
            assert node.backward is not None
            for parent, pg in zip(node.parents, node.backward(g)):
                if parent is None or pg is None:
                    continue
                if parent in grads:
                    grads[parent] = grads[parent] + pg
                else:
                    grads[parent] = pg
    finally:
        graph.clear()


# Creation


def as_tensor(data, dtype=None, requires_grad: bool = False) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(np.asarray(data, dtype=resolve_dtype(dtype)), requires_grad=requires_grad)


def _check_extents(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"All extents must be at least 1, got {list(shape)}.")
    return shape


def create(
    shape: Sequence[int],
    init: str = "zeros",
    *,
    low: float = 0.0,
    high: float = 1.0,
    mean: float = 0.0,
    std: float = 1.0,
    rng: SeededRng | None = None,
    dtype=None,
    requires_grad: bool = False,
) -> Tensor:
    """
    Create a tensor of the given shape.

    `init` is one of `"zeros"`, `"ones"`, `"uniform"` (in `[low, high)`) or `"normal"`
    (with `mean` and `std`). Random initializations require `rng` and consume it deterministically.
    """
    shape = _check_extents(shape)
    np_dtype = resolve_dtype(dtype)
    if init == "zeros":
        data = np.zeros(shape, np_dtype)
    elif init == "ones":
        data = np.ones(shape, np_dtype)
    elif init in ("uniform", "normal"):
        if rng is None:
            raise ContractError(f"Initialization {init!r} requires an rng.")
        if init == "uniform":
            data = rng.uniform(low, high, shape, np_dtype)
        else:
            data = rng.normal(mean, std, shape, np_dtype)
    else:
        raise ContractError(f"Unknown initialization {init!r}.")
    return Tensor(data, requires_grad=requires_grad)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


# Elementwise


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    if a == b:
        return a
    if len(a) != len(b) or any(x != y and x != 1 and y != 1 for x, y in zip(a, b)):
        raise ShapeError(f"Cannot {op} tensors of shapes {list(a)} and {list(b)}.")
    return tuple(max(x, y) for x, y in zip(a, b))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(a: Tensor, b: Tensor | float) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return apply_op("add_scalar", a.data + a.data.dtype.type(c), (a,), lambda g: (g,))
    _broadcast_shape(a.shape, b.shape, "add")
    return apply_op(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor | float) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _broadcast_shape(a.shape, b.shape, "subtract")
    return apply_op(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor | float) -> Tensor:
    if not isinstance(b, Tensor):
        c = a.data.dtype.type(float(b))
        return apply_op("scale", a.data * c, (a,), lambda g: (g * c,))
    _broadcast_shape(a.shape, b.shape, "multiply")
    return apply_op(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    """`x` for positive inputs, `slope * x` otherwise. `slope=0` is a plain ReLU."""
    positive = a.data > 0
    s = a.data.dtype.type(slope)
    return apply_op(
        "leaky_relu",
        np.where(positive, a.data, a.data * s),
        (a,),
        lambda g: (np.where(positive, g, g * s),),
    )


def gelu(a: Tensor) -> Tensor:
    """The exact (error function) Gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return apply_op(
        "gelu",
        (x * cdf).astype(x.dtype, copy=False),
        (a,),
        lambda g: ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),),
    )


def sigmoid(a: Tensor) -> Tensor:
    y = special.expit(a.data).astype(a.data.dtype, copy=False)
    return apply_op("sigmoid", y, (a,), lambda g: (g * y * (1 - y),))


def absolute(a: Tensor) -> Tensor:
    """Elementwise absolute value; the gradient at exactly zero is zero."""
    sign = np.sign(a.data)
    return apply_op("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def cos(a: Tensor) -> Tensor:
    return apply_op("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sin(a: Tensor) -> Tensor:
    return apply_op("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def clamp_min(a: Tensor, low: float = 0.0) -> Tensor:
    keep = a.data >= low
    return apply_op(
        "clamp_min",
        np.where(keep, a.data, a.data.dtype.type(low)),
        (a,),
        lambda g: (np.where(keep, g, 0).astype(g.dtype, copy=False),),
    )


_UNARY: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": gelu,
    "sigmoid": sigmoid,
    "abs": absolute,
    "neg": neg,
}
_BINARY: dict[str, Callable[[Tensor, Tensor], Tensor]] = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor | None = None, *, slope: float = 0.1) -> Tensor:
    """Dispatch an elementwise operation by name (`add`, `sub`, `mul`, `leaky_relu`, `gelu`, `sigmoid`)."""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"Elementwise {op!r} requires two operands.")
        return _BINARY[op](a, b)
    if b is not None:
        raise ContractError(f"Elementwise {op!r} takes a single operand.")
    if op == "leaky_relu":
        return leaky_relu(a, slope)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ContractError(f"Unknown elementwise operation {op!r}.")


# Structure


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"Cannot reshape {list(a.shape)} into {list(shape)}.") from None
    return apply_op("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"{list(axes)} is not a permutation of the {a.ndim} axes of {list(a.shape)}.")
    inverse = tuple(np.argsort(axes))
    return apply_op(
        "permute",
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (np.ascontiguousarray(g.transpose(inverse)),),
    )


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along `axis` (the channel axis by default); all other extents must agree."""
    if not tensors:
        raise ContractError("concat() requires at least one tensor.")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(first) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, first)) if i != axis
        ):
            raise ShapeError(
                f"Cannot concatenate shapes {[list(t.shape) for t in tensors]} along axis {axis}."
            )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op(
        "concat",
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.ascontiguousarray(part) for part in np.split(g, bounds, axis=axis)),
    )


def split(a: Tensor, groups: int, axis: int = 1) -> list[Tensor]:
    """Split into `groups` tensors of equal extent along `axis` (the channel axis by default)."""
    extent = a.shape[axis]
    if groups < 1 or extent % groups:
        raise ShapeError(f"Cannot split {extent} channels into {groups} equal groups.")
    width = extent // groups
    return [narrow(a, axis, k * width, width) for k in range(groups)]


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """The sub-tensor `[start, start + length)` along `axis`."""
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(f"Range [{start}, {start + length}) is outside axis {axis} of {list(a.shape)}.")
    index: list[slice] = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    key = tuple(index)

    def _backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return apply_op("narrow", np.ascontiguousarray(a.data[key]), (a,), _backward)


# Reductions


def _normalize_dims(a: Tensor, dims: Sequence[int] | int | None) -> tuple[int, ...]:
    if dims is None:
        return tuple(range(a.ndim))
    if isinstance(dims, int):
        dims = (dims,)
    normalized = tuple(sorted({d % a.ndim for d in dims})) if a.ndim else ()
    if any(not -a.ndim <= d < a.ndim for d in dims):
        raise ShapeError(f"Invalid reduction dims {list(dims)} for shape {list(a.shape)}.")
    return normalized


def reduce(op: str, a: Tensor, dims: Sequence[int] | int | None = None) -> Tensor:
    """
    Reduce over `dims` (all dims by default) with `sum`, `mean` or `max`.
    Reduced extents become 1. The gradient of `max` is routed to the lowest linear index among ties.
    """
    axes = _normalize_dims(a, dims)
    if op == "sum":
        return apply_op(
            "sum",
            a.data.sum(axis=axes, keepdims=True),
            (a,),
            lambda g: (np.broadcast_to(g, a.shape).copy(),),
        )
    if op == "mean":
        count = int(np.prod([a.shape[d] for d in axes])) if axes else 1
        return apply_op(
            "mean",
            a.data.mean(axis=axes, keepdims=True),
            (a,),
            lambda g: (np.broadcast_to(g / count, a.shape).copy(),),
        )
    if op == "max":
        kept = [d for d in range(a.ndim) if d not in axes]
        moved = a.data.transpose(kept + list(axes))
        flat = moved.reshape(moved.shape[: len(kept)] + (-1,))
        arg = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)
        out_shape = tuple(1 if d in axes else s for d, s in enumerate(a.shape))

        def _backward(g):
            routed = np.zeros_like(flat)
            np.put_along_axis(routed, arg[..., None], g.reshape(arg.shape + (1,)), axis=-1)
            routed = routed.reshape(moved.shape).transpose(np.argsort(kept + list(axes)))
            return (np.ascontiguousarray(routed),)

        return apply_op("max", out.reshape(out_shape), (a,), _backward)
    raise ContractError(f"Unknown reduction {op!r}.")
