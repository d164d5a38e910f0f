"""
Neural operators of the network: convolutions, batch normalization, pooling, bilinear resampling
and channel attention, plus the small `Module` container that owns their parameters.

Padding conventions: blocks pad spatial convolutions and pooling by reflection (mirroring without
repeating the edge sample), the stem and head convolutions pad with zeros. Odd kernels are padded
symmetrically by `(k - 1) // 2` per axis, so stride-1 convolutions preserve spatial extents; strip
kernels such as 1×11 only pad along their long axis.
"""

from __future__ import annotations

from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
import dataclasses
import math
from typing import Literal
from typing import TypeVar

import numpy as np

from uhdres.errors import ConfigError
from uhdres.errors import ContractError
from uhdres.errors import ShapeError
from uhdres.tensor import Parameter
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import apply_op
from uhdres.tensor import leaky_relu
from uhdres.tensor import mul
from uhdres.tensor import reduce
from uhdres.tensor import resolve_dtype
from uhdres.tensor import sigmoid
from uhdres.tensor import thread_count

PaddingMode = Literal["zeros", "reflect"]

M = TypeVar("M", bound="Module")


class Module:
    """
    Base class for everything that owns parameters or buffers.

    Children, parameters and buffers are registered explicitly (`add_module`, `add_parameter`,
    `add_buffer`); plain attribute assignment does not register anything, which lets a module hold
    a reference to a sibling's parameters without owning them.
    """

    def __init__(self):
        self._parameters: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._modules: dict[str, Module] = {}
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def add_module(self, name: str, module: M) -> M:
        self._modules[name] = module
        return module

    def add_parameter(self, name: str, param: Parameter) -> Parameter:
        self._parameters[name] = param
        return param

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def children(self) -> Iterator[tuple[str, Module]]:
        yield from self._modules.items()

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for path, module in self.named_modules(prefix):
            for name, param in module._parameters.items():
                if id(param) in seen:
                    raise ConfigError(f"Parameter {param.name or name!r} is registered twice.")
                seen.add(id(param))
                yield (f"{path}.{name}" if path else name), param

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for path, module in self.named_modules(prefix):
            for name, value in module._buffers.items():
                yield (f"{path}.{name}" if path else name), value

    def assign_names(self) -> None:
        """Store every parameter's dotted path in `Parameter.name`."""
        for name, param in self.named_parameters():
            param.name = name

    def train(self, mode: bool = True) -> Module:
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Identity(Module):
    """Stands in for an ablated block."""

    def forward(self, x: Tensor) -> Tensor:
        return x


# Padding


def _reflect_index(n: int, before: int, after: int) -> np.ndarray:
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def _scatter_add(g: np.ndarray, index: np.ndarray, size: int, axis: int) -> np.ndarray:
    shape = list(g.shape)
    shape[axis] = size
    out = np.zeros(shape, g.dtype)
    key: tuple = (slice(None),) * axis + (index,)
    np.add.at(out, key, g)
    return out


def pad2d(x: Tensor, pads: tuple[int, int, int, int], mode: PaddingMode = "zeros") -> Tensor:
    """Pad the two spatial axes by `(top, bottom, left, right)`."""
    top, bottom, left, right = pads
    if min(pads) < 0:
        raise ContractError(f"Padding must be non-negative, got {list(pads)}.")
    if not any(pads):
        return x
    h, w = x.shape[-2:]
    if mode == "zeros":
        width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
        return apply_op(
            "pad_zeros",
            np.pad(x.data, width),
            (x,),
            lambda g: (np.ascontiguousarray(g[..., top : top + h, left : left + w]),),
        )
    if mode == "reflect":
        rows = _reflect_index(h, top, bottom)
        cols = _reflect_index(w, left, right)
        axis_h, axis_w = x.ndim - 2, x.ndim - 1

        def _backward(g):
            g = _scatter_add(g, cols, w, axis_w)
            return (_scatter_add(g, rows, h, axis_h),)

        return apply_op("pad_reflect", x.data[..., rows, :][..., cols], (x,), _backward)
    raise ContractError(f"Unknown padding mode {mode!r}.")


# Convolution


@dataclasses.dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: PaddingMode = "reflect"
    groups: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"Channel counts must be positive, got {self.in_channels}→{self.out_channels}.")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConfigError(
                f"Channels {self.in_channels}→{self.out_channels} are not divisible by groups={self.groups}."
            )
        if self.groups != 1 and not self.depthwise:
            raise ConfigError(f"Only dense and depthwise convolutions are supported, got groups={self.groups}.")
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ConfigError(f"Kernel extents must be odd, got {self.kernel}.")
        if self.stride < 1:
            raise ConfigError(f"Stride must be positive, got {self.stride}.")
        if self.padding not in ("zeros", "reflect"):
            raise ConfigError(f"Unknown padding mode {self.padding!r}.")

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels and self.groups > 1

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def padding_extents(self) -> tuple[int, int, int, int]:
        ph, pw = (self.kernel[0] - 1) // 2, (self.kernel[1] - 1) // 2
        return (ph, ph, pw, pw)

    def output_extents(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        top, bottom, left, right = self.padding_extents
        return (
            (h + top + bottom - kh) // self.stride + 1,
            (w + left + right - kw) // self.stride + 1,
        )


def _window(i: int, j: int, stride: int, ho: int, wo: int) -> tuple[slice, ...]:
    return (
        slice(None),
        slice(None),
        slice(i, i + stride * (ho - 1) + 1, stride),
        slice(j, j + stride * (wo - 1) + 1, stride),
    )


def _depthwise_forward(xp: np.ndarray, w: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    kh, kw = w.shape[-2:]

    def _run(channels: slice) -> np.ndarray:
        part = xp[:, channels]
        weights = w[channels, 0]
        out = np.zeros((xp.shape[0], part.shape[1], ho, wo), xp.dtype)
        for i in range(kh):
            for j in range(kw):
                out += part[_window(i, j, stride, ho, wo)] * weights[:, i, j][None, :, None, None]
        return out

    c = xp.shape[1]
    threads = min(thread_count(), c)
    if threads == 1:
        return _run(slice(None))
    bounds = np.linspace(0, c, threads + 1).astype(int)
    chunks = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(_run, chunks)), axis=1)


def conv2d(x: Tensor, spec: Conv2dSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """
    Two-dimensional convolution (cross-correlation) of a `(n, c, h, w)` tensor.

    The kernel is applied by accumulating one shifted view of the padded input per kernel offset,
    which keeps the inner products inside BLAS for dense convolutions.
    """
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"Convolution expects {spec.in_channels} input channels, got shape {list(x.shape)}.")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"Convolution weight has shape {list(weight.shape)}, expected {list(spec.weight_shape)}.")
    xp = pad2d(x, spec.padding_extents, spec.padding)
    kh, kw = spec.kernel
    s = spec.stride
    n, _, hp, wp = xp.shape
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"Input {list(x.shape)} is too small for kernel {spec.kernel}.")
    w = weight.data
    xd = xp.data

    if spec.depthwise:
        out = _depthwise_forward(xd, w, s, ho, wo)
    else:
        out = np.zeros((n, spec.out_channels, ho, wo), xd.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xd[_window(i, j, s, ho, wo)]
                out += np.moveaxis(np.tensordot(w[:, :, i, j], patch, axes=(1, 1)), 0, 1)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def _backward(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(w)
        for i in range(kh):
            for j in range(kw):
                window = _window(i, j, s, ho, wo)
                patch = xd[window]
                if spec.depthwise:
                    gw[:, 0, i, j] = np.sum(g * patch, axis=(0, 2, 3))
                    gx[window] += g * w[:, 0, i, j][None, :, None, None]
                else:
                    gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
                    gx[window] += np.moveaxis(np.tensordot(w[:, :, i, j], g, axes=(0, 1)), 0, 1)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb)

    parents: tuple[Tensor, ...] = (xp, weight, bias) if bias is not None else (xp, weight)
    return apply_op("dwconv2d" if spec.depthwise else "conv2d", out, parents, _backward)


def kaiming_uniform(spec: Conv2dSpec, rng: SeededRng, dtype=None) -> np.ndarray:
    """Kaiming-uniform fan-in initialization with negative slope √5, i.e. bound `1/√fan_in`."""
    fan_in = (spec.in_channels // spec.groups) * spec.kernel[0] * spec.kernel[1]
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, spec.weight_shape, dtype)


class Conv2d(Module):
    def __init__(self, spec: Conv2dSpec, rng: SeededRng, dtype=None):
        super().__init__()
        self.spec = spec
        self.weight = self.add_parameter("weight", Parameter(kaiming_uniform(spec, rng, dtype), decay=True))
        self.bias: Parameter | None = None
        if spec.bias:
            self.bias = self.add_parameter(
                "bias", Parameter(np.zeros(spec.out_channels, resolve_dtype(dtype)))
            )

    def __repr__(self):
        s = self.spec
        kind = "DWConv" if s.depthwise else "Conv"
        return f"{kind}({s.in_channels}→{s.out_channels}, {s.kernel[0]}×{s.kernel[1]}, stride={s.stride})"

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.spec, self.weight, self.bias)


def pointwise(in_channels: int, out_channels: int, rng: SeededRng, dtype=None) -> Conv2d:
    """A 1×1 convolution."""
    return Conv2d(Conv2dSpec(in_channels, out_channels), rng, dtype)


def depthwise(
    channels: int,
    kernel: tuple[int, int],
    rng: SeededRng,
    dtype=None,
    padding: PaddingMode = "reflect",
) -> Conv2d:
    return Conv2d(Conv2dSpec(channels, channels, kernel, padding=padding, groups=channels), rng, dtype)


# Normalization


class BatchNorm2d(Module):
    """
    Per-channel batch normalization state: learnable `gamma`/`beta`, running statistics, momentum
    and epsilon. The mode is the module's `training` flag.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=None):
        super().__init__()
        np_dtype = resolve_dtype(dtype)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_parameter("gamma", Parameter(np.ones(channels, np_dtype)))
        self.beta = self.add_parameter("beta", Parameter(np.zeros(channels, np_dtype)))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, np_dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, np_dtype))

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self)


def batch_norm(x: Tensor, state: BatchNorm2d) -> Tensor:
    """
    Normalize over (batch, height, width) per channel.

    In training mode the batch statistics are used (biased variance) and the running statistics
    are updated with `momentum`, using the unbiased variance. In evaluation mode only the running
    statistics are read.
    """
    if x.ndim != 4 or x.shape[1] != state.channels:
        raise ShapeError(f"BatchNorm expects {state.channels} channels, got shape {list(x.shape)}.")
    gamma = state.gamma.data[None, :, None, None]
    beta = state.beta.data[None, :, None, None]
    axes = (0, 2, 3)
    xd = x.data

    if state.training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if m < 2:
            raise ContractError(
                f"BatchNorm in training mode needs at least 2 values per channel, got shape {list(x.shape)}."
            )
        mean = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (xd - mean) * inv
        momentum = state.momentum
        state.running_mean[...] = (1 - momentum) * state.running_mean + momentum * mean.reshape(-1)
        state.running_var[...] = (1 - momentum) * state.running_var + momentum * var.reshape(-1) * m / (m - 1)

        def _backward(g):
            dxhat = g * gamma
            dx = inv / m * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    else:
        inv = 1.0 / np.sqrt(state.running_var[None, :, None, None] + state.eps)
        xhat = (xd - state.running_mean[None, :, None, None]) * inv

        def _backward(g):
            return (g * gamma * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    out = (gamma * xhat + beta).astype(xd.dtype, copy=False)
    return apply_op("batch_norm", out, (x, state.gamma, state.beta), _backward)


# Pooling


def _adaptive_bins(n: int, out: int) -> list[tuple[int, int]]:
    return [((i * n) // out, -((-(i + 1) * n) // out)) for i in range(out)]


def adaptive_max_pool_half(x: Tensor) -> Tensor:
    """
    Adaptive max pooling to `(⌈h/2⌉, ⌈w/2⌉)`.

    Output cell `i` covers input rows `[⌊i·h/H⌋, ⌈(i+1)·h/H⌉)`; for odd extents neighbouring bins
    overlap by one row or column. Gradients go to the first maximum of each bin in row-major order.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ContractError(f"Adaptive max pooling needs spatial extents of at least 2, got {list(x.shape)}.")
    ho, wo = -(-h // 2), -(-w // 2)
    xd = x.data

    if h % 2 == 0 and w % 2 == 0:
        windows = xd.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        arg = np.argmax(windows, axis=-1)[..., None]
        out = np.take_along_axis(windows, arg, axis=-1)[..., 0]

        def _backward(g):
            routed = np.zeros((n, c, ho, wo, 4), g.dtype)
            np.put_along_axis(routed, arg, g[..., None], axis=-1)
            return (routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

        return apply_op("adaptive_max_pool", out, (x,), _backward)

    rows, cols = _adaptive_bins(h, ho), _adaptive_bins(w, wo)
    out = np.empty((n, c, ho, wo), xd.dtype)
    src_r = np.empty((n, c, ho, wo), np.intp)
    src_c = np.empty((n, c, ho, wo), np.intp)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            block = xd[:, :, r0:r1, c0:c1].reshape(n, c, -1)
            arg = np.argmax(block, axis=-1)
            out[:, :, i, j] = np.take_along_axis(block, arg[..., None], axis=-1)[..., 0]
            src_r[:, :, i, j] = r0 + arg // (c1 - c0)
            src_c[:, :, i, j] = c0 + arg % (c1 - c0)

    def _backward_loop(g):
        gx = np.zeros_like(xd)
        ni, ci = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        for i in range(ho):
            for j in range(wo):
                np.add.at(gx, (ni, ci, src_r[:, :, i, j], src_c[:, :, i, j]), g[:, :, i, j])
        return (gx,)

    return apply_op("adaptive_max_pool", out, (x,), _backward_loop)


def max_pool_3x3_s1(x: Tensor) -> Tensor:
    """3×3 max pooling with stride 1 and reflection padding; the shape is preserved."""
    n, c, h, w = x.shape
    xp = pad2d(x, (1, 1, 1, 1), "reflect")
    xd = xp.data
    stack = np.stack([xd[:, :, i : i + h, j : j + w] for i in range(3) for j in range(3)])
    arg = np.argmax(stack, axis=0)[None]
    out = np.take_along_axis(stack, arg, axis=0)[0]

    def _backward(g):
        routed = np.zeros_like(stack)
        np.put_along_axis(routed, arg, g[None], axis=0)
        gx = np.zeros_like(xd)
        for k in range(9):
            i, j = divmod(k, 3)
            gx[:, :, i : i + h, j : j + w] += routed[k]
        return (gx,)

    return apply_op("max_pool_3x3", out, (xp,), _backward)


# Resampling


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """
    The `(n_out, n_in)` linear interpolation matrix under half-pixel centers (`align_corners=False`):
    output sample `i` reads input coordinate `(i + 0.5) · n_in / n_out − 0.5`, clamped below at 0.
    """
    src = np.maximum((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), np.float64)
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m.astype(dtype)


def bilinear_upsample(x: Tensor, target_h: int, target_w: int) -> Tensor:
    h, w = x.shape[-2:]
    if target_h < h or target_w < w:
        raise ContractError(
            f"Bilinear upsampling cannot shrink {h}×{w} to {target_h}×{target_w}."
        )
    if (target_h, target_w) == (h, w):
        return x
    mh = interpolation_matrix(h, target_h, x.dtype)
    mw = interpolation_matrix(w, target_w, x.dtype)
    return apply_op(
        "bilinear_upsample",
        mh @ x.data @ mw.T,
        (x,),
        lambda g: (mh.T @ g @ mw,),
    )


# Channel attention


@dataclasses.dataclass(frozen=True)
class ChannelAttentionSpec:
    channels: int
    reduction: int = 4

    def __post_init__(self):
        if self.reduction < 1 or self.channels % self.reduction:
            raise ConfigError(
                f"Channel attention needs channels divisible by the reduction ratio, got {self.channels}/{self.reduction}."
            )

    @property
    def hidden(self) -> int:
        return self.channels // self.reduction


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: `x ⊙ sigmoid(W2·relu(W1·gap(x)))`."""

    def __init__(self, spec: ChannelAttentionSpec, rng: SeededRng, dtype=None):
        super().__init__()
        self.spec = spec
        self.squeeze = self.add_module("squeeze", pointwise(spec.channels, spec.hidden, rng, dtype))
        self.excite = self.add_module("excite", pointwise(spec.hidden, spec.channels, rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return channel_attention(x, self.spec, self)


def channel_attention(x: Tensor, spec: ChannelAttentionSpec, params: ChannelAttention) -> Tensor:
    if x.ndim != 4 or x.shape[1] != spec.channels:
        raise ShapeError(f"Channel attention expects {spec.channels} channels, got shape {list(x.shape)}.")
    pooled = reduce("mean", x, (2, 3))
    gate = sigmoid(params.excite(leaky_relu(params.squeeze(pooled), 0.0)))
    return mul(x, gate)
