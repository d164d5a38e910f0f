"""
The architectural units of the network.

A DAEB (dual-domain adaptive enhancement block) is the repeated residual unit:

```
x ← x + SSFM(BN(x))
x ← x + SGFN(BN(x))
```

SSFM, the spatio-spectral fusion module, is MSCA followed by DSMB. MSCA (multi-scale context
aggregator) expands `c → r·c` channels and runs three large-kernel depthwise convolutions next to
an identity group. DSMB (decoupled spectral modulation block) splits that into a low-frequency
branch, modulated in the Fourier domain by SAMU, and a high-frequency branch refined by SRU, both
at `c/2` channels, and fuses them back to `c` channels followed by channel attention.
SGFN, the shared gated feed-forward network, runs two gated branches whose horizontal and vertical
strip convolutions share one set of weights.

Every block preserves spatial extents. MSCA is the only block that expands channels and DSMB the
only one that contracts them, so SSFM is channel-neutral.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Literal

from uhdres.errors import ConfigError
from uhdres.errors import ContractError
from uhdres.errors import ShapeError
from uhdres.nn import BatchNorm2d
from uhdres.nn import ChannelAttention
from uhdres.nn import ChannelAttentionSpec
from uhdres.nn import Conv2d
from uhdres.nn import Conv2dSpec
from uhdres.nn import Identity
from uhdres.nn import Module
from uhdres.nn import adaptive_max_pool_half
from uhdres.nn import bilinear_upsample
from uhdres.nn import depthwise
from uhdres.nn import max_pool_3x3_s1
from uhdres.nn import pointwise
from uhdres.spectral import ComplexSpectrum
from uhdres.spectral import amplitude
from uhdres.spectral import fft2_real
from uhdres.spectral import ifft2_real
from uhdres.spectral import phase
from uhdres.spectral import polar_reconstruct
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import add
from uhdres.tensor import concat
from uhdres.tensor import gelu
from uhdres.tensor import leaky_relu
from uhdres.tensor import mul
from uhdres.tensor import split

SamuMode = Literal["amplitude", "phase", "both"]
SAMU_MODES: tuple[SamuMode, ...] = ("amplitude", "phase", "both")


def _check_channels(block: str, x: Tensor, channels: int) -> None:
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"{block} expects {channels} channels, got shape {list(x.shape)}.")


class MSCA(Module):
    """Multi-scale context aggregator: PWC `c → r·c`, then identity plus depthwise `k×k` per group."""

    def __init__(
        self,
        channels: int,
        rng: SeededRng,
        *,
        expansion: int = 2,
        kernels: Sequence[int] = (5, 9, 13),
        dtype=None,
    ):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"MSCA needs an even channel count, got {channels}.")
        if len(kernels) != 3:
            raise ConfigError(f"MSCA needs exactly three kernel sizes, got {list(kernels)}.")
        self.channels = channels
        self.out_channels = expansion * channels
        if self.out_channels % 4:
            raise ShapeError(f"MSCA cannot split {self.out_channels} channels into 4 groups.")
        group = self.out_channels // 4
        self.pwc = self.add_module("pwc", pointwise(channels, self.out_channels, rng, dtype))
        self.branches = [
            self.add_module(f"dw{k}", depthwise(group, (k, k), rng, dtype)) for k in kernels
        ]

    def forward(self, x: Tensor) -> Tensor:
        _check_channels("MSCA", x, self.channels)
        identity, *groups = split(self.pwc(x), 4)
        return concat([identity] + [conv(g) for conv, g in zip(self.branches, groups)])


class SpectralMLP(Module):
    """Channel-preserving `Conv1×1 → LeakyReLU(0.1) → Conv1×1` applied to a spectral plane."""

    def __init__(self, channels: int, rng: SeededRng, dtype=None):
        super().__init__()
        self.fc1 = self.add_module("fc1", pointwise(channels, channels, rng, dtype))
        self.fc2 = self.add_module("fc2", pointwise(channels, channels, rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(leaky_relu(self.fc1(x), 0.1))


class SAMU(Module):
    """
    Spectral amplitude modulation unit.

    The input is max-pooled to half resolution and filtered by a 3×3 depthwise convolution.
    Its spectrum is split into amplitude and phase; by default only the amplitude is modulated
    and the phase passes through unchanged. The reconstructed features are added back to the
    pooled features, projected, upsampled to the input size and used as a multiplicative gate.
    """

    def __init__(self, channels: int, rng: SeededRng, *, mode: SamuMode = "amplitude", dtype=None):
        super().__init__()
        if mode not in SAMU_MODES:
            raise ConfigError(f"Unknown SAMU mode {mode!r}, expected one of {list(SAMU_MODES)}.")
        self.channels = channels
        self.mode = mode
        self.dw = self.add_module("dw", depthwise(channels, (3, 3), rng, dtype))
        self.amp_mlp: SpectralMLP | None = None
        self.phase_mlp: SpectralMLP | None = None
        if mode in ("amplitude", "both"):
            self.amp_mlp = self.add_module("amp_mlp", SpectralMLP(channels, rng, dtype))
        if mode in ("phase", "both"):
            self.phase_mlp = self.add_module("phase_mlp", SpectralMLP(channels, rng, dtype))
        self.pwc = self.add_module("pwc", pointwise(channels, channels, rng, dtype))

    def modulate(self, z: ComplexSpectrum) -> ComplexSpectrum:
        a, p = amplitude(z), phase(z)
        if self.amp_mlp is not None:
            a = self.amp_mlp(a)
        if self.phase_mlp is not None:
            p = self.phase_mlp(p)
        return polar_reconstruct(a, p, z.height, z.width)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels("SAMU", x, self.channels)
        h, w = x.shape[-2:]
        if h < 2 or w < 2:
            raise ContractError(f"SAMU needs spatial extents of at least 2, got {h}×{w}.")
        features = self.dw(adaptive_max_pool_half(x))
        restored = add(ifft2_real(self.modulate(fft2_real(features))), features)
        gate = bilinear_upsample(self.pwc(restored), h, w)
        return mul(gate, x)


class SRU(Module):
    """
    Structural refinement unit: one half of the channels goes through 3×3 max pooling and a PWC,
    the other through a 3×3 convolution and GELU; both are fused by a 3×3 convolution and added
    to the input.
    """

    def __init__(self, channels: int, rng: SeededRng, dtype=None):
        super().__init__()
        if channels % 2:
            raise ShapeError(f"SRU needs an even channel count, got {channels}.")
        self.channels = channels
        half = channels // 2
        self.pwc = self.add_module("pwc", pointwise(half, half, rng, dtype))
        self.conv = self.add_module("conv", Conv2d(Conv2dSpec(half, half, (3, 3)), rng, dtype))
        self.fuse = self.add_module("fuse", Conv2d(Conv2dSpec(channels, channels, (3, 3)), rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels("SRU", x, self.channels)
        pooled, local = split(x, 2)
        pooled = self.pwc(max_pool_3x3_s1(pooled))
        local = gelu(self.conv(local))
        return add(self.fuse(concat([pooled, local])), x)


class DSMB(Module):
    """
    Decoupled spectral modulation block, contracting `in_channels → channels`.

    `X_lf` and `X_hf` are PWC projections to `channels/2`; `SAMU(X_lf) + SRU(X_hf)` is projected
    back to `channels`, followed by a 1×1 convolution, a 3×3 depthwise convolution and
    channel attention.
    """

    def __init__(
        self,
        in_channels: int,
        channels: int,
        rng: SeededRng,
        *,
        use_samu: bool = True,
        use_sru: bool = True,
        samu_mode: SamuMode = "amplitude",
        cam_reduction: int = 4,
        dtype=None,
    ):
        super().__init__()
        if channels % 4:
            raise ShapeError(f"DSMB needs a channel count divisible by 4, got {channels}.")
        self.in_channels = in_channels
        self.channels = channels
        branch = channels // 2
        self.lf = self.add_module("lf", pointwise(in_channels, branch, rng, dtype))
        self.hf = self.add_module("hf", pointwise(in_channels, branch, rng, dtype))
        self.samu: Module = self.add_module(
            "samu", SAMU(branch, rng, mode=samu_mode, dtype=dtype) if use_samu else Identity()
        )
        self.sru: Module = self.add_module("sru", SRU(branch, rng, dtype) if use_sru else Identity())
        self.fre = self.add_module("fre", pointwise(branch, channels, rng, dtype))
        self.proj = self.add_module("proj", pointwise(channels, channels, rng, dtype))
        self.dw = self.add_module("dw", depthwise(channels, (3, 3), rng, dtype))
        self.cam = self.add_module(
            "cam", ChannelAttention(ChannelAttentionSpec(channels, cam_reduction), rng, dtype)
        )

    def forward(self, x: Tensor) -> Tensor:
        _check_channels("DSMB", x, self.in_channels)
        fused = add(self.samu(self.lf(x)), self.sru(self.hf(x)))
        return self.cam(self.dw(self.proj(self.fre(fused))))


class SSFM(Module):
    """Spatio-spectral fusion module: `DSMB(MSCA(x))`, channel-neutral."""

    def __init__(
        self,
        channels: int,
        rng: SeededRng,
        *,
        expansion: int = 2,
        kernels: Sequence[int] = (5, 9, 13),
        use_msca: bool = True,
        use_samu: bool = True,
        use_sru: bool = True,
        samu_mode: SamuMode = "amplitude",
        cam_reduction: int = 4,
        dtype=None,
    ):
        super().__init__()
        self.channels = channels
        self.msca: Module
        if use_msca:
            self.msca = self.add_module(
                "msca", MSCA(channels, rng, expansion=expansion, kernels=kernels, dtype=dtype)
            )
            inner = expansion * channels
        else:
            self.msca = self.add_module("msca", Identity())
            inner = channels
        self.dsmb = self.add_module(
            "dsmb",
            DSMB(
                inner,
                channels,
                rng,
                use_samu=use_samu,
                use_sru=use_sru,
                samu_mode=samu_mode,
                cam_reduction=cam_reduction,
                dtype=dtype,
            ),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.dsmb(self.msca(x))


class StripGate(Module):
    """The `1×k` then `k×1` depthwise strip convolutions shared by both SGFN branches."""

    def __init__(self, channels: int, kernel: int, rng: SeededRng, dtype=None):
        super().__init__()
        self.horizontal = self.add_module("horizontal", depthwise(channels, (1, kernel), rng, dtype))
        self.vertical = self.add_module("vertical", depthwise(channels, (kernel, 1), rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        return self.vertical(self.horizontal(x))


class GatedBranch(Module):
    """One SGFN branch: `PWC(V ⊙ gate(Q))` where `Q, V` split a `c → 2c` projection."""

    def __init__(self, channels: int, gate: StripGate, rng: SeededRng, dtype=None):
        super().__init__()
        self.qv = self.add_module("qv", pointwise(channels, 2 * channels, rng, dtype))
        self.out = self.add_module("out", pointwise(channels, channels, rng, dtype))
        # referenced, not owned
        self.gate = gate

    def forward(self, z: Tensor) -> Tensor:
        q, v = split(self.qv(z), 2)
        return self.out(mul(v, self.gate(q)))


class SGFN(Module):
    """Shared gated feed-forward network, channel-preserving."""

    def __init__(self, channels: int, rng: SeededRng, *, strip_kernel: int = 11, dtype=None):
        super().__init__()
        self.channels = channels
        self.expand = self.add_module("expand", pointwise(channels, 2 * channels, rng, dtype))
        self.gate = self.add_module("gate", StripGate(channels, strip_kernel, rng, dtype))
        self.branches = [
            self.add_module(f"branch{i}", GatedBranch(channels, self.gate, rng, dtype)) for i in range(2)
        ]
        self.project = self.add_module("project", pointwise(2 * channels, channels, rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels("SGFN", x, self.channels)
        zs = split(self.expand(x), 2)
        return self.project(concat([branch(z) for branch, z in zip(self.branches, zs)]))


class DAEB(Module):
    """Dual-domain adaptive enhancement block. Without SGFN only the first residual step remains."""

    def __init__(
        self,
        channels: int,
        rng: SeededRng,
        *,
        expansion: int = 2,
        kernels: Sequence[int] = (5, 9, 13),
        strip_kernel: int = 11,
        cam_reduction: int = 4,
        samu_mode: SamuMode = "amplitude",
        use_msca: bool = True,
        use_samu: bool = True,
        use_sru: bool = True,
        use_sgfn: bool = True,
        dtype=None,
    ):
        super().__init__()
        self.channels = channels
        self.bn1 = self.add_module("bn1", BatchNorm2d(channels, dtype=dtype))
        self.ssfm = self.add_module(
            "ssfm",
            SSFM(
                channels,
                rng,
                expansion=expansion,
                kernels=kernels,
                use_msca=use_msca,
                use_samu=use_samu,
                use_sru=use_sru,
                samu_mode=samu_mode,
                cam_reduction=cam_reduction,
                dtype=dtype,
            ),
        )
        self.bn2: BatchNorm2d | None = None
        self.sgfn: SGFN | None = None
        if use_sgfn:
            self.bn2 = self.add_module("bn2", BatchNorm2d(channels, dtype=dtype))
            self.sgfn = self.add_module("sgfn", SGFN(channels, rng, strip_kernel=strip_kernel, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels("DAEB", x, self.channels)
        x = add(x, self.ssfm(self.bn1(x)))
        if self.sgfn is not None and self.bn2 is not None:
            x = add(x, self.sgfn(self.bn2(x)))
        return x
