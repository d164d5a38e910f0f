"""
The assembled restoration network.

```
I_LQ ─ reflect-pad to a multiple of 8 ─ stem 3×3 ─ enc1 ────────────────────────── + ─ dec1 ─ head 3×3 ─ crop ─ + I_LQ
                                                   └ down ─ enc2 ───────── + ─ dec2 ─ up ┘
                                                                 └ down ─ bottleneck ─ up ┘
```

Encoder levels hold `level_depths[0]` and `level_depths[1]` DAEBs, the bottleneck holds
`level_depths[2]`, and the decoder mirrors the encoder. Downsampling is a strided 3×3
convolution doubling the channels, upsampling is bilinear ×2 followed by a 1×1 convolution
halving them, and skip connections are added. The network predicts a residual `R`, so the
restored image is `I_LQ + R`; it is only clamped to `[0, 1]` by `restore`.
"""

from __future__ import annotations

from collections.abc import Sequence
import dataclasses

import numpy as np

from uhdres.blocks import DAEB
from uhdres.blocks import SAMU_MODES
from uhdres.blocks import SamuMode
from uhdres.errors import ConfigError
from uhdres.errors import ContractError
from uhdres.errors import ShapeError
from uhdres.nn import Conv2d
from uhdres.nn import Conv2dSpec
from uhdres.nn import Module
from uhdres.nn import bilinear_upsample
from uhdres.nn import pad2d
from uhdres.nn import pointwise
from uhdres.tensor import DTYPES
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import add
from uhdres.tensor import as_tensor
from uhdres.tensor import narrow
from uhdres.tensor import no_grad

PAD_MULTIPLE = 8
"""Input extents are reflect-padded up to a multiple of this."""

KERNEL_PRESETS: dict[str, tuple[int, int, int]] = {
    "id-3-7-11": (3, 7, 11),
    "id-3-9-15": (3, 9, 15),
    "id-5-9-13": (5, 9, 13),
    "id-5-11-17": (5, 11, 17),
    "id-7-11-15": (7, 11, 15),
    "id-7-13-19": (7, 13, 19),
}
"""Named multi-scale kernel configurations of the MSCA depthwise branches."""


@dataclasses.dataclass(frozen=True)
class UHDResConfig:
    initial_channels: int = 12
    level_channels: tuple[int, ...] = (12, 24, 48)
    level_depths: tuple[int, ...] = (2, 3, 4)
    expansion: int = 2
    msca_kernels: tuple[int, ...] = (5, 9, 13)
    strip_kernel: int = 11
    cam_reduction: int = 4
    dtype: str = "float32"
    samu_mode: SamuMode = "amplitude"
    use_msca: bool = True
    use_samu: bool = True
    use_sru: bool = True
    use_sgfn: bool = True

    def __post_init__(self):
        for name in ("level_channels", "level_depths", "msca_kernels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.level_channels) != 3 or len(self.level_depths) != 3:
            raise ConfigError("level_channels and level_depths must have exactly three entries.")
        if self.level_channels[0] != self.initial_channels:
            raise ConfigError(
                f"level_channels[0] ({self.level_channels[0]}) must equal initial_channels ({self.initial_channels})."
            )
        for a, b in zip(self.level_channels, self.level_channels[1:]):
            if b != 2 * a:
                raise ConfigError(f"Channels must double per level, got {list(self.level_channels)}.")
        for c in self.level_channels:
            if c < 4 or c % 4 or c % self.cam_reduction:
                raise ConfigError(
                    f"Every level width must be divisible by 4 and by cam_reduction={self.cam_reduction}, got {c}."
                )
        if any(d < 1 for d in self.level_depths):
            raise ConfigError(f"Level depths must be positive, got {list(self.level_depths)}.")
        if self.expansion < 1 or (self.expansion * self.initial_channels) % 4:
            raise ConfigError(f"expansion={self.expansion} does not give a channel count divisible by 4.")
        if len(self.msca_kernels) != 3 or any(k < 1 or k % 2 == 0 for k in self.msca_kernels):
            raise ConfigError(f"msca_kernels must be three odd sizes, got {list(self.msca_kernels)}.")
        if self.strip_kernel < 1 or self.strip_kernel % 2 == 0:
            raise ConfigError(f"strip_kernel must be odd, got {self.strip_kernel}.")
        if self.cam_reduction < 1:
            raise ConfigError(f"cam_reduction must be positive, got {self.cam_reduction}.")
        if self.dtype not in DTYPES:
            raise ConfigError(f"Unknown element type {self.dtype!r}, expected one of {sorted(DTYPES)}.")
        if self.samu_mode not in SAMU_MODES:
            raise ConfigError(f"Unknown samu_mode {self.samu_mode!r}, expected one of {list(SAMU_MODES)}.")

    def replace(self, **changes) -> UHDResConfig:
        return dataclasses.replace(self, **changes)

    def daeb_options(self) -> dict:
        return dict(
            expansion=self.expansion,
            kernels=self.msca_kernels,
            strip_kernel=self.strip_kernel,
            cam_reduction=self.cam_reduction,
            samu_mode=self.samu_mode,
            use_msca=self.use_msca,
            use_samu=self.use_samu,
            use_sru=self.use_sru,
            use_sgfn=self.use_sgfn,
            dtype=self.dtype,
        )


class Stage(Module):
    """A sequence of DAEBs at one width."""

    def __init__(self, channels: int, depth: int, rng: SeededRng, options: dict):
        super().__init__()
        self.blocks = [self.add_module(f"daeb{i}", DAEB(channels, rng, **options)) for i in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Upsample(Module):
    """Bilinear ×2 followed by a 1×1 convolution halving the channels."""

    def __init__(self, channels: int, rng: SeededRng, dtype=None):
        super().__init__()
        self.conv = self.add_module("conv", pointwise(channels, channels // 2, rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        return self.conv(bilinear_upsample(x, 2 * h, 2 * w))


class UHDResModel(Module):
    def __init__(self, config: UHDResConfig, rng: SeededRng):
        super().__init__()
        self.config = config
        c0, c1, c2 = config.level_channels
        n0, n1, n2 = config.level_depths
        dtype = config.dtype
        options = config.daeb_options()

        def down(c: int) -> Conv2d:
            return Conv2d(Conv2dSpec(c, 2 * c, (3, 3), stride=2), rng, dtype)

        self.stem = self.add_module("stem", Conv2d(Conv2dSpec(3, c0, (3, 3), padding="zeros"), rng, dtype))
        self.enc1 = self.add_module("enc1", Stage(c0, n0, rng, options))
        self.down1 = self.add_module("down1", down(c0))
        self.enc2 = self.add_module("enc2", Stage(c1, n1, rng, options))
        self.down2 = self.add_module("down2", down(c1))
        self.bottleneck = self.add_module("bottleneck", Stage(c2, n2, rng, options))
        self.up2 = self.add_module("up2", Upsample(c2, rng, dtype))
        self.dec2 = self.add_module("dec2", Stage(c1, n1, rng, options))
        self.up1 = self.add_module("up1", Upsample(c1, rng, dtype))
        self.dec1 = self.add_module("dec1", Stage(c0, n0, rng, options))
        self.head = self.add_module("head", Conv2d(Conv2dSpec(c0, 3, (3, 3), padding="zeros"), rng, dtype))

    def __repr__(self):
        return f"UHDResModel({self.config}, params={count_params(self)})"

    def residual(self, x: Tensor) -> Tensor:
        """The predicted residual `R` for a padded input."""
        e1 = self.enc1(self.stem(x))
        e2 = self.enc2(self.down1(e1))
        b = self.bottleneck(self.down2(e2))
        d2 = self.dec2(add(self.up2(b), e2))
        d1 = self.dec1(add(self.up1(d2), e1))
        return self.head(d1)

    def forward(self, x: Tensor) -> Tensor:
        """`I_LQ + R` for an `(n, 3, h, w)` input with `h, w ≥ 8`; not clamped."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"The model expects (n, 3, h, w) images, got shape {list(x.shape)}.")
        h, w = x.shape[-2:]
        if h < PAD_MULTIPLE or w < PAD_MULTIPLE:
            raise ContractError(f"Images must be at least {PAD_MULTIPLE}×{PAD_MULTIPLE}, got {h}×{w}.")
        ph, pw = -h % PAD_MULTIPLE, -w % PAD_MULTIPLE
        r = self.residual(pad2d(x, (0, ph, 0, pw), "reflect"))
        if ph:
            r = narrow(r, 2, 0, h)
        if pw:
            r = narrow(r, 3, 0, w)
        return add(x, r)


def build(config: UHDResConfig | None = None, seed: int = 0) -> UHDResModel:
    """Build a model with parameters initialized deterministically from `seed`."""
    model = UHDResModel(config or UHDResConfig(), SeededRng(seed))
    model.assign_names()
    return model


def restore(model: UHDResModel, image) -> np.ndarray:
    """
    Restore a `(3, h, w)` or `(n, 3, h, w)` image in `[0, 1]` without recording gradients.
    The result is clamped to `[0, 1]`.
    """
    x = np.asarray(getattr(image, "data", image))
    single = x.ndim == 3
    t = as_tensor(x[None] if single else x, model.config.dtype)
    with no_grad():
        out = np.clip(model(t).data, 0.0, 1.0)
    return out[0] if single else out


def count_params(model: Module) -> int:
    """Total number of scalars over all parameters; shared parameters are counted once."""
    return sum(p.size for p in model.parameters())


def param_breakdown(model: Module, depth: int = 2) -> list[tuple[str, int]]:
    """Parameter counts grouped by the first `depth` components of the dotted names, in model order."""
    groups: dict[str, int] = {}
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth]) if name.count(".") >= depth else name.rsplit(".", 1)[0]
        groups[key] = groups.get(key, 0) + p.size
    return list(groups.items())


def kernel_preset(name_or_sizes: str | Sequence[int]) -> tuple[int, int, int]:
    """Resolve `id-5-9-13`, `5,9,13` or a sequence of three sizes."""
    if isinstance(name_or_sizes, str):
        if name_or_sizes in KERNEL_PRESETS:
            return KERNEL_PRESETS[name_or_sizes]
        try:
            sizes = tuple(int(k) for k in name_or_sizes.removeprefix("id-").replace("-", ",").split(","))
        except ValueError:
            raise ConfigError(f"Invalid kernel specification {name_or_sizes!r}.") from None
    else:
        sizes = tuple(int(k) for k in name_or_sizes)
    if len(sizes) != 3:
        raise ConfigError(f"Expected three kernel sizes, got {list(sizes)}.")
    return sizes  # type: ignore[return-value]
