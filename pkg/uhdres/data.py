"""
Image files, paired datasets, patch sampling and synthetic degradations.

Images are stored as binary portable pixmaps (P6, maxval 255). In memory they are channel-first
real arrays in `[0, 1]`, obtained by dividing the 8-bit values by 255. A dataset directory
contains `lq/<id>.ppm` (degraded) and `gt/<id>.ppm` (ground truth) files paired by identical stem.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Union
import warnings

import numpy as np
from scipy import ndimage

from uhdres.errors import ContractError
from uhdres.errors import ShapeError
from uhdres.errors import TruncatedImageError
from uhdres.errors import UnsupportedFormatError
from uhdres.errors import UnsupportedMaxvalError
from uhdres.tensor import SeededRng


@dataclasses.dataclass(frozen=True)
class ImageBuffer:
    pixels: np.ndarray
    """`(height, width, 3)` unsigned 8-bit samples."""

    def __post_init__(self):
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(
                f"Image buffers hold (h, w, 3) uint8 pixels, got {self.pixels.dtype} {list(self.pixels.shape)}."
            )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_array(self, dtype=np.float64) -> np.ndarray:
        """Channel-first `(3, h, w)` values in `[0, 1]`."""
        return (self.pixels.transpose(2, 0, 1) / 255.0).astype(dtype)

    @classmethod
    def from_array(cls, array: np.ndarray) -> ImageBuffer:
        """Quantize a `(3, h, w)` array in `[0, 1]`, clamping values outside."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3 or array.shape[0] != 3:
            raise ShapeError(f"Expected a (3, h, w) array, got shape {list(array.shape)}.")
        quantized = np.rint(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
        return cls(np.ascontiguousarray(quantized.transpose(1, 2, 0)))

    def crop(self, top: int, left: int, size: int) -> ImageBuffer:
        return ImageBuffer(self.pixels[top : top + size, left : left + size].copy())


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated header tokens, skipping `#` comments."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise TruncatedImageError("The pixmap header ends prematurely.")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def decode_ppm(data: bytes, name: str = "<bytes>") -> ImageBuffer:
    magic = data[:2]
    if magic != b"P6":
        kind = "ASCII (P3) pixmaps are" if magic == b"P3" else f"Files starting with {magic!r} are"
        raise UnsupportedFormatError(f"{name}: {kind} not supported, expected a binary P6 pixmap.")
    tokens, pos = _header_tokens(data[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise UnsupportedFormatError(f"{name}: malformed pixmap header {tokens!r}.") from None
    if maxval != 255:
        raise UnsupportedMaxvalError(f"{name}: maxval {maxval} is not supported, expected 255.")
    if width < 1 or height < 1:
        raise UnsupportedFormatError(f"{name}: invalid extents {width}×{height}.")
    start = 2 + pos + 1
    expected = width * height * 3
    raw = data[start : start + expected]
    if len(raw) < expected:
        raise TruncatedImageError(f"{name}: expected {expected} pixel bytes, found {len(raw)}.")
    return ImageBuffer(np.frombuffer(raw, np.uint8).reshape(height, width, 3).copy())


def encode_ppm(img: ImageBuffer) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def read_image(path: Path) -> ImageBuffer:
    path = Path(path)
    return decode_ppm(path.read_bytes(), str(path))


def write_image(img: ImageBuffer, path: Path) -> None:
    Path(path).write_bytes(encode_ppm(img))


@dataclasses.dataclass(frozen=True)
class PairedSample:
    lq: ImageBuffer
    gt: ImageBuffer
    id: str

    def __post_init__(self):
        if self.lq.pixels.shape != self.gt.pixels.shape:
            raise ShapeError(
                f"Pair {self.id!r}: degraded image is {self.lq.height}×{self.lq.width}, "
                f"ground truth is {self.gt.height}×{self.gt.width}."
            )


def load_dataset(root: Path) -> list[PairedSample]:
    """Load all `lq`/`gt` pairs under `root`, sorted by id. Unpaired files are skipped with a warning."""
    root = Path(root)
    lq_dir, gt_dir = root / "lq", root / "gt"
    for d in (lq_dir, gt_dir):
        if not d.is_dir():
            raise ContractError(f"Dataset directory {d} does not exist.")
    lq = {p.stem: p for p in lq_dir.glob("*.ppm")}
    gt = {p.stem: p for p in gt_dir.glob("*.ppm")}
    for stem in sorted(lq.keys() ^ gt.keys()):
        side = "gt" if stem in lq else "lq"
        warnings.warn(f"Skipping {stem!r}: no matching file in {root / side}.")
    return [
        PairedSample(read_image(lq[stem]), read_image(gt[stem]), stem)
        for stem in sorted(lq.keys() & gt.keys())
    ]


def save_dataset(root: Path, samples: list[PairedSample]) -> None:
    root = Path(root)
    for side in ("lq", "gt"):
        (root / side).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(s.lq, root / "lq" / f"{s.id}.ppm")
        write_image(s.gt, root / "gt" / f"{s.id}.ppm")


def sample_patch_pair(sample: PairedSample, size: int, rng: SeededRng) -> tuple[ImageBuffer, ImageBuffer]:
    """Crop the same uniformly chosen `size×size` window from both images."""
    h, w = sample.lq.height, sample.lq.width
    if size < 1 or size > min(h, w):
        raise ContractError(f"Patch size {size} does not fit into the {h}×{w} image {sample.id!r}.")
    top = rng.integers(0, h - size + 1)
    left = rng.integers(0, w - size + 1)
    return sample.lq.crop(top, left, size), sample.gt.crop(top, left, size)


class PatchSampler:
    """Draws batches of aligned patch pairs in a reproducible order."""

    def __init__(self, samples: list[PairedSample], size: int, rng: SeededRng):
        if not samples:
            raise ContractError("Cannot sample patches from an empty dataset.")
        self.samples = samples
        self.size = size
        self.rng = rng

    def batch(
        self, batch_size: int, dtype=np.float32, rng: SeededRng | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        `(lq, gt)` arrays of shape `(batch_size, 3, size, size)`. Samples and crop offsets are drawn
        from `rng` if given, otherwise from the sampler's own source.
        """
        rng = rng or self.rng
        lqs, gts = [], []
        for _ in range(batch_size):
            sample = self.samples[rng.integers(0, len(self.samples))]
            lq, gt = sample_patch_pair(sample, self.size, rng)
            lqs.append(lq.to_array(dtype))
            gts.append(gt.to_array(dtype))
        return np.stack(lqs), np.stack(gts)


# Synthetic degradations


@dataclasses.dataclass(frozen=True)
class LowLight:
    gamma: float = 3.0
    read_noise: float = 0.02


@dataclasses.dataclass(frozen=True)
class Blur:
    sigma: float = 2.0


@dataclasses.dataclass(frozen=True)
class GaussianNoise:
    sigma: float = 0.02


Degradation = Union[LowLight, Blur, GaussianNoise]

DEGRADATION_KINDS = ("lowlight", "blur", "noise")


def synth_degrade(gt: np.ndarray, kind: Degradation, rng: SeededRng) -> np.ndarray:
    """Degrade a `(…, h, w)` image in `[0, 1]`; the result stays in `[0, 1]`."""
    gt = np.asarray(gt, dtype=np.float64)
    if isinstance(kind, LowLight):
        if kind.gamma <= 0 or kind.read_noise < 0:
            raise ContractError(f"Low-light needs gamma > 0 and read_noise ≥ 0, got {kind}.")
        lq = gt**kind.gamma
        if kind.read_noise > 0:
            lq = lq + rng.normal(0.0, kind.read_noise, gt.shape, np.float64)
    elif isinstance(kind, Blur):
        if kind.sigma <= 0:
            raise ContractError(f"Blur needs sigma > 0, got {kind.sigma}.")
        sigma = (0.0,) * (gt.ndim - 2) + (kind.sigma, kind.sigma)
        lq = ndimage.gaussian_filter(gt, sigma=sigma, mode="mirror")
    elif isinstance(kind, GaussianNoise):
        if kind.sigma <= 0:
            raise ContractError(f"Gaussian noise needs sigma > 0, got {kind.sigma}.")
        lq = gt + rng.normal(0.0, kind.sigma, gt.shape, np.float64)
    else:
        raise ContractError(f"Unknown degradation {kind!r}.")
    return np.clip(lq, 0.0, 1.0)


def random_degradation(kind: str, rng: SeededRng) -> Degradation:
    """A degradation with default-range parameters: gamma ∈ [2, 4], blur σ ∈ [1, 3], noise σ = 0.02."""
    if kind == "lowlight":
        return LowLight(gamma=float(rng.uniform(2.0, 4.0, (1,), np.float64)[0]))
    if kind == "blur":
        return Blur(sigma=float(rng.uniform(1.0, 3.0, (1,), np.float64)[0]))
    if kind == "noise":
        return GaussianNoise()
    raise ContractError(f"Unknown degradation kind {kind!r}, expected one of {list(DEGRADATION_KINDS)}.")


# Procedural test images

PATTERNS = ("gradient", "checker", "rings", "blobs", "texture")


def pattern_image(kind: str, height: int, width: int, seed: int = 0) -> np.ndarray:
    """A deterministic `(3, height, width)` image in `[0, 1]` with natural-looking structure."""
    rng = SeededRng(seed)
    y, x = np.mgrid[0:height, 0:width] / max(height, width)
    if kind == "gradient":
        img = np.stack([x, y, 0.5 * (1 - x) + 0.25 * np.sin(6 * math.pi * x * y)])
    elif kind == "checker":
        cells = ((np.floor(x * 8) + np.floor(y * 8)) % 2).astype(np.float64)
        img = np.stack([0.2 + 0.6 * cells, 0.3 + 0.4 * cells * x, 0.7 - 0.5 * cells * y])
    elif kind == "rings":
        r = np.hypot(x - 0.5, y - 0.5)
        img = np.stack([0.5 + 0.5 * np.cos(40 * r), 0.5 + 0.5 * np.cos(25 * r + 1), 0.5 + 0.4 * np.sin(12 * r)])
    elif kind == "blobs":
        img = np.full((3, height, width), 0.1)
        centers = rng.uniform(0.0, 1.0, (6, 2), np.float64)
        colors = rng.uniform(0.2, 0.9, (6, 3), np.float64)
        widths = rng.uniform(0.05, 0.2, (6,), np.float64)
        for (cy, cx), color, s in zip(centers, colors, widths):
            bump = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
            img = img + color[:, None, None] * bump
    elif kind == "texture":
        noise = rng.uniform(0.0, 1.0, (3, height, width), np.float64)
        smooth = ndimage.gaussian_filter(noise, sigma=(0, 2, 2), mode="wrap")
        smooth = (smooth - smooth.min()) / max(smooth.max() - smooth.min(), 1e-12)
        img = 0.15 + 0.7 * smooth
    else:
        raise ContractError(f"Unknown pattern {kind!r}, expected one of {list(PATTERNS)}.")
    return np.clip(img, 0.0, 1.0)


def synthetic_dataset(count: int, size: int, kind: str, seed: int = 0) -> list[PairedSample]:
    """`count` pairs of procedural test images and their degraded versions, quantized to 8 bits."""
    if count < 1 or size < 1:
        raise ContractError(f"Need a positive count and size, got count={count}, size={size}.")
    rng = SeededRng(seed)
    samples = []
    for i in range(count):
        gt = ImageBuffer.from_array(pattern_image(PATTERNS[i % len(PATTERNS)], size, size, seed + i))
        degradation = random_degradation(kind, rng)
        lq = ImageBuffer.from_array(synth_degrade(gt.to_array(), degradation, rng))
        samples.append(PairedSample(lq, gt, f"{i:04d}"))
    return samples
