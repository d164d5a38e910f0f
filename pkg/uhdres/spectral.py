"""
Two-dimensional real-input Fourier transforms, amplitude/phase decoupling and polar
reconstruction, all differentiable, plus the spectrum perturbation experiment.

The forward transform is unnormalized: the DC bin of an `h×w` image equals the sum of its pixels.
The inverse applies the `1/(h·w)` factor. Spectra are stored as two real planes holding the
non-redundant half-plane of shape `(..., h, w // 2 + 1)`; the full spectrum follows from
Hermitian symmetry, so inverting any half-plane yields a real image.

Transforms are computed with `numpy.fft` (pocketfft), which handles arbitrary extents, including
large prime factors, in `O(n log n)`.
"""

from __future__ import annotations

from collections.abc import Iterable
from collections.abc import Sequence
import csv
import dataclasses
import math
from pathlib import Path
from typing import Literal
import warnings

import numpy as np

from uhdres.errors import ContractError
from uhdres.errors import ShapeError
from uhdres.metrics import psnr
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import apply_op
from uhdres.tensor import clamp_min
from uhdres.tensor import cos
from uhdres.tensor import mul
from uhdres.tensor import no_grad
from uhdres.tensor import sin

Component = Literal["amplitude", "phase"]
AmplitudeNoise = Literal["additive", "relative"]

COMPONENTS: tuple[Component, ...] = ("amplitude", "phase")


@dataclasses.dataclass(frozen=True)
class ComplexSpectrum:
    """A half-plane spectrum with the spatial extents of its source image."""

    real: Tensor
    imag: Tensor
    height: int
    width: int
    clamped: int = 0
    """Number of negative amplitudes clamped to zero by `polar_reconstruct`."""

    def __post_init__(self):
        expected = (self.height, self.width // 2 + 1)
        if self.real.shape != self.imag.shape or self.real.shape[-2:] != expected:
            raise ShapeError(
                f"Spectrum planes {list(self.real.shape)} / {list(self.imag.shape)} do not match "
                f"source extents {self.height}×{self.width}."
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.real.shape

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def _hermitian_weights(w: int) -> np.ndarray:
    """How often each half-plane column occurs in the full spectrum."""
    alpha = np.full(w // 2 + 1, 2.0)
    alpha[0] = 1.0
    if w % 2 == 0:
        alpha[-1] = 1.0
    return alpha


def fft2_real(x: Tensor) -> ComplexSpectrum:
    """Unnormalized 2-D FFT over the last two axes of a real tensor."""
    h, w = x.shape[-2:]
    z = np.fft.rfft2(x.data, axes=(-2, -1))
    dtype = x.dtype

    def _adjoint(gc: np.ndarray) -> np.ndarray:
        full = np.zeros(x.shape, np.complex128)
        full[..., : w // 2 + 1] = gc
        return (np.fft.ifft2(full, axes=(-2, -1)).real * (h * w)).astype(dtype)

    real = apply_op("fft2_real.re", z.real.astype(dtype), (x,), lambda g: (_adjoint(g),))
    imag = apply_op("fft2_real.im", z.imag.astype(dtype), (x,), lambda g: (_adjoint(1j * g),))
    return ComplexSpectrum(real, imag, h, w)


def ifft2_real(z: ComplexSpectrum) -> Tensor:
    """Inverse of `fft2_real`, including the `1/(h·w)` normalization."""
    h, w = z.height, z.width
    dtype = z.real.dtype
    out = np.fft.irfft2(z.to_complex(), s=(h, w), axes=(-2, -1)).astype(dtype)
    alpha = _hermitian_weights(w) / (h * w)

    def _backward(g):
        gz = np.fft.rfft2(g, axes=(-2, -1)) * alpha
        return (gz.real.astype(dtype), gz.imag.astype(dtype))

    return apply_op("ifft2_real", out, (z.real, z.imag), _backward)


def amplitude(z: ComplexSpectrum) -> Tensor:
    """`√(re² + im²)`; its gradient is defined as zero at exactly zero amplitude."""
    re, im = z.real.data, z.imag.data
    a = np.hypot(re, im)
    nonzero = a > 0
    safe = np.where(nonzero, a, 1)

    def _backward(g):
        scale = np.where(nonzero, g / safe, 0)
        return (scale * re, scale * im)

    return apply_op("amplitude", a, (z.real, z.imag), _backward)


def phase(z: ComplexSpectrum) -> Tensor:
    """`atan2(im, re)` in `(−π, π]`; zero for the empty bin, where the gradient is zero as well."""
    re, im = z.real.data, z.imag.data
    p = np.arctan2(im, re)
    p = np.where(p <= -np.pi, np.pi, p).astype(re.dtype, copy=False)
    sq = re * re + im * im
    nonzero = sq > 0
    safe = np.where(nonzero, sq, 1)

    def _backward(g):
        scale = np.where(nonzero, g / safe, 0)
        return (-scale * im, scale * re)

    return apply_op("phase", p, (z.real, z.imag), _backward)


def polar_reconstruct(a: Tensor, p: Tensor, height: int, width: int) -> ComplexSpectrum:
    """
    Build the spectrum `a·e^{i·p}` for source extents `height×width`.
    Negative amplitudes are clamped to zero and counted in `ComplexSpectrum.clamped`.
    """
    if a.shape != p.shape:
        raise ShapeError(f"Amplitude {list(a.shape)} and phase {list(p.shape)} differ in shape.")
    clamped = int(np.count_nonzero(a.data < 0))
    if clamped:
        a = clamp_min(a, 0.0)
    return ComplexSpectrum(mul(a, cos(p)), mul(a, sin(p)), height, width, clamped)


def spectrum_energy(z: ComplexSpectrum) -> np.ndarray:
    """`(1/(h·w))·Σ|Z|²` over the full spectrum, which equals the spatial `Σx²` (Parseval)."""
    power = z.real.data.astype(np.float64) ** 2 + z.imag.data.astype(np.float64) ** 2
    return np.sum(power * _hermitian_weights(z.width), axis=(-2, -1)) / (z.height * z.width)


def wrap_phase(p: np.ndarray) -> np.ndarray:
    """Map angles to `(−π, π]`."""
    return np.pi - np.mod(np.pi - p, 2 * np.pi)


def perturb_spectrum(
    img: np.ndarray,
    target: Component,
    eps: float,
    rng: SeededRng,
    amplitude_noise: AmplitudeNoise = "additive",
) -> np.ndarray:
    """
    Perturb exactly one spectral component of a `(…, h, w)` image in `[0, 1]` and transform back.

    Noise `u ~ Uniform(−1, 1)` is drawn i.i.d. per half-plane bin. The phase becomes
    `wrap(P + eps·u)`. The amplitude becomes `max(A + eps·u, 0)` for `amplitude_noise="additive"`
    (on the unnormalized spectrum) or `max(A·(1 + eps·u), 0)` for `"relative"`.
    The result is clamped to `[0, 1]`.
    """
    if eps < 0:
        raise ContractError(f"Perturbation strength must be non-negative, got {eps}.")
    if target not in COMPONENTS:
        raise ContractError(f"Unknown spectral component {target!r}, expected one of {list(COMPONENTS)}.")
    if amplitude_noise not in ("additive", "relative"):
        raise ContractError(f"Unknown amplitude noise model {amplitude_noise!r}.")
    with no_grad():
        x = Tensor(np.asarray(img, dtype=np.float64))
        z = fft2_real(x)
        a = amplitude(z).data
        p = phase(z).data
        u = rng.uniform(-1.0, 1.0, a.shape, np.float64)
        if target == "phase":
            p = wrap_phase(p + eps * u)
        elif amplitude_noise == "additive":
            a = np.maximum(a + eps * u, 0)
        else:
            a = np.maximum(a * (1 + eps * u), 0)
        out = ifft2_real(polar_reconstruct(Tensor(a), Tensor(p), z.height, z.width))
    return np.clip(out.data, 0.0, 1.0)


@dataclasses.dataclass(frozen=True)
class PerturbationRow:
    image: str
    component: Component
    eps: float
    seed: int
    psnr_db: float


def perturbation_experiment(
    images: Sequence[tuple[str, np.ndarray]],
    eps_grid: Sequence[float],
    seeds: Sequence[int],
    amplitude_noise: AmplitudeNoise = "additive",
) -> list[PerturbationRow]:
    """
    Perturb each named image's amplitude and phase for every `(eps, seed)` and report the PSNR
    of the result against the original. Rows are ordered by image, component, eps, seed.

    The same seed yields the same noise field for every eps, so PSNR degrades monotonically along
    the eps axis of a single seed.
    """
    if not images:
        raise ContractError("The perturbation experiment needs at least one image.")
    rows = []
    for name, img in images:
        img = np.asarray(img, dtype=np.float64)
        if img.min() < 0 or img.max() > 1:
            warnings.warn(f"Image {name!r} has values outside [0, 1]; they are clamped after perturbation.")
        for component in COMPONENTS:
            for eps in eps_grid:
                for seed in seeds:
                    out = perturb_spectrum(img, component, eps, SeededRng(seed), amplitude_noise)
                    rows.append(PerturbationRow(name, component, float(eps), int(seed), psnr(out, img)))
    return rows


def mean_psnr(rows: Iterable[PerturbationRow]) -> dict[tuple[Component, float], float]:
    """Mean PSNR per `(component, eps)` over images and seeds."""
    groups: dict[tuple[Component, float], list[float]] = {}
    for row in rows:
        groups.setdefault((row.component, row.eps), []).append(row.psnr_db)
    return {key: math.fsum(values) / len(values) for key, values in groups.items()}


PERTURBATION_HEADER = ("image", "component", "eps", "seed", "psnr_db")


def write_perturbation_csv(rows: Iterable[PerturbationRow], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PERTURBATION_HEADER)
        for row in rows:
            writer.writerow([row.image, row.component, f"{row.eps:g}", row.seed, f"{row.psnr_db:.6f}"])
