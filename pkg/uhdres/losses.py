"""
The dual-domain training objective: `L_total = L_pixel + λ·L_freq`.

Both terms are mean absolute differences, so one λ works for every patch size. The frequency
term compares the real and imaginary planes of the half-plane spectra separately and averages
over both planes.
"""

from __future__ import annotations

import dataclasses

from uhdres.errors import ShapeError
from uhdres.spectral import fft2_real
from uhdres.tensor import Tensor
from uhdres.tensor import absolute
from uhdres.tensor import add
from uhdres.tensor import mul
from uhdres.tensor import reduce
from uhdres.tensor import sub

DEFAULT_LAMBDA = 0.1


def _check_shapes(name: str, pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{name} needs equal shapes, got {list(pred.shape)} and {list(target.shape)}.")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_shapes("l1_loss", pred, target)
    return reduce("mean", absolute(sub(pred, target)))


def freq_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_shapes("freq_loss", pred, target)
    p, t = fft2_real(pred), fft2_real(target)
    re = reduce("mean", absolute(sub(p.real, t.real)))
    im = reduce("mean", absolute(sub(p.imag, t.imag)))
    return mul(add(re, im), 0.5)


@dataclasses.dataclass(frozen=True)
class LossReport:
    pixel: float
    freq: float
    total: float
    lam: float
    loss: Tensor
    """The differentiable total, for `backward`."""


def total_loss(pred: Tensor, target: Tensor, lam: float = DEFAULT_LAMBDA) -> LossReport:
    pixel = l1_loss(pred, target)
    freq = freq_loss(pred, target)
    loss = add(pixel, mul(freq, lam))
    return LossReport(pixel.item(), freq.item(), loss.item(), lam, loss)
