"""
Finite-difference verification of the analytic gradients computed by `uhdres.tensor.backward`.
"""

from __future__ import annotations

from collections.abc import Callable
from collections.abc import Sequence
import dataclasses

import numpy as np

from uhdres.errors import ContractError
from uhdres.tensor import Parameter
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import backward
from uhdres.tensor import no_grad


@dataclasses.dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    """The largest relative error over all checked coordinates."""
    tol: float
    checked: int
    """Number of coordinates compared."""
    worst: str
    """Human-readable location of the largest error."""

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self):
        verdict = "passed" if self.passed else "FAILED"
        return (
            f"grad check {verdict}: max relative error {self.max_rel_error:.3e} "
            f"(tol {self.tol:.0e}, {self.checked} coordinates, worst at {self.worst})"
        )


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    *,
    params: Sequence[Parameter] = (),
    samples: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """
    Compare the analytic gradient of the scalar function `f` at `x` (and, optionally, with respect
    to `params`) against central finite differences with step `eps`.

    The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)` where `floor` is
    `1e-4` times the largest gradient magnitude of the same tensor (and at least `1e-10`), so that
    coordinates with vanishing gradient are judged against the tensor's gradient scale.

    If `samples` is given, only that many randomly chosen coordinates per tensor are perturbed.
    The check must run in 64-bit mode.
    """
    targets: list[Tensor] = [x, *params]
    for t in targets:
        if t.dtype != np.float64:
            raise ContractError(f"grad_check requires 64-bit tensors, got {t.dtype.name}.")

    x.requires_grad = True
    for t in targets:
        t.grad = np.zeros_like(t.data)
    out = f(x)
    if out.size != 1:
        raise ContractError(f"grad_check requires a scalar-valued function, got shape {out.shape}.")
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in targets]

    rng = SeededRng(seed)
    max_error = 0.0
    worst = "nowhere"
    checked = 0
    with no_grad():
        for which, (t, grad) in enumerate(zip(targets, analytic)):
            flat = t.data.reshape(-1)
            if samples is None or samples >= flat.size:
                indices = np.arange(flat.size)
            else:
                indices = rng.integers(0, flat.size, size=samples)
            numeric = np.empty(len(indices))
            for k, i in enumerate(indices):
                original = flat[i]
                flat[i] = original + eps
                plus = f(x).item()
                flat[i] = original - eps
                minus = f(x).item()
                flat[i] = original
                numeric[k] = (plus - minus) / (2 * eps)
            expected = grad.reshape(-1)[indices]
            floor = max(1e-4 * max(np.abs(expected).max(), np.abs(numeric).max()), 1e-10)
            errors = np.abs(expected - numeric) / np.maximum(
                np.maximum(np.abs(expected), np.abs(numeric)), floor
            )
            checked += len(indices)
            k = int(np.argmax(errors))
            if errors[k] > max_error or worst == "nowhere":
                max_error = float(errors[k])
                name = "x" if which == 0 else (getattr(t, "name", "") or f"param[{which - 1}]")
                index = np.unravel_index(int(indices[k]), t.shape)
                worst = f"{name}{list(map(int, index))}"
    for t in targets:
        t.grad = None if not isinstance(t, Parameter) else np.zeros_like(t.data)
    return GradCheckReport(max_error, tol, checked, worst)
