"""
Built-in consistency checks run by `uhdres selftest`.

The suite verifies the analytic gradients of every block and of a small full model against
finite differences in 64-bit mode, the spectral identities (transform round trip, Parseval,
polar reconstruction), the weight sharing of SGFN, the identity behaviour of a model whose
head is zero and the checkpoint round trip.
"""

from __future__ import annotations

from collections.abc import Callable
from collections.abc import Sequence
import dataclasses
from pathlib import Path
import tempfile

import numpy as np

from uhdres.blocks import DAEB
from uhdres.blocks import DSMB
from uhdres.blocks import MSCA
from uhdres.blocks import SAMU
from uhdres.blocks import SGFN
from uhdres.blocks import SRU
from uhdres.blocks import SSFM
from uhdres.checkpoint import load_checkpoint
from uhdres.checkpoint import save_checkpoint
from uhdres.gradcheck import grad_check
from uhdres.model import UHDResConfig
from uhdres.model import UHDResModel
from uhdres.model import build
from uhdres.nn import Module
from uhdres.spectral import amplitude
from uhdres.spectral import fft2_real
from uhdres.spectral import ifft2_real
from uhdres.spectral import phase
from uhdres.spectral import polar_reconstruct
from uhdres.spectral import spectrum_energy
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import mul
from uhdres.tensor import no_grad
from uhdres.tensor import reduce

BLOCK_TOL = 1e-4
MODEL_TOL = 1e-3
ROUND_TRIP_SHAPES = ((8, 8), (7, 12), (13, 17), (64, 64), (31, 64))

SMALL_CONFIG = UHDResConfig(
    initial_channels=4,
    level_channels=(4, 8, 16),
    level_depths=(1, 1, 1),
    dtype="float64",
)
"""A model small enough to check numerically in seconds."""


@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _weighted_sum(module: Module, weights: Tensor) -> Callable[[Tensor], Tensor]:
    """A scalar function of the module output with a non-uniform upstream gradient."""
    return lambda x: reduce("sum", mul(module(x), weights))


def block_factories() -> dict[str, Callable[[SeededRng], tuple[Module, int]]]:
    """Factories of each block at 8 channels in 64-bit mode, with their input channel count."""
    f64 = "float64"
    return {
        "MSCA": lambda rng: (MSCA(8, rng, dtype=f64), 8),
        "SAMU": lambda rng: (SAMU(8, rng, dtype=f64), 8),
        "SRU": lambda rng: (SRU(8, rng, dtype=f64), 8),
        "DSMB": lambda rng: (DSMB(16, 8, rng, dtype=f64), 16),
        "SSFM": lambda rng: (SSFM(8, rng, dtype=f64), 8),
        "SGFN": lambda rng: (SGFN(8, rng, dtype=f64), 8),
        "DAEB": lambda rng: (DAEB(8, rng, dtype=f64), 8),
    }


def check_block_gradient(name: str, seed: int, samples: int = 12) -> CheckResult:
    rng = SeededRng(seed)
    module, channels = block_factories()[name](rng)
    module.assign_names()
    x = Tensor(rng.normal(0.0, 1.0, (2, channels, 8, 8), np.float64))
    with no_grad():
        out_shape = module(x).shape
    weights = Tensor(rng.normal(0.0, 1.0, out_shape, np.float64))
    report = grad_check(
        _weighted_sum(module, weights), x, tol=BLOCK_TOL, params=module.parameters(), samples=samples, seed=seed
    )
    return CheckResult(f"gradient {name} (seed {seed})", report.passed, f"{report.max_rel_error:.2e}")


def check_model_gradient(seed: int, samples: int = 4) -> CheckResult:
    model = build(SMALL_CONFIG, seed)
    rng = SeededRng(seed).fork(1)
    x = Tensor(rng.uniform(0.0, 1.0, (2, 3, 8, 8), np.float64))
    weights = Tensor(rng.normal(0.0, 1.0, x.shape, np.float64))
    params = model.parameters()[::12]
    report = grad_check(_weighted_sum(model, weights), x, tol=MODEL_TOL, params=params, samples=samples, seed=seed)
    return CheckResult(f"gradient full model (seed {seed})", report.passed, f"{report.max_rel_error:.2e}")


def check_fft_round_trip(seed: int = 0) -> list[CheckResult]:
    rng = SeededRng(seed)
    results = []
    for dtype, tol in (("float64", 1e-10), ("float32", 1e-5)):
        worst = 0.0
        for h, w in ROUND_TRIP_SHAPES:
            x = Tensor(rng.uniform(0.0, 1.0, (1, 2, h, w), dtype))
            with no_grad():
                back = ifft2_real(fft2_real(x))
            worst = max(worst, float(np.max(np.abs(back.data.astype(np.float64) - x.data))))
        results.append(CheckResult(f"FFT round trip ({dtype})", worst < tol, f"max error {worst:.2e}"))
    return results


def check_parseval(seed: int = 0) -> CheckResult:
    rng = SeededRng(seed)
    worst = 0.0
    for h, w in ROUND_TRIP_SHAPES:
        x = Tensor(rng.normal(0.0, 1.0, (h, w), np.float64))
        with no_grad():
            energy = float(spectrum_energy(fft2_real(x)))
        spatial = float(np.sum(x.data**2))
        worst = max(worst, abs(energy - spatial) / spatial)
    return CheckResult("Parseval identity", worst < 1e-4, f"relative error {worst:.2e}")


def check_polar_reconstruction(seed: int = 0) -> CheckResult:
    rng = SeededRng(seed)
    worst = 0.0
    for h, w in ROUND_TRIP_SHAPES:
        x = Tensor(rng.uniform(0.0, 1.0, (h, w), np.float64))
        with no_grad():
            z = fft2_real(x)
            back = polar_reconstruct(amplitude(z), phase(z), h, w)
        scale = max(float(np.max(np.abs(z.to_complex()))), 1.0)
        worst = max(worst, float(np.max(np.abs(back.to_complex() - z.to_complex()))) / scale)
    return CheckResult("polar reconstruction", worst < 1e-5, f"relative error {worst:.2e}")


def check_sgfn_sharing() -> CheckResult:
    sgfn = SGFN(8, SeededRng(0))
    first, second = sgfn.branches
    shared = first.gate is second.gate is sgfn.gate
    gate_params = {id(p) for p in sgfn.gate.parameters()}
    registered = [p for p in sgfn.parameters() if id(p) in gate_params]
    passed = shared and len(registered) == len(gate_params)
    return CheckResult("SGFN strip convolutions shared", passed, f"{len(registered)} gate parameters")


def check_residual_identity(seed: int = 0) -> CheckResult:
    model = build(SMALL_CONFIG, seed)
    model.head.weight.data[...] = 0
    assert model.head.bias is not None
    model.head.bias.data[...] = 0
    x = Tensor(SeededRng(seed).uniform(0.0, 1.0, (1, 3, 12, 20), np.float64))
    with no_grad():
        out = model(x)
    return CheckResult("zero head restores the identity", bool(np.array_equal(out.data, x.data)))


def _eval_output(model: UHDResModel, x: Tensor) -> np.ndarray:
    model.eval()
    with no_grad():
        return model(x).data


def check_checkpoint_round_trip(seed: int = 0) -> CheckResult:
    model = build(SMALL_CONFIG.replace(dtype="float32"), seed)
    x = Tensor(SeededRng(seed).uniform(0.0, 1.0, (1, 3, 16, 16), np.float32))
    expected = _eval_output(model, x)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.uhdr"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
    return CheckResult("checkpoint round trip", bool(np.array_equal(_eval_output(restored, x), expected)))


def run_selftest(seeds: Sequence[int] = (0, 1, 2), full_model: bool = True) -> list[CheckResult]:
    """Run every check and return the results in order; nothing is raised for failing checks."""
    results = [check_block_gradient(name, seed) for name in block_factories() for seed in seeds]
    if full_model:
        results += [check_model_gradient(seed) for seed in seeds]
    results += check_fft_round_trip()
    results.append(check_parseval())
    results.append(check_polar_reconstruction())
    results.append(check_sgfn_sharing())
    results.append(check_residual_identity())
    results.append(check_checkpoint_round_trip())
    return results
