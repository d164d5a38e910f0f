r'''
# What is uhdres?

uhdres is a compact image restoration network for very large images, together with everything
needed to train, run, measure and verify it on a CPU: a small tensor library with reverse-mode
automatic differentiation, differentiable Fourier transforms, the network blocks, a
deterministic trainer and an efficiency benchmark.

The network treats restoration as residual prediction in two domains. Its repeated unit, the
DAEB, mixes multi-scale depthwise context (MSCA), modulates the *amplitude* spectrum of
low-frequency features while passing the *phase* through unchanged (SAMU), refines local
structure in the spatial domain (SRU) and ends with a gated feed-forward network whose strip
convolutions are shared between its two branches (SGFN).

 - Everything runs on numpy and scipy; there is no GPU code.
 - 64-bit mode and a built-in gradient checker make every block verifiable.
 - Runs are bitwise reproducible for a fixed seed and thread count.
 - Checkpoints are a small self-describing binary format with a checksum.

# Quickstart

```shell
uhdres synth --out data --count 4 --size 64 --kind lowlight
printf 'level_depths = 1, 1, 2\ntotal_steps = 500\n' > desk.cfg
uhdres train --data data --out run --config desk.cfg
uhdres infer --ckpt run/ckpt_000500.uhdr --in data/lq/0000.ppm --out restored.ppm
uhdres params
uhdres selftest
```

From Python:

```python
import uhdres.model

model = uhdres.model.build(seed=0)
restored = uhdres.model.restore(model, image)  # (3, h, w) array in [0, 1]
```

# Conventions

## Random numbers

All randomness comes from `uhdres.tensor.SeededRng`, a thin layer over the Philox-4x64-10
counter-based generator of `numpy.random`. The 128-bit key is `(seed, stream)` and draw *k*
starts from counter `(0, 0, 0, k)`. Variates are produced in 64-bit precision and cast to the
requested element type, so a seed means the same numbers everywhere.

## Fourier transforms

`uhdres.spectral.fft2_real` computes the unnormalized transform over the last two axes, keeping
the non-redundant half-plane of `w // 2 + 1` columns; the inverse carries the `1/(h·w)` factor.
The DC bin therefore equals the pixel sum.

## Resampling

Bilinear upsampling maps output pixel `i` to the source coordinate `(i + ½)·n_in/n_out − ½`,
clamps negative coordinates to 0 and replicates the last row and column at the far edge.

## Threads

`UHDRES_THREADS` sets the number of worker threads used by depthwise convolutions (default 1).
Work is split along channels only, so results do not depend on it.
`UHDRES_CHECK_FINITE=1` makes every operation verify that its output is finite.

## Peak memory

`uhdres.bench` estimates the peak memory of a forward pass from the recorded schedule: a tensor
is live from the operation that creates it until its last consumer has run, and the estimate is
the largest total of live tensors plus all parameters.

# Configuration files

`uhdres.config` reads flat `key=value` files whose keys are the fields of
`uhdres.model.UHDResConfig` and `uhdres.train.TrainConfig`:

```
# desk-scale run
level_depths = 1, 1, 2
msca_kernels = id-7-13-19
total_steps = 500
eval_every = 50
```

# Customizing reports

`uhdres params`, `uhdres selftest` and the `--html` reports are rendered with Jinja2.
Pass `--template-directory` with files named like those in `uhdres/templates` to override them,
and `--footer-text` to replace the footer of HTML reports.
'''

from __future__ import annotations

__version__ = "0.3.0"  # pyproject.toml reads the version from here
