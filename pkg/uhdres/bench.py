"""
Inference efficiency measurements: wall-clock latency and an analytic peak-memory estimate.

The memory estimate replays the forward schedule recorded by `uhdres.tensor.trace_schedule`.
A tensor is live from the operation that creates it until its last consumer has run; the
network's output stays live until the end. The estimate is the maximum, over all operations,
of the bytes of live activations, plus the bytes of all parameters. It does not depend on the
platform or the allocator.
"""

from __future__ import annotations

from collections.abc import Sequence
import csv
import dataclasses
from pathlib import Path
import statistics
import time

import numpy as np

from uhdres.errors import ContractError
from uhdres.model import PAD_MULTIPLE
from uhdres.model import UHDResModel
from uhdres.model import count_params
from uhdres.tensor import ScheduleTrace
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import no_grad
from uhdres.tensor import trace_schedule

BENCH_HEADER = ("h", "w", "scale", "latency_s", "peak_mem_bytes", "params")


@dataclasses.dataclass(frozen=True)
class BenchRecord:
    h: int
    w: int
    scale: float
    """Linear size relative to the first measured resolution."""
    latency_s: float
    """Median wall-clock seconds of one forward pass."""
    peak_mem_bytes: int
    params: int


def peak_live_bytes(trace: ScheduleTrace) -> int:
    """The largest total size of simultaneously live tensors along a recorded schedule."""
    events = len(trace.sizes)
    if not events:
        return 0
    delta = np.zeros(events + 1, np.int64)
    for i, (size, consumers) in enumerate(zip(trace.sizes, trace.consumers)):
        last = max(consumers) if consumers else (events - 1 if i == events - 1 else i)
        delta[i] += size
        delta[last + 1] -= size
    return int(np.cumsum(delta).max())


def _input(model: UHDResModel, h: int, w: int) -> Tensor:
    rng = SeededRng(0)
    return Tensor(rng.uniform(0.0, 1.0, (1, 3, h, w), model.config.dtype))


def estimate_peak_memory(model: UHDResModel, h: int, w: int) -> int:
    """Estimated peak bytes of an inference forward pass at `h×w`, parameters included."""
    was_training = model.training
    model.eval()
    try:
        with no_grad(), trace_schedule() as trace:
            model(_input(model, h, w))
    finally:
        model.train(was_training)
    param_bytes = sum(p.data.nbytes for p in model.parameters())
    return peak_live_bytes(trace) + param_bytes


def bench_forward(
    model: UHDResModel,
    resolutions: Sequence[tuple[int, int]],
    warmup: int = 3,
    repeats: int = 7,
) -> list[BenchRecord]:
    """Measure each resolution: `warmup` discarded runs, then the median of `repeats` timed runs."""
    if not resolutions:
        raise ContractError("bench_forward needs at least one resolution.")
    for h, w in resolutions:
        if h < PAD_MULTIPLE or w < PAD_MULTIPLE:
            raise ContractError(f"Benchmark resolutions must be at least {PAD_MULTIPLE}×{PAD_MULTIPLE}, got {h}×{w}.")
    if repeats < 1 or warmup < 0:
        raise ContractError(f"Need repeats ≥ 1 and warmup ≥ 0, got {repeats} and {warmup}.")
    params = count_params(model)
    base_h = resolutions[0][0]
    records = []
    was_training = model.training
    model.eval()
    try:
        for h, w in resolutions:
            x = _input(model, h, w)
            timings = []
            with no_grad():
                for i in range(warmup + repeats):
                    start = time.perf_counter()
                    model(x)
                    elapsed = time.perf_counter() - start
                    if i >= warmup:
                        timings.append(elapsed)
            records.append(
                BenchRecord(
                    h,
                    w,
                    h / base_h,
                    max(statistics.median(timings), 1e-9),
                    estimate_peak_memory(model, h, w),
                    params,
                )
            )
    finally:
        model.train(was_training)
    return records


def write_bench_csv(records: Sequence[BenchRecord], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BENCH_HEADER)
        for r in records:
            writer.writerow([r.h, r.w, f"{r.scale:g}", f"{r.latency_s:.6f}", r.peak_mem_bytes, r.params])
