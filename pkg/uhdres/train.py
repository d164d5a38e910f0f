"""
AdamW optimization with a cosine-annealed learning rate, and the deterministic training loop.

Every training step `s` draws its batch from its own random stream (`SeededRng(seed).fork(s + 1)`),
so a run resumed from a checkpoint taken after step `k` continues exactly like the
uninterrupted run.
"""

from __future__ import annotations

from collections.abc import Callable
import csv
import dataclasses
import math
from pathlib import Path
from typing import Any
from typing import TextIO

import numpy as np

from uhdres.checkpoint import Checkpoint
from uhdres.checkpoint import model_entries
from uhdres.checkpoint import model_from_checkpoint
from uhdres.checkpoint import read_checkpoint
from uhdres.checkpoint import write_checkpoint
from uhdres.data import PairedSample
from uhdres.data import PatchSampler
from uhdres.errors import ConfigError
from uhdres.errors import ContractError
from uhdres.errors import MissingKeyError
from uhdres.errors import NonFiniteError
from uhdres.losses import DEFAULT_LAMBDA
from uhdres.losses import total_loss
from uhdres.metrics import psnr
from uhdres.metrics import ssim
from uhdres.model import UHDResModel
from uhdres.model import restore
from uhdres.tensor import Parameter
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import backward

TRAIN_LOG_HEADER = ("step", "lr", "l_pixel", "l_freq", "l_total")
EVAL_LOG_HEADER = ("step", "psnr_db", "ssim")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 64
    batch_size: int = 2
    total_steps: int = 2000
    seed: int = 0
    lam: float = DEFAULT_LAMBDA
    """Weight of the frequency loss."""
    checkpoint_every: int = 500
    eval_every: int = 100
    lr_max: float = 5e-4
    lr_min: float = 1e-7
    weight_decay: float = 1e-4
    clip_norm: float = 1.0

    def __post_init__(self):
        for name in ("patch_size", "batch_size", "total_steps", "checkpoint_every", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}.")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}.")
        if self.lam < 0 or self.weight_decay < 0:
            raise ConfigError("lam and weight_decay must be non-negative.")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError(f"Need 0 < lr_min ≤ lr_max, got {self.lr_min} and {self.lr_max}.")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}.")


@dataclasses.dataclass(frozen=True)
class CosineSchedule:
    lr_max: float = 5e-4
    lr_min: float = 1e-7
    total_steps: int = 2000

    def lr_at(self, step: int) -> float:
        return lr_at(self, step)


def lr_at(schedule: CosineSchedule, step: int) -> float:
    """`lr_min + ½·(lr_max − lr_min)·(1 + cos(π·step/total))`, exact at both endpoints."""
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(f"Step {step} is outside the schedule [0, {schedule.total_steps}].")
    if step == 0:
        return schedule.lr_max
    if step == schedule.total_steps:
        return schedule.lr_min
    progress = step / schedule.total_steps
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1 + math.cos(math.pi * progress))


@dataclasses.dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def create(cls, params: list[Parameter], weight_decay: float = 1e-4) -> AdamWState:
        return cls(
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
            weight_decay=weight_decay,
        )

    def entries(self) -> dict[str, np.ndarray]:
        out = {f"optim.m.{name}": value for name, value in self.m.items()}
        out.update({f"optim.v.{name}": value for name, value in self.v.items()})
        out["trainer.step"] = np.asarray(float(self.step))
        return out

    @classmethod
    def from_entries(
        cls, entries: dict[str, np.ndarray], params: list[Parameter], weight_decay: float = 1e-4
    ) -> AdamWState:
        needed = [f"optim.{kind}.{p.name}" for kind in "mv" for p in params] + ["trainer.step"]
        missing = [k for k in needed if k not in entries]
        if missing:
            raise MissingKeyError(f"Checkpoint lacks optimizer entries: {', '.join(missing)}.")
        return cls(
            m={p.name: entries[f"optim.m.{p.name}"].astype(p.data.dtype) for p in params},
            v={p.name: entries[f"optim.v.{p.name}"].astype(p.data.dtype) for p in params},
            step=int(entries["trainer.step"].reshape(())),
            weight_decay=weight_decay,
        )


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so that their global L2 norm is at most `max_norm`. Returns the norm before clipping."""
    norm = math.sqrt(math.fsum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for p in params:
            p.grad *= p.grad.dtype.type(scale)
    return norm


def adamw_step(params: list[Parameter], state: AdamWState, lr: float) -> None:
    """
    One AdamW update with bias correction and decoupled weight decay (applied to parameters with
    `decay=True` only). Gradients are zeroed afterwards. If any gradient is not finite, the step is
    aborted before anything is modified.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"Non-finite gradient for {p.name!r}, optimizer step aborted.")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1**state.step
    bc2 = 1 - b2**state.step
    for p in params:
        g = p.grad
        m, v = state.m[p.name], state.v[p.name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if p.decay and state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype, copy=False)
        p.zero_grad()


@dataclasses.dataclass(frozen=True)
class TrainRow:
    step: int
    lr: float
    l_pixel: float
    l_freq: float
    l_total: float

    def fields(self) -> list:
        return [self.step, repr(self.lr), repr(self.l_pixel), repr(self.l_freq), repr(self.l_total)]


@dataclasses.dataclass(frozen=True)
class EvalRow:
    step: int
    psnr_db: float
    ssim: float

    def fields(self) -> list:
        return [self.step, f"{self.psnr_db:.6f}", f"{self.ssim:.6f}"]


@dataclasses.dataclass
class TrainingLog:
    rows: list[TrainRow] = dataclasses.field(default_factory=list)
    evals: list[EvalRow] = dataclasses.field(default_factory=list)
    checkpoints: list[Path] = dataclasses.field(default_factory=list)


def save_training_checkpoint(model: UHDResModel, state: AdamWState, path: Path) -> None:
    entries = model_entries(model)
    entries.update(state.entries())
    write_checkpoint(path, Checkpoint(model.config.dtype, entries))


def load_training_checkpoint(path: Path, weight_decay: float = 1e-4) -> tuple[UHDResModel, AdamWState]:
    checkpoint = read_checkpoint(path)
    model = model_from_checkpoint(checkpoint)
    state = AdamWState.from_entries(checkpoint.entries, model.parameters(), weight_decay)
    return model, state


def evaluate(model: UHDResModel, samples: list[PairedSample]) -> tuple[float, float]:
    """Mean PSNR and SSIM of the restored full images, computed in evaluation mode."""
    if not samples:
        raise ContractError("Cannot evaluate on an empty dataset.")
    was_training = model.training
    model.eval()
    try:
        scores = []
        for s in samples:
            out = restore(model, s.lq.to_array())
            gt = s.gt.to_array()
            scores.append((psnr(out, gt), ssim(out, gt)))
    finally:
        model.train(was_training)
    return float(np.mean([a for a, _ in scores])), float(np.mean([b for _, b in scores]))


def _open_log(path: Path, header: tuple[str, ...], append: bool) -> tuple[TextIO, Any]:
    exists = append and path.exists()
    f = open(path, "a" if exists else "w", encoding="utf-8", newline="")
    writer = csv.writer(f, lineterminator="\n")
    if not exists:
        writer.writerow(header)
    return f, writer


def train_loop(
    model: UHDResModel,
    dataset: list[PairedSample],
    config: TrainConfig,
    out_dir: Path | None = None,
    *,
    state: AdamWState | None = None,
    progress: Callable[[TrainRow], None] | None = None,
) -> TrainingLog:
    """
    Train `model` on `dataset` until `config.total_steps`, starting at `state.step` when resuming.

    With `out_dir`, per-step rows are appended to `train_log.csv`, evaluation rows to
    `eval_log.csv`, and checkpoints `ckpt_<step>.uhdr` are written every `checkpoint_every` steps.
    """
    if not dataset:
        raise ContractError("Cannot train on an empty dataset.")
    params = model.parameters()
    if state is None:
        state = AdamWState.create(params, config.weight_decay)
    if state.step > config.total_steps:
        raise ContractError(f"Cannot resume at step {state.step} beyond total_steps={config.total_steps}.")
    schedule = CosineSchedule(config.lr_max, config.lr_min, config.total_steps)
    root = SeededRng(config.seed)
    sampler = PatchSampler(dataset, config.patch_size, root)
    dtype = np.dtype(model.config.dtype).type
    log = TrainingLog()

    files: list[TextIO] = []
    train_writer = eval_writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        resuming = state.step > 0
        f, train_writer = _open_log(out_dir / "train_log.csv", TRAIN_LOG_HEADER, resuming)
        files.append(f)
        f, eval_writer = _open_log(out_dir / "eval_log.csv", EVAL_LOG_HEADER, resuming)
        files.append(f)

    model.train()
    try:
        for step in range(state.step, config.total_steps):
            lr = schedule.lr_at(step)
            lq, gt = sampler.batch(config.batch_size, dtype, rng=root.fork(step + 1))
            report = total_loss(model(Tensor(lq)), Tensor(gt), config.lam)
            backward(report.loss)
            clip_grad_norm(params, config.clip_norm)
            adamw_step(params, state, lr)

            row = TrainRow(step, lr, report.pixel, report.freq, report.total)
            log.rows.append(row)
            if train_writer is not None:
                train_writer.writerow(row.fields())
            if progress is not None:
                progress(row)

            done = step + 1
            if done % config.eval_every == 0 or done == config.total_steps:
                psnr_db, ssim_value = evaluate(model, dataset)
                evaluation = EvalRow(done, psnr_db, ssim_value)
                log.evals.append(evaluation)
                if eval_writer is not None:
                    eval_writer.writerow(evaluation.fields())
            if out_dir is not None and (done % config.checkpoint_every == 0 or done == config.total_steps):
                path = out_dir / f"ckpt_{done:06d}.uhdr"
                save_training_checkpoint(model, state, path)
                log.checkpoints.append(path)
    finally:
        for f in files:
            f.close()
    return log
