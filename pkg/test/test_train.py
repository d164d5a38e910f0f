from __future__ import annotations

import math

import numpy as np
import pytest

from uhdres.data import PatchSampler
from uhdres.data import synthetic_dataset
from uhdres.errors import ConfigError
from uhdres.errors import ContractError
from uhdres.errors import MissingKeyError
from uhdres.errors import NonFiniteError
from uhdres.losses import total_loss
from uhdres.model import build
from uhdres.selftest import SMALL_CONFIG
from uhdres.tensor import Parameter
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.train import EVAL_LOG_HEADER
from uhdres.train import TRAIN_LOG_HEADER
from uhdres.train import AdamWState
from uhdres.train import CosineSchedule
from uhdres.train import TrainConfig
from uhdres.train import adamw_step
from uhdres.train import clip_grad_norm
from uhdres.train import evaluate
from uhdres.train import load_training_checkpoint
from uhdres.train import lr_at
from uhdres.train import save_training_checkpoint
from uhdres.train import train_loop

SHORT = TrainConfig(patch_size=8, batch_size=2, total_steps=4, eval_every=2, checkpoint_every=2, seed=3)


@pytest.fixture(scope="module")
def dataset():
    return synthetic_dataset(3, 16, "noise", seed=1)


def test_schedule_endpoints():
    schedule = CosineSchedule(5e-4, 1e-7, 2000)
    assert lr_at(schedule, 0) == 5e-4
    assert lr_at(schedule, 2000) == 1e-7
    assert schedule.lr_at(1000) == pytest.approx((5e-4 + 1e-7) / 2)
    lrs = [schedule.lr_at(s) for s in range(0, 2001, 100)]
    assert lrs == sorted(lrs, reverse=True)


@pytest.mark.parametrize("step", [-1, 2001])
def test_schedule_out_of_range(step):
    with pytest.raises(ContractError, match="outside the schedule"):
        lr_at(CosineSchedule(), step)


def test_adamw_first_step():
    p = Parameter(np.array([1.0]), "p", decay=True)
    q = Parameter(np.array([1.0]), "q", decay=False)
    state = AdamWState.create([p, q], weight_decay=0.01)
    p.grad[...] = 0.5
    q.grad[...] = 0.5
    adamw_step([p, q], state, 0.1)
    # the bias-corrected first step moves by lr·sign(g), plus lr·wd·p for decayed parameters
    assert p.data[0] == pytest.approx(1 - 0.1 * (1 + 0.01), rel=1e-6)
    assert q.data[0] == pytest.approx(1 - 0.1, rel=1e-6)
    assert state.step == 1
    assert p.grad[0] == 0


def test_adamw_aborts_on_non_finite_gradients():
    p = Parameter(np.array([1.0, 2.0]), "p")
    q = Parameter(np.array([3.0]), "q")
    state = AdamWState.create([p, q])
    p.grad[...] = 1.0
    q.grad[...] = np.nan
    with pytest.raises(NonFiniteError, match="'q'"):
        adamw_step([p, q], state, 0.1)
    assert p.data.tolist() == [1.0, 2.0]
    assert state.step == 0
    assert np.all(state.m["p"] == 0)


def test_clip_grad_norm():
    a = Parameter(np.array([3.0]), "a")
    b = Parameter(np.array([4.0]), "b")
    a.grad[...] = 3.0
    b.grad[...] = 4.0
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert math.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0, rel=1e-5)
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(1.0, rel=1e-5)


def test_adamw_state_entries():
    p = Parameter(np.ones((2, 2)), "w")
    state = AdamWState.create([p])
    state.step = 7
    entries = state.entries()
    assert set(entries) == {"optim.m.w", "optim.v.w", "trainer.step"}
    restored = AdamWState.from_entries(entries, [p])
    assert restored.step == 7
    del entries["optim.v.w"]
    with pytest.raises(MissingKeyError, match="optim.v.w"):
        AdamWState.from_entries(entries, [p])


@pytest.mark.parametrize(
    "changes,message",
    [
        (dict(total_steps=0), "total_steps"),
        (dict(seed=-1), "seed"),
        (dict(lam=-0.1), "non-negative"),
        (dict(lr_min=1e-3, lr_max=1e-4), "lr_min"),
        (dict(clip_norm=0), "clip_norm"),
    ],
)
def test_train_config_validation(changes, message):
    with pytest.raises(ConfigError, match=message):
        TrainConfig(**changes)


def test_training_writes_logs_and_checkpoints(dataset, tmp_path):
    model = build(SMALL_CONFIG, 0)
    seen = []
    log = train_loop(model, dataset, SHORT, tmp_path, progress=seen.append)
    assert [row.step for row in log.rows] == [0, 1, 2, 3]
    assert seen == log.rows
    assert [e.step for e in log.evals] == [2, 4]
    assert [p.name for p in log.checkpoints] == ["ckpt_000002.uhdr", "ckpt_000004.uhdr"]
    assert all(np.isfinite(row.l_total) for row in log.rows)
    assert log.rows[0].lr == SHORT.lr_max

    train_lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert train_lines[0] == ",".join(TRAIN_LOG_HEADER)
    assert len(train_lines) == 5
    eval_lines = (tmp_path / "eval_log.csv").read_text().splitlines()
    assert eval_lines[0] == ",".join(EVAL_LOG_HEADER)
    assert eval_lines[1].startswith("2,")
    assert model.training


def test_training_is_deterministic(dataset):
    a, b = build(SMALL_CONFIG, 0), build(SMALL_CONFIG, 0)
    log_a = train_loop(a, dataset, SHORT)
    log_b = train_loop(b, dataset, SHORT)
    assert [r.l_total for r in log_a.rows] == [r.l_total for r in log_b.rows]
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_first_logged_loss_is_initial_model_loss(dataset):
    log = train_loop(build(SMALL_CONFIG, 0), dataset, SHORT)
    initial = build(SMALL_CONFIG, 0)
    root = SeededRng(SHORT.seed)
    lq, gt = PatchSampler(dataset, SHORT.patch_size, root).batch(SHORT.batch_size, np.float64, rng=root.fork(1))
    report = total_loss(initial(Tensor(lq)), Tensor(gt), SHORT.lam)
    assert log.rows[0].l_total == report.total
    assert log.rows[0].l_pixel == report.pixel
    assert log.rows[1].l_total != report.total


def test_resume_matches_uninterrupted_run(dataset, tmp_path):
    full = build(SMALL_CONFIG, 0)
    full_log = train_loop(full, dataset, SHORT, tmp_path)

    model, state = load_training_checkpoint(tmp_path / "ckpt_000002.uhdr")
    assert state.step == 2
    resumed_log = train_loop(model, dataset, SHORT, tmp_path / "resumed", state=state)

    assert [r.step for r in resumed_log.rows] == [2, 3]
    assert [r.l_total for r in resumed_log.rows] == [r.l_total for r in full_log.rows[2:]]
    for pa, pb in zip(full.parameters(), model.parameters()):
        assert np.array_equal(pa.data, pb.data)
    assert len((tmp_path / "resumed" / "train_log.csv").read_text().splitlines()) == 3

    # resuming into the same directory appends to the existing logs
    model, state = load_training_checkpoint(tmp_path / "ckpt_000002.uhdr")
    train_loop(model, dataset, SHORT, tmp_path, state=state)
    assert len((tmp_path / "train_log.csv").read_text().splitlines()) == 7


def test_training_checkpoint_round_trip(tmp_path):
    model = build(SMALL_CONFIG, 2)
    params = model.parameters()
    state = AdamWState.create(params)
    state.step = 3
    state.m[params[0].name][...] = 0.25
    path = tmp_path / "train.uhdr"
    save_training_checkpoint(model, state, path)
    restored, restored_state = load_training_checkpoint(path)
    assert restored_state.step == 3
    assert np.all(restored_state.m[params[0].name] == 0.25)
    assert np.array_equal(restored.parameters()[0].data, params[0].data)


def test_training_errors(dataset):
    model = build(SMALL_CONFIG)
    with pytest.raises(ContractError, match="empty dataset"):
        train_loop(model, [], SHORT)
    state = AdamWState.create(model.parameters())
    state.step = 10
    with pytest.raises(ContractError, match="beyond total_steps"):
        train_loop(model, dataset, SHORT, state=state)
    with pytest.raises(ContractError, match="does not fit"):
        train_loop(model, dataset, TrainConfig(patch_size=32, total_steps=1))


def test_evaluate(dataset):
    model = build(SMALL_CONFIG)
    psnr_db, ssim_value = evaluate(model, dataset)
    assert 0 < psnr_db <= 100
    assert -1 <= ssim_value <= 1
    assert model.training
    with pytest.raises(ContractError, match="empty"):
        evaluate(model, [])


@pytest.mark.slow
def test_overfits_single_pair():
    sample = synthetic_dataset(1, 16, "lowlight", seed=5)
    config = TrainConfig(patch_size=16, batch_size=1, total_steps=150, eval_every=150, lr_max=2e-3, seed=1)
    log = train_loop(build(SMALL_CONFIG.replace(dtype="float32"), 0), sample, config)
    first = np.mean([r.l_total for r in log.rows[:10]])
    last = np.mean([r.l_total for r in log.rows[-10:]])
    assert last < 0.7 * first


@pytest.mark.slow
@pytest.mark.timeout(4 * 3600)
def test_default_model_overfits_lowlight_pair():
    # about 1.45 s per step at batch size 2 on one core
    sample = synthetic_dataset(1, 64, "lowlight", seed=0)
    config = TrainConfig(patch_size=64, total_steps=2000, eval_every=2000, checkpoint_every=2000, seed=0)
    log = train_loop(build(seed=0), sample, config)
    assert len(log.rows) == 2000
    assert min(r.l_pixel for r in log.rows[-50:]) < 0.02
    assert log.evals[-1].step == 2000
    assert log.evals[-1].psnr_db >= 30
