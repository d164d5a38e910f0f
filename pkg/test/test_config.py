from __future__ import annotations

import pytest

from uhdres.config import MODEL_KEYS
from uhdres.config import TRAIN_KEYS
from uhdres.config import load_config
from uhdres.config import parse_config
from uhdres.errors import ConfigError
from uhdres.model import UHDResConfig
from uhdres.train import TrainConfig

EXAMPLE = """
# desk-scale run
initial_channels = 16
level_channels = 16, 32, 64
msca_kernels = id-7-13-19

total_steps=500
lr_max = 1e-3
use_sru = off
samu_mode = both
"""


def test_parse_config():
    model, train = parse_config(EXAMPLE)
    assert model == {
        "initial_channels": 16,
        "level_channels": (16, 32, 64),
        "msca_kernels": (7, 13, 19),
        "use_sru": False,
        "samu_mode": "both",
    }
    assert train == {"total_steps": 500, "lr_max": 1e-3}


def test_keys_do_not_overlap():
    assert not set(MODEL_KEYS) & set(TRAIN_KEYS)


@pytest.mark.parametrize("raw,value", [("true", True), ("Yes", True), ("1", True), ("off", False), ("0", False)])
def test_booleans(raw, value):
    model, _ = parse_config(f"use_sgfn = {raw}")
    assert model["use_sgfn"] is value


@pytest.mark.parametrize(
    "text,message",
    [
        ("use_sgfn", r"<config>:1: expected key=value"),
        ("\n\nwidth = 3", r"<config>:3: unknown configuration key 'width'"),
        ("seed = 1\nseed = 2", r"<config>:2: key 'seed' is set twice"),
        ("total_steps = many", r"<config>:1: invalid value for 'total_steps'"),
        ("use_msca = maybe", r"invalid value for 'use_msca': expected a boolean"),
        ("msca_kernels = 3,5", r"invalid value for 'msca_kernels'"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_load_config(tmp_path):
    assert load_config(None) == (UHDResConfig(), TrainConfig())

    path = tmp_path / "run.cfg"
    path.write_text(EXAMPLE)
    model, train = load_config(path)
    assert model.level_channels == (16, 32, 64)
    assert model.dtype == "float32"
    assert train.total_steps == 500
    assert train.batch_size == TrainConfig().batch_size


def test_load_config_validates(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("initial_channels = 16\n")
    with pytest.raises(ConfigError, match="must equal initial_channels"):
        load_config(path)

    path.write_text("seed = x\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        load_config(path)
