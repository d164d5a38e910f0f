from __future__ import annotations

import numpy as np
import pytest

from uhdres.errors import ConfigError
from uhdres.errors import ContractError
from uhdres.errors import ShapeError
from uhdres.model import KERNEL_PRESETS
from uhdres.model import UHDResConfig
from uhdres.model import build
from uhdres.model import count_params
from uhdres.model import kernel_preset
from uhdres.model import param_breakdown
from uhdres.model import restore
from uhdres.nn import pad2d
from uhdres.selftest import SMALL_CONFIG
from uhdres.selftest import check_model_gradient
from uhdres.selftest import check_residual_identity
from uhdres.tensor import SeededRng
from uhdres.tensor import Tensor
from uhdres.tensor import add
from uhdres.tensor import no_grad

DEFAULT_PARAMS = 351_867
REFERENCE_PARAMS = 401_220


def _images(shape, seed=0, dtype=np.float64):
    return Tensor(SeededRng(seed).uniform(0, 1, shape, dtype))


def test_default_parameter_count():
    total = count_params(build())
    assert total == DEFAULT_PARAMS
    assert abs(total - REFERENCE_PARAMS) / REFERENCE_PARAMS < 0.15


@pytest.mark.parametrize(
    "kernels,delta",
    [("id-3-7-11", -18_432), ("id-5-9-13", 0), ("id-7-13-19", 58_368)],
)
def test_kernel_variants_change_only_msca(kernels, delta):
    config = UHDResConfig(msca_kernels=kernel_preset(kernels))
    assert count_params(build(config)) == DEFAULT_PARAMS + delta


def test_build_is_deterministic():
    a, b, c = build(SMALL_CONFIG, 3), build(SMALL_CONFIG, 3), build(SMALL_CONFIG, 4)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert pa.name == name
        assert np.array_equal(pa.data, pb.data)
    assert not np.array_equal(a.stem.weight.data, c.stem.weight.data)

    x = _images((1, 3, 16, 16))
    with no_grad():
        assert np.array_equal(a(x).data, b(x).data)


@pytest.mark.parametrize("extents", [(12, 20), (8, 8), (17, 9)])
def test_forward_preserves_shape(extents):
    model = build(SMALL_CONFIG)
    x = _images((2, 3, *extents))
    with no_grad():
        out = model(x)
    assert out.shape == x.shape
    assert out.dtype == np.float64


def test_padding_is_transparent():
    model = build(SMALL_CONFIG)
    model.eval()
    aligned = _images((1, 3, 16, 24), 1)
    with no_grad():
        assert np.array_equal(model(aligned).data, add(aligned, model.residual(aligned)).data)

        x = _images((1, 3, 17, 20), 2)
        padded = pad2d(x, (0, 7, 0, 4), "reflect")
        assert padded.shape == (1, 3, 24, 24)
        assert np.array_equal(model(x).data, model(padded).data[..., :17, :20])


def test_default_model_forward():
    model = build()
    x = _images((1, 3, 12, 20), dtype=np.float32)
    with no_grad():
        out = model(x)
    assert out.shape == (1, 3, 12, 20)
    assert out.dtype == np.float32
    assert np.all(np.isfinite(out.data))


def test_forward_errors():
    model = build(SMALL_CONFIG)
    with pytest.raises(ShapeError, match=r"\(n, 3, h, w\)"):
        model(_images((1, 4, 8, 8)))
    with pytest.raises(ShapeError):
        model(_images((3, 8, 8)))
    with pytest.raises(ContractError, match="at least 8×8"):
        model(_images((1, 3, 7, 16)))


def test_zero_head_is_identity():
    assert check_residual_identity(0).passed


def test_restore_clamps():
    model = build(SMALL_CONFIG)
    image = np.ones((3, 16, 16))
    out = restore(model, image)
    assert out.shape == (3, 16, 16)
    assert out.min() >= 0 and out.max() <= 1
    batch = restore(model, np.zeros((2, 3, 8, 8)))
    assert batch.shape == (2, 3, 8, 8)
    assert batch.min() >= 0


@pytest.mark.parametrize("flag", ["use_msca", "use_samu", "use_sru", "use_sgfn"])
def test_ablations(flag):
    config = SMALL_CONFIG.replace(**{flag: False})
    ablated = build(config)
    assert count_params(ablated) < count_params(build(SMALL_CONFIG))
    x = _images((1, 3, 12, 12))
    with no_grad():
        assert ablated(x).shape == x.shape


def test_default_ablations():
    full = count_params(build())
    for flag in ("use_msca", "use_samu", "use_sru", "use_sgfn"):
        assert count_params(build(UHDResConfig(**{flag: False}))) < full


@pytest.mark.parametrize("mode", ["phase", "both"])
def test_samu_modes(mode):
    model = build(SMALL_CONFIG.replace(samu_mode=mode))
    x = _images((1, 3, 8, 8))
    with no_grad():
        assert model(x).shape == x.shape
    more = count_params(model) > count_params(build(SMALL_CONFIG))
    assert more == (mode == "both")


def test_kernel_preset():
    assert kernel_preset("id-7-11-15") == (7, 11, 15)
    assert kernel_preset("3,5,7") == (3, 5, 7)
    assert kernel_preset("id-9-11-13") == (9, 11, 13)
    assert kernel_preset([1, 3, 5]) == (1, 3, 5)
    assert len(KERNEL_PRESETS) == 6
    with pytest.raises(ConfigError, match="Invalid kernel"):
        kernel_preset("large")
    with pytest.raises(ConfigError, match="three kernel sizes"):
        kernel_preset("3,5")


@pytest.mark.parametrize(
    "changes,message",
    [
        (dict(level_channels=(12, 24)), "exactly three"),
        (dict(level_channels=(16, 32, 64)), "must equal initial_channels"),
        (dict(level_channels=(12, 36, 72)), "double per level"),
        (dict(initial_channels=6, level_channels=(6, 12, 24)), "divisible by 4"),
        (dict(level_depths=(2, 0, 4)), "positive"),
        (dict(msca_kernels=(5, 8, 13)), "three odd sizes"),
        (dict(strip_kernel=10), "strip_kernel"),
        (dict(cam_reduction=5), "cam_reduction"),
        (dict(dtype="float16"), "element type"),
        (dict(samu_mode="magnitude"), "samu_mode"),
    ],
)
def test_config_validation(changes, message):
    with pytest.raises(ConfigError, match=message):
        UHDResConfig(**changes)


def test_config_normalizes_sequences():
    config = UHDResConfig(level_depths=[1, 1, 1])  # type: ignore[arg-type]
    assert config.level_depths == (1, 1, 1)
    assert config.replace(strip_kernel=7).strip_kernel == 7


def test_param_breakdown_sums_to_total():
    model = build()
    groups = param_breakdown(model)
    assert sum(count for _, count in groups) == DEFAULT_PARAMS
    names = [name for name, _ in groups]
    assert names[0] == "stem"
    assert "bottleneck.daeb3" in names
    assert names[-1] == "head"
    assert sum(count for _, count in param_breakdown(model, 1)) == DEFAULT_PARAMS


def test_repr():
    assert "params=" in repr(build(SMALL_CONFIG))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_model_gradient(seed):
    result = check_model_gradient(seed)
    assert result.passed, result.detail
