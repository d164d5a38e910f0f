"""
Flat `key=value` configuration files.

```
# desk-scale run
initial_channels = 12
level_channels = 12, 24, 48
msca_kernels = id-7-13-19
total_steps = 500
use_sru = false
```

Keys are the field names of `uhdres.model.UHDResConfig` and `uhdres.train.TrainConfig`.
Lines starting with `#` and blank lines are ignored; lists are comma-separated. `msca_kernels`
also accepts the names in `uhdres.model.KERNEL_PRESETS`.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from uhdres.errors import ConfigError
from uhdres.model import UHDResConfig
from uhdres.model import kernel_preset
from uhdres.train import TrainConfig

_MODEL_DEFAULTS = UHDResConfig()
_TRAIN_DEFAULTS = TrainConfig()
MODEL_KEYS = tuple(f.name for f in dataclasses.fields(UHDResConfig))
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _convert(key: str, raw: str, default: Any) -> Any:
    if key == "msca_kernels":
        return kernel_preset(raw)
    if isinstance(default, bool):
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> tuple[dict[str, Any], dict[str, Any]]:
    """
    Parse configuration text into `(model_overrides, train_overrides)`.

    Unknown keys, repeated keys and unparsable values raise `uhdres.errors.ConfigError`
    naming the key and the line.
    """
    model: dict[str, Any] = {}
    train: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}.")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key in MODEL_KEYS:
            target, default = model, getattr(_MODEL_DEFAULTS, key)
        elif key in TRAIN_KEYS:
            target, default = train, getattr(_TRAIN_DEFAULTS, key)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}.")
        if key in target:
            raise ConfigError(f"{source}:{lineno}: key {key!r} is set twice.")
        try:
            target[key] = _convert(key, raw, default)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{source}:{lineno}: invalid value for {key!r}: {e}") from None
    return model, train


def build_configs(
    model_overrides: dict[str, Any], train_overrides: dict[str, Any]
) -> tuple[UHDResConfig, TrainConfig]:
    return UHDResConfig(**model_overrides), TrainConfig(**train_overrides)


def load_config(path: Path | None) -> tuple[UHDResConfig, TrainConfig]:
    """Read both configurations from `path`, or return the defaults if `path` is `None`."""
    if path is None:
        return UHDResConfig(), TrainConfig()
    path = Path(path)
    return build_configs(*parse_config(path.read_text(encoding="utf-8"), str(path)))
