"""
Binary checkpoint files.

Layout, all integers little-endian:

| field            | encoding                                                  |
|------------------|-----------------------------------------------------------|
| magic            | the four bytes `UHDR`                                     |
| version          | u32, currently 1                                          |
| element type     | u8, 0 = float32, 1 = float64                              |
| entry count      | u32                                                       |
| entries          | u16 name length, UTF-8 name, u8 rank, u32 per extent, raw scalars |
| checksum         | u32 CRC-32 of everything before it                        |

Entry names are the dotted parameter and buffer paths of the model. Reserved prefixes hold the
model configuration (`config.*`), optimizer moments (`optim.m.*`, `optim.v.*`) and the trainer's
step counter (`trainer.step`).
"""

from __future__ import annotations

from collections.abc import Mapping
import dataclasses
from pathlib import Path
import struct
import zlib

import numpy as np

from uhdres.blocks import SAMU_MODES
from uhdres.errors import CheckpointChecksumError
from uhdres.errors import CheckpointFormatError
from uhdres.errors import CheckpointTruncatedError
from uhdres.errors import ConfigError
from uhdres.errors import MissingKeyError
from uhdres.errors import ShapeMismatchError
from uhdres.errors import UnknownKeyError
from uhdres.model import UHDResConfig
from uhdres.model import UHDResModel
from uhdres.model import build

MAGIC = b"UHDR"
VERSION = 1
DTYPE_TAGS: dict[str, int] = {"float32": 0, "float64": 1}
_TAG_DTYPES = {tag: name for name, tag in DTYPE_TAGS.items()}

RESERVED_PREFIXES = ("config.", "optim.", "trainer.")

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(UHDResConfig) if f.name != "dtype"]


@dataclasses.dataclass
class Checkpoint:
    dtype: str
    entries: dict[str, np.ndarray]


def encode(entries: Mapping[str, np.ndarray], dtype: str) -> bytes:
    if dtype not in DTYPE_TAGS:
        raise CheckpointFormatError(f"Unsupported element type {dtype!r}.")
    le = np.dtype(dtype).newbyteorder("<")
    parts = [MAGIC, struct.pack("<IBI", VERSION, DTYPE_TAGS[dtype], len(entries))]
    for name, value in entries.items():
        raw_name = name.encode("utf-8")
        value = np.asarray(value)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype=le).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"Checkpoint ends at byte {len(self.data)}, expected at least {self.pos + n} bytes."
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointFormatError(f"Not a uhdres checkpoint: magic is {data[:4]!r}, expected {MAGIC!r}.")
    reader = _Reader(data, 4)
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"Unsupported checkpoint version {version}, expected {VERSION}.")
    (tag,) = reader.unpack("<B")
    if tag not in _TAG_DTYPES:
        raise CheckpointFormatError(f"Unknown element type tag {tag}.")
    dtype = _TAG_DTYPES[tag]
    le = np.dtype(dtype).newbyteorder("<")
    (count,) = reader.unpack("<I")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointFormatError(f"Entry name is not valid UTF-8: {e}") from None
        if name in entries:
            raise CheckpointFormatError(f"Duplicate checkpoint entry {name!r}.")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(size * le.itemsize)
        entries[name] = np.frombuffer(raw, dtype=le).astype(dtype).reshape(shape)
    body_end = reader.pos
    (crc,) = reader.unpack("<I")
    if crc != zlib.crc32(data[:body_end]):
        raise CheckpointChecksumError("Checkpoint checksum mismatch, the file is corrupted.")
    if reader.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - reader.pos} unexpected trailing bytes after the checksum.")
    return Checkpoint(dtype, entries)


def read_checkpoint(path: Path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def write_checkpoint(path: Path, checkpoint: Checkpoint) -> None:
    Path(path).write_bytes(encode(checkpoint.entries, checkpoint.dtype))


def config_entries(config: UHDResConfig) -> dict[str, np.ndarray]:
    """Numeric encoding of every configuration field except the element type (stored in the header)."""
    out = {}
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if name == "samu_mode":
            value = SAMU_MODES.index(value)
        out[f"config.{name}"] = np.asarray(value, dtype=np.float64)
    return out


def config_from_entries(entries: Mapping[str, np.ndarray], dtype: str) -> UHDResConfig:
    missing = [f"config.{name}" for name in _CONFIG_FIELDS if f"config.{name}" not in entries]
    if missing:
        raise MissingKeyError(f"Checkpoint lacks configuration entries: {', '.join(missing)}.")
    unknown = sorted(
        k for k in entries if k.startswith("config.") and k.removeprefix("config.") not in _CONFIG_FIELDS
    )
    if unknown:
        raise UnknownKeyError(f"Unknown configuration entries: {', '.join(unknown)}.")
    defaults = UHDResConfig()
    values: dict = {"dtype": dtype}
    for name in _CONFIG_FIELDS:
        raw = entries[f"config.{name}"]
        default = getattr(defaults, name)
        if isinstance(default, tuple):
            values[name] = tuple(int(v) for v in raw.reshape(-1))
        elif isinstance(default, bool):
            values[name] = bool(raw.reshape(()))
        elif name == "samu_mode":
            index = int(raw.reshape(()))
            if not 0 <= index < len(SAMU_MODES):
                raise CheckpointFormatError(f"Invalid samu_mode code {index}.")
            values[name] = SAMU_MODES[index]
        else:
            values[name] = int(raw.reshape(()))
    try:
        return UHDResConfig(**values)
    except ConfigError as e:
        raise CheckpointFormatError(f"Checkpoint holds an invalid configuration: {e}") from None


def model_state(model: UHDResModel) -> dict[str, np.ndarray]:
    """All parameter values and buffers by dotted name (views, not copies)."""
    state = {name: p.data for name, p in model.named_parameters()}
    state.update(model.named_buffers())
    return state


def model_entries(model: UHDResModel) -> dict[str, np.ndarray]:
    return {**config_entries(model.config), **model_state(model)}


def load_state(model: UHDResModel, entries: Mapping[str, np.ndarray]) -> None:
    """Copy parameter and buffer values from `entries` into `model` in place."""
    state = model_state(model)
    unknown = sorted(k for k in entries if k not in state and not k.startswith(RESERVED_PREFIXES))
    if unknown:
        raise UnknownKeyError(f"Checkpoint entries without counterpart in the model: {', '.join(unknown)}.")
    missing = [k for k in state if k not in entries]
    if missing:
        raise MissingKeyError(f"Checkpoint lacks entries for: {', '.join(missing)}.")
    for name, target in state.items():
        value = entries[name]
        if value.shape != target.shape:
            raise ShapeMismatchError(
                f"Entry {name!r} has shape {list(value.shape)}, the model expects {list(target.shape)}."
            )
    for name, target in state.items():
        target[...] = entries[name]


def save_checkpoint(model: UHDResModel, path: Path, extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Write the model (configuration, parameters, buffers) and optional `extra` entries to `path`."""
    entries = model_entries(model)
    if extra:
        entries.update(extra)
    write_checkpoint(path, Checkpoint(model.config.dtype, entries))


def model_from_checkpoint(checkpoint: Checkpoint) -> UHDResModel:
    model = build(config_from_entries(checkpoint.entries, checkpoint.dtype))
    load_state(model, checkpoint.entries)
    return model


def load_checkpoint(path: Path) -> UHDResModel:
    """Rebuild the model stored at `path`."""
    return model_from_checkpoint(read_checkpoint(path))
