"""
Exception types raised by uhdres.

All exceptions derive from `UHDResError`, so callers can catch everything the library raises
deliberately with a single `except` clause. Most of them additionally derive from the builtin
exception a Python user would expect (`ValueError` for bad input, `FloatingPointError` for
numerical trouble), which keeps them compatible with generic error handling.
"""

from __future__ import annotations


class UHDResError(Exception):
    """Base class for all errors raised by uhdres."""


class ShapeError(UHDResError, ValueError):
    """A tensor has an extent, rank or channel count that the operation cannot handle."""


class ContractError(UHDResError, ValueError):
    """A precondition of an operation is violated."""


class ConfigError(UHDResError, ValueError):
    """A configuration value or configuration file is invalid."""


class NonFiniteError(UHDResError, FloatingPointError):
    """An operation produced NaN or Inf values (debug mode), or received non-finite gradients."""


class CheckpointError(UHDResError, ValueError):
    """Base class for checkpoint serialization errors."""


class CheckpointFormatError(CheckpointError):
    """The file does not start with the checkpoint magic, or has an unsupported version or element type."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before all declared entries were read."""


class CheckpointChecksumError(CheckpointError):
    """The trailing CRC-32 does not match the file contents."""


class UnknownKeyError(CheckpointError):
    """The checkpoint contains an entry that has no counterpart in the model."""


class MissingKeyError(CheckpointError):
    """The model has a parameter or buffer that the checkpoint does not provide."""


class ShapeMismatchError(CheckpointError):
    """A checkpoint entry has different extents than the model's tensor with the same name."""


class ImageError(UHDResError, ValueError):
    """Base class for image file errors."""


class UnsupportedFormatError(ImageError):
    """The file is not a binary (P6) portable pixmap."""


class UnsupportedMaxvalError(ImageError):
    """The pixmap declares a maximum value other than 255."""


class TruncatedImageError(ImageError):
    """The pixmap ends before all pixels were read."""
