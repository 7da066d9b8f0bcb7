"""Exception types shared across the package."""

from __future__ import annotations


class NlutError(Exception):
    """Base class for errors raised by this package."""


class CubeParseError(NlutError, ValueError):
    """Raised when a .cube stream is malformed; message carries the line number."""


class CheckpointError(NlutError, ValueError):
    """Raised when a checkpoint file is malformed, truncated, or incompatible."""


class NumericError(NlutError, ArithmeticError):
    """Raised when a non-finite value appears where the math requires finite ones."""
