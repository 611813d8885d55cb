"""Contract helpers for the micformer toolkit."""

from .error import (
    BadInputError,
    DataError,
    EnvelopeError,
    ErrorEnvelope,
    Exit,
    InvariantError,
    IOErrorEnvelope,
    NumericError,
    ShapeError,
    die,
    exit_code_for,
    guard_cli,
)

__all__ = [
    "Exit",
    "ErrorEnvelope",
    "EnvelopeError",
    "BadInputError",
    "ShapeError",
    "DataError",
    "NumericError",
    "InvariantError",
    "IOErrorEnvelope",
    "exit_code_for",
    "guard_cli",
    "die",
]
