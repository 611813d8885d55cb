"""Binary formats: parameter checkpoints and ``.mvol`` volumes."""

from .atomic import atomic_write_bytes, atomic_write_text
from .checkpoint import (
    Checkpoint,
    dumps_checkpoint,
    load_params,
    loads_checkpoint,
    read_checkpoint,
    save_params,
    write_checkpoint,
)
from .mvol import dumps_mvol, loads_mvol, read_mvol, write_mvol

__all__ = [
    "Checkpoint",
    "atomic_write_bytes",
    "atomic_write_text",
    "dumps_checkpoint",
    "dumps_mvol",
    "load_params",
    "loads_checkpoint",
    "loads_mvol",
    "read_checkpoint",
    "read_mvol",
    "save_params",
    "write_checkpoint",
    "write_mvol",
]
