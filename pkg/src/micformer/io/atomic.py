"""Write-temp-then-rename helpers."""

from __future__ import annotations

import logging
import os
import tempfile
from contextlib import suppress
from pathlib import Path

logger = logging.getLogger("micformer")


def atomic_write_bytes(path: str | Path, blob: bytes) -> Path:
    """Write ``blob`` to a sibling temp file, fsync it and rename it over ``path``."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        delete=False,
        dir=target.parent,
        prefix=f".{target.name}.",
        suffix=".tmp",
    ) as tmp:
        tmp_path = Path(tmp.name)
        try:
            tmp.write(blob)
            tmp.flush()
            os.fsync(tmp.fileno())
        except Exception:  # noqa: BLE001
            tmp.close()
            with suppress(Exception):
                tmp_path.unlink()
            raise
    try:
        os.replace(tmp_path, target)
    except Exception:  # noqa: BLE001
        with suppress(Exception):
            tmp_path.unlink()
        raise
    logger.debug("Wrote %d bytes to %s", len(blob), target)
    return target


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


__all__ = ["atomic_write_bytes", "atomic_write_text"]
