"""Append-only NDJSON record of a training run."""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from micformer.contracts.error import DataError, InvariantError
from micformer.metrics.constants import RUNLOG_KINDS, RUNLOG_SCHEMA

logger = logging.getLogger(__name__)

RUNLOG_NAME = "runlog.ndjson"


class RunLog:
    """Writes one JSON object per line and flushes after each record.

    Iteration steps are strictly increasing; every other record kind may repeat
    the step of the iteration that preceded it but never go back.
    """

    def __init__(self, path: str | Path, *, resume: bool = False) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._records: list[dict[str, Any]] = []
        if resume and self.path.exists():
            self._records = read_runlog(self.path)
            mode = "a"
        else:
            mode = "w"
        self._fh = self.path.open(mode, encoding="utf-8")

    def __enter__(self) -> RunLog:
        return self

    def __exit__(self, *_exc: object) -> None:
        self.close()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    @property
    def records(self) -> tuple[dict[str, Any], ...]:
        return tuple(self._records)

    @property
    def last_step(self) -> int:
        return int(self._records[-1]["step"]) if self._records else 0

    def _last_iteration_step(self) -> int:
        for rec in reversed(self._records):
            if rec["kind"] == "iteration":
                return int(rec["step"])
        return 0

    def append(self, kind: str, *, step: int, epoch: int, **fields: Any) -> dict[str, Any]:
        if kind not in RUNLOG_KINDS:
            raise InvariantError(f"unknown run log record kind {kind!r}")
        if step < self.last_step or (kind == "iteration" and step <= self._last_iteration_step()):
            raise InvariantError(
                f"run log steps must increase: {kind} step {step} after {self.last_step}"
            )
        for key, value in fields.items():
            if isinstance(value, float) and not math.isfinite(value):
                fields[key] = None
        record: dict[str, Any] = {"schema": RUNLOG_SCHEMA, "kind": kind, "step": step, "epoch": epoch}
        record.update(fields)
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()
        self._records.append(record)
        logger.debug("runlog %s step=%d epoch=%d", kind, step, epoch)
        return record


def iter_runlog(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        for idx, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"run log line {idx} is not valid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise DataError(f"run log line {idx} is not a JSON object")
            yield obj


def read_runlog(path: str | Path) -> list[dict[str, Any]]:
    return list(iter_runlog(path))


def strip_wall_time(records: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Records without their wall-clock fields, for run-to-run comparisons."""

    return [{k: v for k, v in rec.items() if k != "wall_time"} for rec in records]


__all__ = ["RUNLOG_NAME", "RunLog", "iter_runlog", "read_runlog", "strip_wall_time"]
