from __future__ import annotations

import argparse
import json
import math
import sys
from collections.abc import Sequence
from importlib import resources
from pathlib import Path
from typing import Any

try:
    from jsonschema import Draft202012Validator
except ImportError as exc:  # pragma: no cover
    print("jsonschema not installed; install dev extras to validate.", file=sys.stderr)
    raise SystemExit(2) from exc


def _default_schema_text() -> str:
    schema_resource = resources.files("micformer.contracts") / "runlog_schema.json"
    with schema_resource.open(encoding="utf-8") as stream:
        return stream.read()


def _load_schema_text(custom_schema: Path | None) -> str:
    if custom_schema is None:
        return _default_schema_text()
    return custom_schema.read_text(encoding="utf-8")


def _create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Validate a training RunLog NDJSON against the runlog.v1 schema",
    )
    parser.add_argument("ndjson", type=Path, help="Path to runlog.ndjson")
    parser.add_argument(
        "--schema",
        type=Path,
        default=None,
        help="Schema JSON path (default: runlog.v1 bundled schema)",
    )
    return parser


def _ordering_problem(obj: dict[str, Any], last_step: int, last_iter: int) -> str | None:
    step = obj["step"]
    if step < last_step:
        return f"step {step} goes back from {last_step}"
    if obj["kind"] == "iteration":
        if step <= last_iter:
            return f"iteration step {step} is not above {last_iter}"
        loss = obj.get("loss")
        if not isinstance(loss, int | float) or not math.isfinite(loss) or loss < 0:
            return f"iteration loss {loss!r} is not a finite non-negative number"
    return None


def main(argv: Sequence[str] | None = None) -> int:
    parser = _create_parser()
    args = parser.parse_args(argv)

    schema = json.loads(_load_schema_text(args.schema))
    validator = Draft202012Validator(schema)

    bad = 0
    last_step = 0
    last_iter = 0
    for idx, line in enumerate(args.ndjson.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            bad += 1
            print(f"[invalid line {idx}] not JSON: {exc.msg}", file=sys.stderr)
            continue
        errors = sorted(validator.iter_errors(obj), key=lambda err: list(err.path))
        if errors:
            bad += 1
            print(f"[invalid line {idx}] {line}", file=sys.stderr)
            for err in errors:
                print(f"  - {err.message} @ {list(err.path)}", file=sys.stderr)
            continue

        problem = _ordering_problem(obj, last_step, last_iter)
        if problem is not None:
            bad += 1
            print(f"[invalid line {idx}] {problem}", file=sys.stderr)
            continue
        last_step = obj["step"]
        if obj["kind"] == "iteration":
            last_iter = obj["step"]

    if bad:
        print(f"Validation finished: {bad} invalid line(s)", file=sys.stderr)
    else:
        print("Validation finished: all lines valid")
    return 1 if bad else 0


def console_main() -> int:
    return main(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(console_main())
