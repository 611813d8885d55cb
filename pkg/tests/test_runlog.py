from __future__ import annotations

import json
from pathlib import Path

import pytest
from jsonschema import Draft202012Validator

from micformer.cli import validate_runlog
from micformer.contracts.error import DataError, InvariantError
from micformer.training.runlog import RunLog, read_runlog, strip_wall_time

pytestmark = pytest.mark.unit

SCHEMA_PATH = (
    Path(__file__).resolve().parents[1] / "src" / "micformer" / "contracts" / "runlog_schema.json"
)


def _write_run(path: Path) -> None:
    with RunLog(path) as log:
        log.append("iteration", step=1, epoch=0, case_id="case_000", loss=1.5, wall_time=0.01)
        log.append("iteration", step=2, epoch=0, case_id="case_001", loss=1.25, wall_time=0.01)
        log.append("validation", step=2, epoch=0, mean_dice=0.4, miou=0.3, mean_hd95=7.5)
        log.append("checkpoint", step=2, epoch=0, path="epoch_0001.micf")


def test_records_follow_the_schema(tmp_path: Path) -> None:
    path = tmp_path / "runlog.ndjson"
    _write_run(path)
    validator = Draft202012Validator(json.loads(SCHEMA_PATH.read_text(encoding="utf-8")))
    records = read_runlog(path)
    assert [r["kind"] for r in records] == ["iteration", "iteration", "validation", "checkpoint"]
    for record in records:
        validator.validate(record)
    assert all("wall_time" not in r for r in strip_wall_time(records))


def test_step_ordering_is_enforced(tmp_path: Path) -> None:
    with RunLog(tmp_path / "runlog.ndjson") as log:
        log.append("iteration", step=3, epoch=0, case_id="a", loss=1.0, wall_time=0.0)
        with pytest.raises(InvariantError):
            log.append("iteration", step=3, epoch=0, case_id="a", loss=1.0, wall_time=0.0)
        log.append("validation", step=3, epoch=0, mean_dice=0.5, miou=0.5, mean_hd95=1.0)
        with pytest.raises(InvariantError):
            log.append("checkpoint", step=2, epoch=0, path="x.micf")
        with pytest.raises(InvariantError):
            log.append("restart", step=4, epoch=0)


def test_non_finite_values_are_written_as_null(tmp_path: Path) -> None:
    path = tmp_path / "runlog.ndjson"
    with RunLog(path) as log:
        record = log.append("abort", step=0, epoch=0, loss=float("nan"), reason="non-finite loss")
    assert record["loss"] is None
    assert json.loads(path.read_text(encoding="utf-8").splitlines()[0])["loss"] is None


def test_resume_appends_after_existing_records(tmp_path: Path) -> None:
    path = tmp_path / "runlog.ndjson"
    _write_run(path)
    with RunLog(path, resume=True) as log:
        assert log.last_step == 2
        with pytest.raises(InvariantError):
            log.append("iteration", step=2, epoch=1, case_id="a", loss=1.0, wall_time=0.0)
        log.append("iteration", step=3, epoch=1, case_id="case_000", loss=1.0, wall_time=0.0)
    assert len(read_runlog(path)) == 5


def test_read_runlog_rejects_garbage(tmp_path: Path) -> None:
    path = tmp_path / "runlog.ndjson"
    path.write_text('{"kind": "iteration"}\nnot json\n', encoding="utf-8")
    with pytest.raises(DataError):
        read_runlog(path)


def test_validator_accepts_good_and_rejects_bad_logs(tmp_path: Path) -> None:
    good = tmp_path / "good.ndjson"
    _write_run(good)
    assert validate_runlog.main([str(good)]) == 0

    bad = tmp_path / "bad.ndjson"
    lines = good.read_text(encoding="utf-8").splitlines()
    bad.write_text("\n".join([lines[1], lines[0]]) + "\n", encoding="utf-8")
    assert validate_runlog.main([str(bad)]) == 1

    nulls = tmp_path / "null.ndjson"
    record = json.loads(lines[0])
    record["loss"] = None
    nulls.write_text(json.dumps(record) + "\n", encoding="utf-8")
    assert validate_runlog.main([str(nulls)]) == 1
