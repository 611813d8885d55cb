import contextlib
import io
import json
import shlex
import shutil
from pathlib import Path
from typing import Any, cast

import pytest

from micformer.cli import app
from micformer.data.volumes import LabelMap, Modality, Volume
from micformer.io.mvol import read_mvol, write_mvol

pytestmark = pytest.mark.e2e


def run_cli(cmd: str) -> tuple[int, str, str]:
    argv = shlex.split(cmd)
    stdout = io.StringIO()
    stderr = io.StringIO()
    try:
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            try:
                code = app.main(argv)
            except SystemExit as exc:  # guard_cli exits through sys.exit
                if isinstance(exc.code, int):
                    code = exc.code
                elif exc.code is None:
                    code = 0
                else:
                    code = 1
    finally:
        app.OUTPUT_JSON = False
        app.CONFIG_PATH = None
        app.configure_logging()
    return code, stdout.getvalue().strip(), stderr.getvalue().strip()


def parse_error(stderr: str) -> dict[str, Any]:
    if not stderr.strip():
        return {}
    return cast(dict[str, Any], json.loads(stderr.splitlines()[-1]))


def parse_success(stdout: str) -> dict[str, Any]:
    return cast(dict[str, Any], json.loads(stdout.splitlines()[-1]))


def _synth(out: Path, extra: str = "") -> dict[str, Any]:
    code, out_text, err = run_cli(f"--json synth --out {out} --edge 32 --classes 3 {extra}")
    assert code == 0, err
    return parse_success(out_text)


def test_synth_is_byte_deterministic(tmp_path: Path) -> None:
    _synth(tmp_path / "a", "--cases 2 --seed 5")
    _synth(tmp_path / "b", "--cases 2 --seed 5")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.json" in names and "case_001_label.mvol" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_split_sizes(tmp_path: Path) -> None:
    result = _synth(tmp_path / "data", "--cases 20 --seed 1")
    assert result["ok"] is True and result["command"] == "synth"
    assert (len(result["train"]), len(result["test"])) == (16, 4)


def test_synth_rejects_small_edge(tmp_path: Path) -> None:
    code, _, err = run_cli(f"synth --out {tmp_path} --edge 8")
    assert code == 2
    assert parse_error(err)["error"] == "BadInput"


def test_unknown_config_key_is_bad_input(tmp_path: Path) -> None:
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 3\n", encoding="utf-8")
    code, _, err = run_cli(f"--config {bad} synth --out {tmp_path / 'x'}")
    assert code == 2
    env = parse_error(err)
    assert env["error"] == "BadInput"
    assert "colour" in env["detail"]


def test_eval_of_ground_truth_copies_is_perfect(tmp_path: Path) -> None:
    data = tmp_path / "data"
    result = _synth(data, "--cases 3 --seed 2")
    preds = tmp_path / "preds"
    preds.mkdir()
    for case_id in result["test"]:
        shutil.copy(data / f"{case_id}_label.mvol", preds / f"{case_id}{app.PREDICTION_SUFFIX}")
    code, out, err = run_cli(f"--json eval --data {data} --predictions {preds}")
    assert code == 0, err
    doc = parse_success(out)
    assert doc["aggregate"]["mean_dice"] == 1.0
    assert doc["aggregate"]["mean_hd95"] == 0.0
    default_report = data / "eval_report.json"
    assert doc["report_json"] == default_report.as_posix()
    saved = json.loads(default_report.read_text(encoding="utf-8"))
    assert saved["aggregate"]["mean_dice"] == 1.0

    code, _, err = run_cli(f"eval --data {data} --predictions {tmp_path / 'nowhere'}")
    assert code == 5
    assert parse_error(err)["error"] == "FileNotFound"


def test_train_infer_and_eval(tmp_path: Path, smoke_config: Path) -> None:
    data, run = tmp_path / "data", tmp_path / "run"
    code, _, err = run_cli(f"--config {smoke_config} synth --out {data}")
    assert code == 0, err
    code, out, err = run_cli(f"--json train --config {smoke_config} --data {data} --out {run}")
    assert code == 0, err
    trained = parse_success(out)
    assert trained["steps"] == 2
    assert Path(trained["final_checkpoint"]).is_file()

    ct = read_mvol(data / "case_000_ct.mvol", Modality.CT)
    mri = read_mvol(data / "case_000_mri.mvol", Modality.MRI)
    assert isinstance(ct, Volume) and isinstance(mri, Volume)
    write_mvol(Volume(ct.data[:30, :28, :31], ct.spacing, Modality.CT), tmp_path / "ct.mvol")
    write_mvol(Volume(mri.data[:30, :28, :31], mri.spacing, Modality.MRI), tmp_path / "mri.mvol")
    code, out, err = run_cli(
        f"--json infer --checkpoint {trained['final_checkpoint']} "
        f"--ct {tmp_path / 'ct.mvol'} --mri {tmp_path / 'mri.mvol'} --out {tmp_path / 'seg.mvol'}"
    )
    assert code == 0, err
    assert parse_success(out)["extents"] == [30, 28, 31]
    seg = read_mvol(tmp_path / "seg.mvol")
    assert isinstance(seg, LabelMap) and seg.extents == (30, 28, 31)

    code, _, err = run_cli(
        f"infer --checkpoint {trained['final_checkpoint']} "
        f"--ct {tmp_path / 'ct.mvol'} --out {tmp_path / 'seg2.mvol'}"
    )
    assert code == 2
    assert "--mri" in parse_error(err)["detail"]

    report = tmp_path / "report.json"
    code, out, err = run_cli(
        f"--json eval --data {data} --checkpoint {trained['final_checkpoint']} --out {report}"
    )
    assert code == 0, err
    assert parse_success(out)["aggregate"]["count"] == 1
    assert json.loads(report.read_text(encoding="utf-8"))["aggregate"]["count"] == 1


def test_corrupt_checkpoint_is_a_data_error(tmp_path: Path) -> None:
    data = tmp_path / "data"
    _synth(data, "--cases 2 --seed 3")
    bogus = tmp_path / "bogus.micf"
    bogus.write_bytes(b"NOPE" + bytes(32))
    code, _, err = run_cli(f"eval --data {data} --checkpoint {bogus}")
    assert code == 3
    assert parse_error(err)["error"] == "Data"


def test_gradcheck_command() -> None:
    code, out, err = run_cli("--json gradcheck --op softmax --trials 1")
    assert code == 0, err
    doc = parse_success(out)
    assert doc["passed"] is True
    assert doc["ops"][0]["op"] == "softmax"

    code, _, err = run_cli("gradcheck --op nosuch")
    assert code == 2
    assert parse_error(err)["error"] == "BadInput"


def test_bench_reports_every_kernel(tmp_path: Path, smoke_config: Path) -> None:
    out_json = tmp_path / "bench.json"
    code, out, err = run_cli(f"--json bench --config {smoke_config} --repeats 1 --out {out_json}")
    assert code == 0, err
    names = [k["name"] for k in parse_success(out)["kernels"]]
    assert names == [
        "forward",
        "forward_backward",
        "cross_attention_deformable",
        "cross_attention_plain",
    ]
    saved = json.loads(out_json.read_text(encoding="utf-8"))
    assert all(k["best_s"] > 0 for k in saved["kernels"])

    code, _, err = run_cli(f"bench --config {smoke_config} --edge 24")
    assert code == 2
    assert parse_error(err)["error"] == "Shape"


def test_ab_compare_writes_the_summary(
    tmp_path: Path, smoke_config: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    data = tmp_path / "data"
    run_cli(f"--config {smoke_config} synth --out {data}")
    calls: list[tuple[str, list[int]]] = []

    def fake_compare(
        cfg: Any, dataset: Any, out_dir: Any, candidate: str, seeds: list[int]
    ) -> dict[str, Any]:
        calls.append((candidate, list(seeds)))
        return {
            "schema": "micformer.ablation.v1",
            "candidate": candidate,
            "seeds": list(seeds),
            "per_seed": [],
            "mean_full": 0.75,
            "mean_candidate": 0.5,
            "gap": 0.25,
        }

    monkeypatch.setattr(app, "compare_ablation", fake_compare)
    out = tmp_path / "ab"
    code, stdout, err = run_cli(
        f"--json ab-compare --config {smoke_config} --data {data} --out {out} "
        "--candidate ct_only --seeds 0 1"
    )
    assert code == 0, err
    assert calls == [("ct_only", [0, 1])]
    summary = json.loads((out / "ablation_ct_only.json").read_text(encoding="utf-8"))
    assert summary["gap"] == 0.25
    assert parse_success(stdout)["comparison_json"].endswith("ablation_ct_only.json")


def test_log_json_emits_structured_lines(tmp_path: Path) -> None:
    code, _, err = run_cli(
        f"--log-json synth --out {tmp_path / 'data'} --cases 2 --edge 32 --classes 3"
    )
    assert code == 0
    records = [json.loads(line) for line in err.splitlines() if line.startswith("{")]
    assert records
    assert all({"ts", "level", "logger", "msg"} <= set(r) for r in records)
    assert any("Wrote 2 cases" in r["msg"] for r in records)
