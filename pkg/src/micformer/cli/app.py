"""
app.py

Command-line entry point for the micformer toolkit:
- synth: synthetic CT/MRI/label phantoms as ``.mvol`` triples plus a manifest
- train: Adam training with RunLog, periodic/best/final checkpoints and resume
- eval: per-case Dice/MIoU/HD95 from a checkpoint or from saved predictions
- infer: segment one CT/MRI pair into a label ``.mvol``
- gradcheck: float64 finite-difference verification of every differentiable op
- bench: timings of the forward/backward pass and the cross-attention kernels
- ab-compare: full model vs an ablation (CT-only or frozen offsets) over seeds

Errors leave through :func:`micformer.contracts.error.guard_cli`, which prints a JSON
envelope on stderr and exits with a stable code.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from collections.abc import Sequence
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any

from micformer.analysis import format_bench, format_gradcheck, run_bench, run_gradcheck
from micformer.cli.commands import CLIContext, register_subcommands
from micformer.config import AppConfig, load_app_config
from micformer.contracts.error import BadInputError, DataError, Exit, InvariantError, guard_cli
from micformer.data.manifest import Dataset, load_dataset, write_dataset
from micformer.data.volumes import LabelMap, Modality, Volume
from micformer.io.atomic import atomic_write_text
from micformer.io.checkpoint import read_checkpoint
from micformer.io.mvol import read_mvol, write_mvol
from micformer.metrics.core import AggregateReport
from micformer.model.params import check_store
from micformer.training import (
    compare_ablation,
    config_from_checkpoint,
    evaluate,
    evaluate_predictions,
    predict,
    train,
)

logger = logging.getLogger("micformer")
logger.setLevel(logging.INFO)
logger.propagate = False

DEFAULT_LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
DEFAULT_LOG_DATEFMT = "%Y-%m-%dT%H:%M:%S"
DEFAULT_LOG_MAX_BYTES = 5_000_000
DEFAULT_LOG_BACKUP_COUNT = 5
PREDICTION_SUFFIX = "_pred.mvol"
SPLITS = ("train", "test", "all")


class JsonFormatter(logging.Formatter):
    """Render log records as JSON objects."""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "ts": self.formatTime(record, DEFAULT_LOG_DATEFMT),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        if record.stack_info:
            payload["stack"] = self.formatStack(record.stack_info)
        return json.dumps(payload, ensure_ascii=False)


def configure_logging(
    use_json: bool = False,
    log_file: str | None = None,
    *,
    max_bytes: int = DEFAULT_LOG_MAX_BYTES,
    backup_count: int = DEFAULT_LOG_BACKUP_COUNT,
) -> None:
    """Configure console (and optional rotating file) logging."""

    formatter: logging.Formatter
    if use_json:
        formatter = JsonFormatter()
    else:
        formatter = logging.Formatter(DEFAULT_LOG_FORMAT, DEFAULT_LOG_DATEFMT)

    for handler in list(logger.handlers):
        with contextlib.suppress(Exception):
            handler.close()
        logger.removeHandler(handler)

    stream = logging.StreamHandler()
    stream.setFormatter(formatter)
    logger.addHandler(stream)

    if log_file:
        handler = RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count)
        handler.setFormatter(formatter)
        logger.addHandler(handler)


configure_logging()

OUTPUT_JSON: bool = False
CONFIG_PATH: str | None = None


def emit_success(
    command: str, *, text: str | None = None, data: dict[str, Any] | None = None
) -> None:
    if OUTPUT_JSON:
        payload: dict[str, Any] = {"ok": True, "command": command}
        if data:
            payload.update(data)
        if text is not None and "result" not in payload:
            payload["result"] = text
        print(json.dumps(payload, ensure_ascii=False))
    else:
        if text is not None:
            print(text)


def current_config(path: str | None = None) -> AppConfig:
    """Config from ``path`` (or the global ``--config``), defaults when neither is set."""

    return load_app_config(path or CONFIG_PATH)


def _write_json(path: str | Path, doc: dict[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _select_cases(dataset: Dataset, split: str) -> list[Any]:
    if split not in SPLITS:
        raise BadInputError(f"unknown split {split!r}", hint=f"choose one of {', '.join(SPLITS)}")
    if split == "train":
        return dataset.train_cases
    if split == "test":
        return dataset.test_cases
    return [dataset.cases[i] for i in sorted(dataset.cases)]


def _check_classes(dataset: Dataset, cfg: AppConfig) -> None:
    if dataset.num_classes != cfg.model.num_classes:
        raise BadInputError(
            f"dataset has {dataset.num_classes} classes but num_classes={cfg.model.num_classes}",
            hint="set num_classes in the config to match the dataset",
        )


# --------------------------------------------------------------------
# Command runners
# --------------------------------------------------------------------
def run_synth(
    out_dir: str,
    cfg: AppConfig,
    *,
    cases: int | None = None,
    edge: int | None = None,
    classes: int | None = None,
    seed: int | None = None,
    train_fraction: float | None = None,
    misalignment: float | None = None,
) -> dict[str, Any]:
    resolved = cfg.with_overrides(
        cases=cases,
        edge=edge,
        num_classes=classes,
        seed=seed,
        train_fraction=train_fraction,
        misalignment=misalignment,
    )
    manifest = write_dataset(
        out_dir,
        seed=resolved.model.seed,
        cases=resolved.data.cases,
        edge=resolved.data.edge,
        classes=resolved.model.num_classes,
        train_fraction=resolved.data.train_fraction,
        misalignment=resolved.data.misalignment,
    )
    return {
        "out": Path(out_dir).as_posix(),
        "cases": len(manifest["cases"]),
        "edge": manifest["edge"],
        "classes": manifest["classes"],
        "train": manifest["split"]["train"],
        "test": manifest["split"]["test"],
    }


def run_train(
    data_dir: str,
    out_dir: str,
    cfg: AppConfig,
    *,
    resume: str | None = None,
    overrides: dict[str, Any] | None = None,
) -> dict[str, Any]:
    resolved = cfg.with_overrides(**(overrides or {}))
    dataset = load_dataset(data_dir)
    _check_classes(dataset, resolved)
    result = train(resolved, dataset, out_dir, resume=resume)
    return {
        "final_checkpoint": result.final_checkpoint.as_posix(),
        "best_checkpoint": result.best_checkpoint.as_posix() if result.best_checkpoint else None,
        "runlog": result.runlog.as_posix(),
        "steps": result.steps,
        "epochs": result.epochs,
        "best_dice": result.best_dice if result.best_dice >= 0 else None,
        "final_loss": result.losses[-1] if result.losses else None,
    }


def _load_predictions(pred_dir: Path, case_ids: Sequence[str]) -> list[LabelMap]:
    preds: list[LabelMap] = []
    for case_id in case_ids:
        path = pred_dir / f"{case_id}{PREDICTION_SUFFIX}"
        if not path.exists():
            raise FileNotFoundError(f"missing prediction for case {case_id}: {path}")
        obj = read_mvol(path)
        if not isinstance(obj, LabelMap):
            raise DataError(f"{path} does not hold a label map")
        preds.append(obj)
    return preds


def run_eval(
    data_dir: str,
    *,
    checkpoint: str | None = None,
    predictions: str | None = None,
    split: str = "test",
    config: AppConfig | None = None,
) -> AggregateReport:
    if (checkpoint is None) == (predictions is None):
        raise BadInputError("pass exactly one of --checkpoint or --predictions")
    dataset = load_dataset(data_dir)
    cases = _select_cases(dataset, split)
    if not cases:
        raise BadInputError(f"the {split} split is empty")
    if checkpoint is not None:
        cfg = config if config is not None else config_from_checkpoint(read_checkpoint(checkpoint))
        _check_classes(dataset, cfg)
        return evaluate(checkpoint, cases, cfg)
    ids = [c.case_id for c in cases]
    preds = _load_predictions(Path(predictions or "."), ids)
    return evaluate_predictions(preds, [c.labels for c in cases], dataset.num_classes, case_ids=ids)


def run_infer(ct_path: str, mri_path: str | None, checkpoint: str, out_path: str) -> dict[str, Any]:
    ckpt = read_checkpoint(checkpoint)
    cfg = config_from_checkpoint(ckpt)
    check_store(ckpt.params, cfg.model)
    ct = read_mvol(ct_path, Modality.CT)
    if not isinstance(ct, Volume):
        raise DataError(f"{ct_path} does not hold an intensity volume")
    mri: Volume | None = None
    if cfg.model.dual:
        if mri_path is None:
            raise BadInputError("this checkpoint is dual-stream; pass --mri")
        loaded = read_mvol(mri_path, Modality.MRI)
        if not isinstance(loaded, Volume):
            raise DataError(f"{mri_path} does not hold an intensity volume")
        if loaded.extents != ct.extents:
            raise DataError(f"CT extents {ct.extents} and MRI extents {loaded.extents} differ")
        mri = loaded
    labels = predict(ct, mri, ckpt.params, cfg.model)
    if labels.extents != ct.extents:
        raise InvariantError(f"prediction extents {labels.extents} differ from input {ct.extents}")
    target = write_mvol(labels, out_path)
    logger.info("Wrote prediction %s", target)
    counts = {str(c): int((labels.data == c).sum()) for c in range(cfg.model.num_classes)}
    return {"out": target.as_posix(), "extents": list(labels.extents), "voxels": counts}


def run_ab_compare(
    data_dir: str,
    out_dir: str,
    cfg: AppConfig,
    *,
    candidate: str,
    seeds: Sequence[int],
    json_out: str | None = None,
) -> dict[str, Any]:
    dataset = load_dataset(data_dir)
    _check_classes(dataset, cfg)
    summary = compare_ablation(cfg, dataset, out_dir, candidate, seeds)
    target = Path(json_out) if json_out else Path(out_dir) / f"ablation_{candidate}.json"
    _write_json(target, summary)
    summary["comparison_json"] = target.as_posix()
    return summary


# --------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------
def build_parser() -> tuple[argparse.ArgumentParser, dict[str, Any]]:
    p = argparse.ArgumentParser(
        prog="micformer",
        description=(
            "Dual-stream multimodal segmentation toolkit: synthetic data, training, "
            "evaluation, inference, gradient checks and benchmarks."
        ),
    )
    p.add_argument("--log-json", action="store_true", help="Emit logs in JSON format")
    p.add_argument(
        "--log-file",
        default=None,
        help="Optional log file path (rotates at 5MB, keeps 5 backups by default)",
    )
    p.add_argument(
        "--log-max-bytes",
        type=int,
        default=DEFAULT_LOG_MAX_BYTES,
        help="Max bytes per log file before rotation (default: %(default)s)",
    )
    p.add_argument(
        "--log-backup-count",
        type=int,
        default=DEFAULT_LOG_BACKUP_COUNT,
        help="Number of rotated log files to keep (default: %(default)s)",
    )
    p.add_argument(
        "--json", action="store_true", help="Emit machine-readable success output to stdout"
    )
    p.add_argument("--config", default=None, help="Path to a flat key = value config file")
    sub = p.add_subparsers(dest="cmd", required=True)

    ctx = CLIContext(
        emit_success=emit_success,
        load_config=current_config,
        run_synth=run_synth,
        run_train=run_train,
        run_eval=run_eval,
        run_infer=run_infer,
        run_gradcheck=run_gradcheck,
        format_gradcheck=format_gradcheck,
        run_bench=run_bench,
        format_bench=format_bench,
        run_ab_compare=run_ab_compare,
        write_json=_write_json,
        logger=logger,
        json_enabled=lambda: OUTPUT_JSON,
        guard=guard_cli,
    )
    handlers = register_subcommands(sub, ctx)
    return p, handlers


def main(argv: Sequence[str] | None = None) -> int:
    p, handlers = build_parser()
    args = p.parse_args(list(argv) if argv is not None else sys.argv[1:])

    global OUTPUT_JSON, CONFIG_PATH
    OUTPUT_JSON = bool(args.json)
    CONFIG_PATH = args.config

    configure_logging(
        args.log_json,
        args.log_file,
        max_bytes=args.log_max_bytes,
        backup_count=args.log_backup_count,
    )

    handler = handlers.get(args.cmd)
    if handler is None:  # pragma: no cover - argparse rejects unknown commands
        return int(Exit.BAD_INPUT)
    return handler(args)


def console_main() -> None:
    """Entry point for console_scripts."""

    try:
        raise SystemExit(main(sys.argv[1:]))
    except SystemExit:
        raise
    except Exception as e:  # noqa: BLE001
        logger.exception("Fatal error: %s", e)
        raise SystemExit(int(Exit.INVARIANT)) from e


__all__ = [
    "JsonFormatter",
    "build_parser",
    "configure_logging",
    "console_main",
    "current_config",
    "emit_success",
    "main",
    "run_ab_compare",
    "run_eval",
    "run_infer",
    "run_synth",
    "run_train",
]
