"""Training, evaluation and ablation drivers."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from micformer.config import AppConfig, ModelConfig
from micformer.contracts.error import BadInputError, DataError, NumericError
from micformer.core.rng import make_rng
from micformer.core.tensor import Tape, Tensor
from micformer.data.preprocess import PadSpec, crop_to_original, normalize_intensity, pad_to_divisible
from micformer.data.volumes import CasePair, LabelMap, Spacing, Volume
from micformer.io.checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from micformer.metrics.constants import ABLATION_SCHEMA
from micformer.metrics.core import AggregateReport, MetricsReport, aggregate_reports, report
from micformer.model.network import micformer_forward
from micformer.model.params import ParameterStore, check_store, init_params

from .loss import seg_loss
from .optim import OptimState, adam_step, init_optim
from .runlog import RUNLOG_NAME, RunLog

logger = logging.getLogger("micformer")

FINAL_CHECKPOINT = "final.micf"
BEST_CHECKPOINT = "best.micf"
ABLATIONS: dict[str, dict[str, Any]] = {
    "ct_only": {"modalities": "ct_only"},
    "frozen_offsets": {"deformable": False},
}


class CaseSource(Protocol):
    @property
    def train_cases(self) -> list[CasePair]: ...

    @property
    def test_cases(self) -> list[CasePair]: ...


@dataclass(frozen=True)
class PreparedCase:
    """Normalised, padded network inputs plus what is needed to undo the padding."""

    case_id: str
    ct: Volume
    mri: Volume
    labels: LabelMap
    pad: PadSpec
    spacing: Spacing


def prepare_case(case: CasePair, cfg: ModelConfig) -> PreparedCase:
    ct, pad = pad_to_divisible(normalize_intensity(case.ct), cfg.multiple)
    mri, _ = pad_to_divisible(normalize_intensity(case.mri), cfg.multiple)
    labels, _ = pad_to_divisible(case.labels, cfg.multiple)
    return PreparedCase(case.case_id, ct, mri, labels, pad, case.spacing)


def predict_logits(ct: Volume, mri: Volume | None, params: Mapping[str, Tensor], cfg: ModelConfig) -> np.ndarray:
    """Logits at the original extents of ``ct``."""

    ct_in, pad = pad_to_divisible(normalize_intensity(ct), cfg.multiple)
    mri_in = None
    if mri is not None and cfg.dual:
        mri_in, _ = pad_to_divisible(normalize_intensity(mri), cfg.multiple)
    logits = micformer_forward(ct_in, mri_in, params, cfg)
    return crop_to_original(logits.numpy(), pad)


def predict(ct: Volume, mri: Volume | None, params: Mapping[str, Tensor], cfg: ModelConfig) -> LabelMap:
    """Argmax segmentation cropped back to the input extents."""

    logits = predict_logits(ct, mri, params, cfg)
    return LabelMap(np.argmax(logits, axis=-1).astype(np.uint8), ct.spacing)


def evaluate_params(
    params: Mapping[str, Tensor], cases: Sequence[CasePair], cfg: ModelConfig
) -> AggregateReport:
    if not cases:
        raise BadInputError("evaluation needs at least one case")
    reports = [
        report(
            predict(case.ct, case.mri, params, cfg),
            case.labels,
            cfg.num_classes,
            spacing=case.spacing,
            case_id=case.case_id,
        )
        for case in cases
    ]
    return aggregate_reports(reports)


def evaluate(
    checkpoint: str | Path, cases: Sequence[CasePair], cfg: AppConfig | None = None
) -> AggregateReport:
    """Load ``checkpoint`` and score it on ``cases``.

    The model config comes from the checkpoint echo unless ``cfg`` is given.
    """

    ckpt = read_checkpoint(checkpoint)
    app = cfg if cfg is not None else config_from_checkpoint(ckpt)
    check_store(ckpt.params, app.model)
    result = evaluate_params(ckpt.params, cases, app.model)
    logger.info(
        "Evaluated %s on %d cases: mean_dice=%.4f miou=%.4f mean_hd95=%.3f",
        checkpoint,
        len(cases),
        result.mean_dice,
        result.miou,
        result.mean_hd95,
    )
    return result


def evaluate_predictions(
    preds: Sequence[LabelMap | np.ndarray],
    gts: Sequence[LabelMap],
    num_classes: int,
    *,
    spacing: Spacing | None = None,
    case_ids: Sequence[str] | None = None,
) -> AggregateReport:
    """Score label maps directly, without a model."""

    if len(preds) != len(gts):
        raise BadInputError(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    ids = list(case_ids) if case_ids is not None else [None] * len(gts)
    reports: list[MetricsReport] = [
        report(p, g, num_classes, spacing=spacing, case_id=cid)
        for p, g, cid in zip(preds, gts, ids, strict=True)
    ]
    return aggregate_reports(reports)


def config_from_checkpoint(ckpt: Checkpoint) -> AppConfig:
    if not ckpt.config:
        raise DataError("checkpoint carries no config echo", hint="pass --config explicitly")
    try:
        cfg = AppConfig.from_flat(ckpt.config)
        cfg.validate()
    except BadInputError as exc:
        raise DataError(f"checkpoint config is invalid: {exc}") from exc
    return cfg


@dataclass(frozen=True)
class TrainResult:
    final_checkpoint: Path
    best_checkpoint: Path | None
    runlog: Path
    steps: int
    epochs: int
    best_dice: float
    losses: tuple[float, ...]
    params: ParameterStore


def _checkpoint(
    path: Path,
    params: ParameterStore,
    state: OptimState,
    cfg: AppConfig,
    *,
    epoch: int,
    step: int,
    best: float,
    offset: int = 0,
) -> Path:
    # epoch counts finished epochs; offset is how far the next epoch's shuffle got
    meta = {
        "epoch": epoch,
        "epoch_offset": offset,
        "step": step,
        "best_dice": best,
        "optim_t": state.t,
    }
    ckpt = Checkpoint(params, cfg.to_flat(), meta, state.m, state.v)
    return write_checkpoint(path, ckpt)


def _resume_state(path: Path, cfg: AppConfig) -> tuple[ParameterStore, OptimState, dict[str, Any]]:
    ckpt = read_checkpoint(path)
    saved = config_from_checkpoint(ckpt)
    if saved.model != cfg.model:
        raise DataError(
            f"checkpoint {path} was trained with a different model config",
            hint="resume with the same model keys; only training keys may change",
        )
    check_store(ckpt.params, cfg.model)
    for key in ("epoch", "step", "optim_t"):
        if not isinstance(ckpt.meta.get(key), int):
            raise DataError(f"checkpoint {path} has no resumable {key!r} entry")
    if not isinstance(ckpt.meta.get("epoch_offset", 0), int):
        raise DataError(f"checkpoint {path} has a malformed 'epoch_offset' entry")
    if list(ckpt.optim_m) != list(ckpt.params) or list(ckpt.optim_v) != list(ckpt.params):
        raise DataError(f"checkpoint {path} does not carry optimizer moments for every parameter")
    t = cfg.train
    state = OptimState(
        m=ckpt.optim_m,
        v=ckpt.optim_v,
        t=int(ckpt.meta["optim_t"]),
        lr=t.lr,
        beta1=t.beta1,
        beta2=t.beta2,
        eps=t.eps,
    )
    logger.info("Resuming from %s at epoch %d step %d", path, ckpt.meta["epoch"], ckpt.meta["step"])
    return ckpt.params, state, ckpt.meta


def train(
    cfg: AppConfig,
    dataset: CaseSource,
    out_dir: str | Path,
    *,
    resume: str | Path | None = None,
) -> TrainResult:
    """Adam on one case per step, epochs visiting the training split in seeded order.

    Writes ``runlog.ndjson``, ``epoch_NNNN.micf`` every ``checkpoint_every`` epochs,
    ``best.micf`` on validation improvement and ``final.micf`` at the end. A
    ``max_iterations`` stop inside an epoch skips that epoch's validation and records
    the position reached in its shuffle, so ``resume`` picks up with the next case.
    """

    cfg.validate()
    mcfg, tcfg = cfg.model, cfg.train
    train_cases = list(dataset.train_cases)
    if not train_cases:
        raise BadInputError("the training split is empty", hint="generate more cases or raise train_fraction")
    val_cases = list(dataset.test_cases)
    for case in (*train_cases, *val_cases):
        if int(case.labels.data.max()) >= mcfg.num_classes:
            raise BadInputError(
                f"case {case.case_id} has labels beyond num_classes={mcfg.num_classes}"
            )
    prepared = [prepare_case(c, mcfg) for c in train_cases]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        params, state, meta = _resume_state(Path(resume), cfg)
        start_epoch, step = int(meta["epoch"]), int(meta["step"])
        skip = int(meta.get("epoch_offset", 0))
        if not 0 <= skip < len(prepared):
            raise DataError(
                f"checkpoint {resume} stopped {skip} cases into an epoch of {len(prepared)}",
                hint="resume with the dataset the run was started on",
            )
        best = float(meta.get("best_dice", -1.0))
    else:
        params = init_params(mcfg)
        state = init_optim(params, tcfg)
        start_epoch, step, best, skip = 0, 0, -1.0, 0

    best_path: Path | None = out / BEST_CHECKPOINT if (out / BEST_CHECKPOINT).exists() else None
    losses: list[float] = []
    epochs_done = start_epoch
    limit = tcfg.max_iterations
    with RunLog(out / RUNLOG_NAME, resume=resume is not None) as runlog:
        for epoch in range(start_epoch, tcfg.epochs):
            if limit and step >= limit:
                break
            order = make_rng(mcfg.seed, "shuffle", epoch).permutation(len(prepared))
            position = skip if epoch == start_epoch else 0
            epoch_losses: list[float] = []
            for idx in order[position:]:
                if limit and step >= limit:
                    break
                case = prepared[int(idx)]
                started = time.perf_counter()
                with Tape() as tape:
                    watched = {name: tape.watch(name, t) for name, t in params.items()}
                    logits = micformer_forward(case.ct, case.mri if mcfg.dual else None, watched, mcfg)
                    loss = seg_loss(logits, case.labels, tcfg.ce_weight, tcfg.dice_weight)
                    value = loss.item()
                    if not math.isfinite(value):
                        runlog.append(
                            "abort",
                            step=step,
                            epoch=epoch,
                            case_id=case.case_id,
                            loss=None,
                            reason=f"non-finite loss {value!r}",
                        )
                        raise NumericError(
                            f"non-finite loss at step {step + 1} on case {case.case_id}",
                            hint="lower lr or check the input volumes",
                        )
                    grads = tape.backward(loss)
                params, state = adam_step(params, grads, state)
                step += 1
                position += 1
                epoch_losses.append(value)
                runlog.append(
                    "iteration",
                    step=step,
                    epoch=epoch,
                    case_id=case.case_id,
                    loss=value,
                    wall_time=time.perf_counter() - started,
                )
            losses.extend(epoch_losses)
            if position < len(order):
                # stopped inside the epoch: keep its place in the shuffle for --resume
                skip = position
                break
            skip = 0
            epochs_done = epoch + 1

            val_dice: float | None = None
            if val_cases:
                agg = evaluate_params(params, val_cases, mcfg)
                val_dice = agg.mean_dice
                runlog.append(
                    "validation",
                    step=step,
                    epoch=epoch,
                    mean_dice=agg.mean_dice,
                    miou=agg.miou,
                    mean_hd95=agg.mean_hd95,
                )
                if agg.mean_dice > best:
                    best = agg.mean_dice
                    best_path = _checkpoint(
                        out / BEST_CHECKPOINT, params, state, cfg, epoch=epochs_done, step=step, best=best
                    )
                    runlog.append("checkpoint", step=step, epoch=epoch, path=BEST_CHECKPOINT)

            if epochs_done % tcfg.checkpoint_every == 0:
                name = f"epoch_{epochs_done:04d}.micf"
                _checkpoint(out / name, params, state, cfg, epoch=epochs_done, step=step, best=best)
                runlog.append("checkpoint", step=step, epoch=epoch, path=name)

            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
            logger.info(
                "epoch %d/%d step=%d loss=%.5f val_dice=%s",
                epochs_done,
                tcfg.epochs,
                step,
                mean_loss,
                "n/a" if val_dice is None else f"{val_dice:.4f}",
            )

        final = _checkpoint(
            out / FINAL_CHECKPOINT,
            params,
            state,
            cfg,
            epoch=epochs_done,
            step=step,
            best=best,
            offset=skip,
        )
        last_epoch = epochs_done if skip else max(epochs_done - 1, 0)
        runlog.append("checkpoint", step=step, epoch=last_epoch, path=FINAL_CHECKPOINT)

    return TrainResult(
        final_checkpoint=final,
        best_checkpoint=best_path,
        runlog=out / RUNLOG_NAME,
        steps=step,
        epochs=epochs_done,
        best_dice=best,
        losses=tuple(losses),
        params=params,
    )


def compare_ablation(
    cfg: AppConfig,
    dataset: CaseSource,
    out_dir: str | Path,
    candidate: str,
    seeds: Sequence[int],
) -> dict[str, Any]:
    """Train the full model and an ablated twin per seed and compare test Dice."""

    if candidate not in ABLATIONS:
        raise BadInputError(
            f"unknown ablation {candidate!r}", hint=f"choose one of {', '.join(ABLATIONS)}"
        )
    if not seeds:
        raise BadInputError("ablation comparison needs at least one seed")
    test_cases = list(dataset.test_cases)
    if not test_cases:
        raise BadInputError("ablation comparison needs a nonempty test split")
    root = Path(out_dir)
    baseline = cfg.replace_model(modalities="dual", deformable=True)

    per_seed: list[dict[str, Any]] = []
    for seed in seeds:
        runs: dict[str, float] = {}
        for tag, run_cfg in (
            ("full", baseline.replace_model(seed=seed)),
            (candidate, baseline.replace_model(seed=seed, **ABLATIONS[candidate])),
        ):
            run_cfg.validate()
            logger.info("ab-compare seed=%d run=%s", seed, tag)
            result = train(run_cfg, dataset, root / f"seed_{seed}" / tag)
            scored = evaluate_params(result.params, test_cases, run_cfg.model)
            runs[tag] = scored.mean_dice
        per_seed.append(
            {
                "seed": seed,
                "full": runs["full"],
                "candidate": runs[candidate],
                "gap": runs["full"] - runs[candidate],
            }
        )

    mean_full = float(np.mean([r["full"] for r in per_seed]))
    mean_candidate = float(np.mean([r["candidate"] for r in per_seed]))
    summary = {
        "schema": ABLATION_SCHEMA,
        "candidate": candidate,
        "seeds": list(seeds),
        "per_seed": per_seed,
        "mean_full": mean_full,
        "mean_candidate": mean_candidate,
        "gap": mean_full - mean_candidate,
    }
    logger.info(
        "ab-compare %s: full=%.4f candidate=%.4f gap=%.4f",
        candidate,
        mean_full,
        mean_candidate,
        summary["gap"],
    )
    return summary


__all__ = [
    "ABLATIONS",
    "BEST_CHECKPOINT",
    "CaseSource",
    "FINAL_CHECKPOINT",
    "PreparedCase",
    "TrainResult",
    "compare_ablation",
    "config_from_checkpoint",
    "evaluate",
    "evaluate_params",
    "evaluate_predictions",
    "predict",
    "predict_logits",
    "prepare_case",
    "train",
]
