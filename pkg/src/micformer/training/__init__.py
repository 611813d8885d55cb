"""Loss, Adam, the training loop, evaluation and ablation comparison."""

from .loop import (
    ABLATIONS,
    BEST_CHECKPOINT,
    FINAL_CHECKPOINT,
    PreparedCase,
    TrainResult,
    compare_ablation,
    config_from_checkpoint,
    evaluate,
    evaluate_params,
    evaluate_predictions,
    predict,
    predict_logits,
    prepare_case,
    train,
)
from .loss import one_hot, seg_loss
from .optim import OptimState, adam_step, init_optim
from .runlog import RUNLOG_NAME, RunLog, read_runlog, strip_wall_time

__all__ = [
    "ABLATIONS",
    "BEST_CHECKPOINT",
    "FINAL_CHECKPOINT",
    "OptimState",
    "PreparedCase",
    "RUNLOG_NAME",
    "RunLog",
    "TrainResult",
    "adam_step",
    "compare_ablation",
    "config_from_checkpoint",
    "evaluate",
    "evaluate_params",
    "evaluate_predictions",
    "init_optim",
    "one_hot",
    "predict",
    "predict_logits",
    "prepare_case",
    "read_runlog",
    "seg_loss",
    "strip_wall_time",
    "train",
]
