"""Segmentation metrics and shared schema identifiers."""

from __future__ import annotations

from .constants import (
    ABLATION_SCHEMA,
    BENCH_SCHEMA,
    GRADCHECK_SCHEMA,
    REPORT_SCHEMA,
    RUNLOG_KINDS,
    RUNLOG_SCHEMA,
    SCHEMA_VERSION,
)
from .core import (
    AggregateReport,
    MetricsReport,
    aggregate_reports,
    boundary,
    dice,
    hd95,
    iou,
    miou,
    nearest_rank,
    report,
)

__all__ = [
    "ABLATION_SCHEMA",
    "AggregateReport",
    "BENCH_SCHEMA",
    "GRADCHECK_SCHEMA",
    "MetricsReport",
    "REPORT_SCHEMA",
    "RUNLOG_KINDS",
    "RUNLOG_SCHEMA",
    "SCHEMA_VERSION",
    "aggregate_reports",
    "boundary",
    "dice",
    "hd95",
    "iou",
    "miou",
    "nearest_rank",
    "report",
]
