"""Shared schema identifiers for reports, run logs and manifests."""

from __future__ import annotations

SCHEMA_VERSION = "v1"

REPORT_SCHEMA = f"micformer.report.{SCHEMA_VERSION}"
RUNLOG_SCHEMA = f"micformer.runlog.{SCHEMA_VERSION}"
BENCH_SCHEMA = f"micformer.bench.{SCHEMA_VERSION}"
GRADCHECK_SCHEMA = f"micformer.gradcheck.{SCHEMA_VERSION}"
ABLATION_SCHEMA = f"micformer.ablation.{SCHEMA_VERSION}"

RUNLOG_KINDS = ("iteration", "validation", "checkpoint", "abort")
HD95_PERCENTILE = 0.95

__all__ = [
    "ABLATION_SCHEMA",
    "BENCH_SCHEMA",
    "GRADCHECK_SCHEMA",
    "HD95_PERCENTILE",
    "REPORT_SCHEMA",
    "RUNLOG_KINDS",
    "RUNLOG_SCHEMA",
    "SCHEMA_VERSION",
]
