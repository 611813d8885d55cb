"""Verification and timing harnesses."""

from .bench import format_bench, run_bench
from .gradcheck import OPS, check_case, format_gradcheck, resolve_ops, run_gradcheck

__all__ = ["OPS", "check_case", "format_bench", "format_gradcheck", "resolve_ops", "run_bench", "run_gradcheck"]
