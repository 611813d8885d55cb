"""Subcommand registration helpers for the micformer CLI."""

from __future__ import annotations

from .base import CLIContext, register_subcommands

__all__ = ["CLIContext", "register_subcommands"]
