"""CLI command registration and handlers for micformer."""

from __future__ import annotations

import argparse
import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from micformer.config import AppConfig
from micformer.contracts.error import BadInputError, Exit
from micformer.training.loop import ABLATIONS

EVAL_REPORT_NAME = "eval_report.json"


@dataclass(frozen=True)
class CLIContext:
    """Runtime hooks supplied by the top-level CLI entrypoint."""

    emit_success: Callable[..., None]
    load_config: Callable[[str | None], AppConfig]
    run_synth: Callable[..., dict[str, Any]]
    run_train: Callable[..., dict[str, Any]]
    run_eval: Callable[..., Any]
    run_infer: Callable[..., dict[str, Any]]
    run_gradcheck: Callable[..., dict[str, Any]]
    format_gradcheck: Callable[[dict[str, Any]], str]
    run_bench: Callable[..., dict[str, Any]]
    format_bench: Callable[[dict[str, Any]], str]
    run_ab_compare: Callable[..., dict[str, Any]]
    write_json: Callable[[str | Path, dict[str, Any]], Path]
    logger: logging.Logger
    json_enabled: Callable[[], bool]
    guard: Callable[[Callable[[argparse.Namespace], int]], Callable[[argparse.Namespace], int]]


def register_subcommands(
    subparsers: argparse._SubParsersAction[argparse.ArgumentParser],
    ctx: CLIContext,
) -> dict[str, Callable[[argparse.Namespace], int]]:
    """Define CLI subcommands and return their handlers."""

    handlers: dict[str, Callable[[argparse.Namespace], int]] = {}

    def _register(
        name: str,
        help_text: str | None,
        configure: Callable[[argparse.ArgumentParser], Callable[[argparse.Namespace], int]],
    ) -> None:
        parser = subparsers.add_parser(name, help=help_text)
        handler = configure(parser)
        handlers[name] = ctx.guard(handler)

    _register(
        "synth",
        "Generate synthetic CT/MRI/label cases and a manifest.",
        lambda parser: _configure_synth(parser, ctx),
    )
    _register(
        "train",
        "Train on a dataset directory (RunLog, checkpoints, resume).",
        lambda parser: _configure_train(parser, ctx),
    )
    _register(
        "eval",
        "Score a checkpoint or saved predictions (Dice, MIoU, HD95).",
        lambda parser: _configure_eval(parser, ctx),
    )
    _register(
        "infer",
        "Segment one CT/MRI pair into a label volume.",
        lambda parser: _configure_infer(parser, ctx),
    )
    _register(
        "gradcheck",
        "Finite-difference gradient checks in float64.",
        lambda parser: _configure_gradcheck(parser, ctx),
    )
    _register(
        "bench",
        "Time forward/backward and the cross-attention kernels.",
        lambda parser: _configure_bench(parser, ctx),
    )
    _register(
        "ab-compare",
        "Train the full model and an ablation over several seeds and compare test Dice.",
        lambda parser: _configure_ab_compare(parser, ctx),
    )

    return handlers


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    # SUPPRESS keeps the global --config value when the subcommand flag is absent
    parser.add_argument(
        "--config", default=argparse.SUPPRESS, help="Config file (same as the global --config)"
    )


def _positive(value: int | None, flag: str) -> None:
    if value is not None and value < 1:
        raise BadInputError(f"{flag} must be >= 1, got {value}")


def _configure_synth(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--out", required=True, help="Directory for the .mvol files and manifest")
    parser.add_argument("--cases", type=int, default=None, help="Number of cases (config: cases)")
    parser.add_argument("--edge", type=int, default=None, help="Cube edge in voxels, >= 32")
    parser.add_argument("--classes", type=int, default=None, help="Label classes incl. background")
    parser.add_argument("--seed", type=int, default=None, help="Generator seed (config: seed)")
    parser.add_argument("--train-fraction", type=float, default=None, help="Share of train cases")
    parser.add_argument(
        "--misalignment", type=float, default=None, help="Peak CT/MRI displacement in voxels"
    )
    _add_config_flag(parser)

    def handler(args: argparse.Namespace) -> int:
        _positive(args.cases, "--cases")
        cfg = ctx.load_config(args.config)
        result = ctx.run_synth(
            args.out,
            cfg,
            cases=args.cases,
            edge=args.edge,
            classes=args.classes,
            seed=args.seed,
            train_fraction=args.train_fraction,
            misalignment=args.misalignment,
        )
        text = (
            f"wrote {result['cases']} cases to {result['out']} "
            f"({len(result['train'])} train / {len(result['test'])} test)"
        )
        ctx.emit_success("synth", text=text, data=result)
        return int(Exit.OK)

    return handler


def _configure_train(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--data", required=True, help="Dataset directory written by synth")
    parser.add_argument("--out", required=True, help="Run directory (checkpoints + runlog.ndjson)")
    parser.add_argument("--resume", default=None, help="Checkpoint to continue from")
    parser.add_argument("--epochs", type=int, default=None, help="Total epochs (config: epochs)")
    parser.add_argument("--lr", type=float, default=None, help="Adam learning rate")
    parser.add_argument("--seed", type=int, default=None, help="Init and shuffle seed")
    parser.add_argument(
        "--max-iterations", type=int, default=None, help="Stop after this many steps (0 = no cap)"
    )
    _add_config_flag(parser)

    def handler(args: argparse.Namespace) -> int:
        _positive(args.epochs, "--epochs")
        cfg = ctx.load_config(args.config)
        overrides = {
            "epochs": args.epochs,
            "lr": args.lr,
            "seed": args.seed,
            "max_iterations": args.max_iterations,
        }
        result = ctx.run_train(args.data, args.out, cfg, resume=args.resume, overrides=overrides)
        text = (
            f"trained {result['steps']} steps over {result['epochs']} epochs; "
            f"final checkpoint {result['final_checkpoint']}"
        )
        ctx.emit_success("train", text=text, data=result)
        return int(Exit.OK)

    return handler


def _configure_eval(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--data", required=True, help="Dataset directory with ground truth")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", help="Checkpoint to run over the split")
    source.add_argument(
        "--predictions", help="Directory of <case>_pred.mvol label maps to score directly"
    )
    parser.add_argument(
        "--split", default="test", choices=["train", "test", "all"], help="Cases to score"
    )
    parser.add_argument(
        "--out", default=None, help=f"JSON report path (default: <data>/{EVAL_REPORT_NAME})"
    )

    def handler(args: argparse.Namespace) -> int:
        result = ctx.run_eval(
            args.data,
            checkpoint=args.checkpoint,
            predictions=args.predictions,
            split=args.split,
        )
        doc = result.to_dict()
        target = args.out or Path(args.data) / EVAL_REPORT_NAME
        doc["report_json"] = ctx.write_json(target, result.to_dict()).as_posix()
        ctx.emit_success("eval", text=result.to_text().rstrip("\n"), data=doc)
        return int(Exit.OK)

    return handler


def _configure_infer(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--checkpoint", required=True, help="Trained checkpoint")
    parser.add_argument("--ct", required=True, help="CT intensity volume (.mvol)")
    parser.add_argument("--mri", default=None, help="MRI intensity volume (.mvol); dual models only")
    parser.add_argument("--out", required=True, help="Output label map (.mvol)")

    def handler(args: argparse.Namespace) -> int:
        result = ctx.run_infer(args.ct, args.mri, args.checkpoint, args.out)
        ctx.emit_success("infer", text=f"wrote {result['out']}", data=result)
        return int(Exit.OK)

    return handler


def _configure_gradcheck(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--op", default="all", help="Op name or 'all'")
    parser.add_argument("--trials", type=int, default=5, help="Random draws per op")
    parser.add_argument("--seed", type=int, default=0, help="Seed for the draws")
    parser.add_argument("--out", default=None, help="Optional JSON report path")

    def handler(args: argparse.Namespace) -> int:
        _positive(args.trials, "--trials")
        report = ctx.run_gradcheck(args.op, trials=args.trials, seed=args.seed)
        if args.out:
            ctx.write_json(args.out, report)
        ctx.emit_success("gradcheck", text=ctx.format_gradcheck(report), data=report)
        return int(Exit.OK) if report["passed"] else int(Exit.NUMERIC)

    return handler


def _configure_bench(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--repeats", type=int, default=3, help="Timed runs per kernel")
    parser.add_argument(
        "--edge", type=int, default=None, help="Input cube edge (default: smallest accepted)"
    )
    parser.add_argument("--out", default=None, help="Optional JSON report path")
    _add_config_flag(parser)

    def handler(args: argparse.Namespace) -> int:
        _positive(args.repeats, "--repeats")
        cfg = ctx.load_config(args.config)
        report = ctx.run_bench(cfg, repeats=args.repeats, edge=args.edge)
        if args.out:
            ctx.write_json(args.out, report)
        ctx.emit_success("bench", text=ctx.format_bench(report), data=report)
        return int(Exit.OK)

    return handler


def _configure_ab_compare(
    parser: argparse.ArgumentParser, ctx: CLIContext
) -> Callable[[argparse.Namespace], int]:
    parser.add_argument("--data", required=True, help="Dataset directory written by synth")
    parser.add_argument("--out", default="results/ab", help="Directory for the per-seed runs")
    parser.add_argument(
        "--candidate", required=True, choices=sorted(ABLATIONS), help="Ablation to compare against"
    )
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="Model seeds")
    parser.add_argument("--json-out", default=None, help="Override path for the comparison JSON")
    _add_config_flag(parser)

    def handler(args: argparse.Namespace) -> int:
        cfg = ctx.load_config(args.config)
        result = ctx.run_ab_compare(
            args.data,
            args.out,
            cfg,
            candidate=args.candidate,
            seeds=args.seeds,
            json_out=args.json_out,
        )
        text = (
            f"{args.candidate}: full={result['mean_full']:.4f} "
            f"candidate={result['mean_candidate']:.4f} gap={result['gap']:.4f}"
        )
        ctx.emit_success("ab-compare", text=text, data=result)
        return int(Exit.OK)

    return handler


__all__ = ["CLIContext", "EVAL_REPORT_NAME", "Exit", "register_subcommands"]
