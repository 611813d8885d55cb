"""Typed configuration loader for the micformer toolkit.

Config files are flat ``key = value`` documents (TOML syntax, no tables). Every key
belongs to exactly one of :class:`ModelConfig`, :class:`TrainConfig` or
:class:`DataConfig`; unknown keys are rejected so a run is fully described by its file.
"""

from __future__ import annotations

import json
import logging
import tomllib
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .contracts.error import BadInputError, ShapeError

logger = logging.getLogger("micformer")

VALUE_SOURCES = ("b", "a")
MODALITY_MODES = ("dual", "ct_only")
DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class ModelConfig:
    patch: int = 4
    channels: int = 24
    stages: int = 3
    blocks_per_stage: int = 1
    decoder_blocks: int = 1
    window: int = 4
    head_dim: int = 8
    num_classes: int = 8
    value_source: str = "b"
    deformable: bool = True
    modalities: str = "dual"
    init_std: float = 0.02
    dtype: str = "float32"
    seed: int = 0

    def validate(self) -> None:
        for name in ("patch", "channels", "stages", "window", "head_dim"):
            if getattr(self, name) < 1:
                raise BadInputError(f"model.{name} must be >= 1")
        for name in ("blocks_per_stage", "decoder_blocks"):
            if getattr(self, name) < 0:
                raise BadInputError(f"model.{name} must be >= 0")
        if self.num_classes < 2:
            raise BadInputError("model.num_classes must be >= 2")
        if self.channels % self.head_dim:
            raise BadInputError(
                f"model.channels ({self.channels}) must be divisible by head_dim ({self.head_dim})",
                hint="heads = channels / head_dim at every stage",
            )
        if self.value_source not in VALUE_SOURCES:
            raise BadInputError("model.value_source must be 'b' or 'a'")
        if self.modalities not in MODALITY_MODES:
            raise BadInputError("model.modalities must be 'dual' or 'ct_only'")
        if self.dtype not in DTYPES:
            raise BadInputError("model.dtype must be 'float32' or 'float64'")
        if self.init_std <= 0:
            raise BadInputError("model.init_std must be > 0")
        if not 0 <= self.seed < 2**64:
            raise BadInputError("model.seed must fit in 64 bits")

    def channels_at(self, stage: int) -> int:
        return self.channels * (2**stage)

    def heads_at(self, stage: int) -> int:
        return self.channels_at(stage) // self.head_dim

    @property
    def multiple(self) -> int:
        """Volume extents must be divisible by this so every stage lattice holds whole windows."""

        return self.patch * (2 ** (self.stages - 1)) * self.window

    @property
    def dual(self) -> bool:
        return self.modalities == "dual"

    def lattice_extents(self, extents: tuple[int, int, int], stage: int) -> tuple[int, int, int]:
        step = self.patch * (2**stage)
        return (extents[0] // step, extents[1] // step, extents[2] // step)

    def check_extents(self, extents: tuple[int, ...]) -> None:
        if len(extents) != 3 or any(e % self.multiple for e in extents):
            raise ShapeError(
                f"volume extents {tuple(extents)} are not divisible by {self.multiple}",
                hint="pad inputs with pad_to_divisible(volume, cfg.model.multiple)",
            )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    checkpoint_every: int = 10
    ce_weight: float = 1.0
    dice_weight: float = 1.0
    max_iterations: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise BadInputError("train.lr must be > 0")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise BadInputError(f"train.{name} must be within [0, 1)")
        if self.eps <= 0:
            raise BadInputError("train.eps must be > 0")
        if self.epochs < 1:
            raise BadInputError("train.epochs must be >= 1")
        if self.checkpoint_every < 1:
            raise BadInputError("train.checkpoint_every must be >= 1")
        if self.ce_weight < 0 or self.dice_weight < 0:
            raise BadInputError("train.ce_weight and train.dice_weight must be >= 0")
        if self.max_iterations < 0:
            raise BadInputError("train.max_iterations must be >= 0 (0 = unlimited)")


@dataclass(frozen=True)
class DataConfig:
    edge: int = 64
    cases: int = 20
    train_fraction: float = 0.8
    misalignment: float = 2.0

    def validate(self) -> None:
        if self.edge < 32:
            raise BadInputError(f"data.edge must be >= 32, got {self.edge}")
        if self.cases < 1:
            raise BadInputError("data.cases must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise BadInputError("data.train_fraction must be within (0, 1)")
        if self.misalignment < 0:
            raise BadInputError("data.misalignment must be >= 0")


_SECTIONS: tuple[tuple[str, type[Any]], ...] = (
    ("model", ModelConfig),
    ("train", TrainConfig),
    ("data", DataConfig),
)
_KEY_SECTION: dict[str, str] = {
    f.name: section for section, cls in _SECTIONS for f in fields(cls)
}


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise BadInputError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise BadInputError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, int | float):
            raise BadInputError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise BadInputError(f"{key} must be a string")
    return value


@dataclass(frozen=True)
class AppConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @classmethod
    def load(cls, path: Path | None) -> AppConfig:
        if path is None:
            cfg = cls()
        else:
            try:
                data = tomllib.loads(path.read_text(encoding="utf-8"))
            except FileNotFoundError as exc:
                raise BadInputError(f"Config file not found: {path}") from exc
            except tomllib.TOMLDecodeError as exc:
                raise BadInputError(f"Invalid config syntax: {exc}") from exc
            cfg = cls.from_flat(data)
            logger.info("Loaded config from %s", path)
        cfg.validate()
        return cfg

    @classmethod
    def from_flat(cls, data: Mapping[str, Any]) -> AppConfig:
        sections: dict[str, dict[str, Any]] = {name: {} for name, _ in _SECTIONS}
        defaults = cls()
        for key, value in data.items():
            if isinstance(value, dict):
                raise BadInputError(
                    f"tables are not supported (found [{key}])",
                    hint="config files are flat 'key = value' lines",
                )
            section = _KEY_SECTION.get(key)
            if section is None:
                raise BadInputError(
                    f"unknown config key {key!r}",
                    hint=f"known keys: {', '.join(sorted(_KEY_SECTION))}",
                )
            default = getattr(getattr(defaults, section), key)
            sections[section][key] = _coerce(key, value, default)
        return cls(
            model=ModelConfig(**sections["model"]),
            train=TrainConfig(**sections["train"]),
            data=DataConfig(**sections["data"]),
        )

    def to_flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for section, _ in _SECTIONS:
            part = getattr(self, section)
            for f in fields(part):
                out[f.name] = getattr(part, f.name)
        return out

    def with_overrides(self, **overrides: Any) -> AppConfig:
        """Copy with flat-key overrides applied (``None`` values are ignored)."""

        merged = self.to_flat()
        merged.update({k: v for k, v in overrides.items() if v is not None})
        cfg = AppConfig.from_flat(merged)
        cfg.validate()
        return cfg

    def replace_model(self, **changes: Any) -> AppConfig:
        return replace(self, model=replace(self.model, **changes))

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        self.data.validate()


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    return repr(value)


def format_config(cfg: AppConfig) -> str:
    """Render ``cfg`` as the flat text document accepted by :meth:`AppConfig.load`."""

    lines: list[str] = []
    for section, _ in _SECTIONS:
        lines.append(f"# {section}")
        for f in fields(getattr(cfg, section)):
            lines.append(f"{f.name} = {_format_value(getattr(getattr(cfg, section), f.name))}")
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG = AppConfig()


def load_app_config(path: str | None) -> AppConfig:
    config_path = Path(path) if path else None
    return AppConfig.load(config_path)


__all__ = [
    "AppConfig",
    "DataConfig",
    "DEFAULT_CONFIG",
    "ModelConfig",
    "TrainConfig",
    "format_config",
    "load_app_config",
]
