import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))
if SRC.exists():
    sys.path.insert(0, str(SRC))

# Register shared Hypothesis profiles for deterministic CI runs and fast local loops.
from tests.util import hypothesis_profiles  # noqa: E402,F401  pylint: disable=unused-import

from micformer.config import AppConfig, DataConfig, ModelConfig, TrainConfig  # noqa: E402

SLOW_MODE = os.getenv("MICFORMER_SLOW_TESTS") == "1"

# Small enough for a 8^3 forward pass in well under a second.
TINY_MODEL = ModelConfig(
    patch=2,
    channels=8,
    stages=2,
    window=2,
    head_dim=4,
    num_classes=3,
    dtype="float64",
)

# Runs real optimisation steps on 32^3 synthetic cases (lattice 8^3 after the stem).
TRAIN_MODEL = ModelConfig(
    patch=4,
    channels=8,
    stages=2,
    window=2,
    head_dim=4,
    num_classes=3,
)

SMOKE_TOML = """\
patch = 4
channels = 8
stages = 2
window = 2
head_dim = 4
num_classes = 3
seed = 0
lr = 0.002
epochs = 1
checkpoint_every = 1
edge = 32
cases = 3
train_fraction = 0.5
"""


@pytest.fixture(name="tiny_model")
def _tiny_model_fixture() -> ModelConfig:
    return TINY_MODEL


@pytest.fixture(name="train_cfg")
def _train_cfg_fixture() -> AppConfig:
    return AppConfig(
        model=TRAIN_MODEL,
        train=TrainConfig(lr=2e-3, epochs=2, checkpoint_every=1),
        data=DataConfig(edge=32, cases=3, train_fraction=0.5),
    )


@pytest.fixture(name="smoke_config")
def _smoke_config_fixture(tmp_path: Path) -> Path:
    path = tmp_path / "smoke.toml"
    path.write_text(SMOKE_TOML, encoding="utf-8")
    return path


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    del config
    if SLOW_MODE:
        return

    skip_slow = pytest.mark.skip(reason="acceptance run; set MICFORMER_SLOW_TESTS=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
