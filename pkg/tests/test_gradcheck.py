from __future__ import annotations

import numpy as np
import pytest

from micformer.analysis.gradcheck import (
    OPS,
    TOLERANCE,
    GradCase,
    check_case,
    format_gradcheck,
    resolve_ops,
    run_gradcheck,
)
from micformer.contracts.error import BadInputError
from micformer.core import tensor as T
from micformer.core.rng import make_rng
from micformer.metrics.constants import GRADCHECK_SCHEMA


@pytest.mark.unit
def test_softmax_error_is_below_tolerance() -> None:
    report = run_gradcheck("softmax", trials=3, seed=0)
    (entry,) = report["ops"]
    assert entry["op"] == "softmax"
    assert entry["max_rel_error"] < 1e-4
    assert report["passed"] is True
    assert report["schema"] == GRADCHECK_SCHEMA


@pytest.mark.unit
def test_unknown_op_is_rejected() -> None:
    with pytest.raises(BadInputError):
        run_gradcheck("nosuch")
    with pytest.raises(BadInputError):
        run_gradcheck("softmax", trials=0)


@pytest.mark.unit
def test_resolve_ops_expands_all() -> None:
    assert resolve_ops("all") == list(OPS)
    assert resolve_ops(["gelu", "exp"]) == ["gelu", "exp"]


@pytest.mark.unit
def test_wrong_backward_is_detected() -> None:
    def broken(x: T.Tensor) -> T.Tensor:
        # forward of 2x, backward of x
        def _backward(g: np.ndarray) -> tuple[np.ndarray]:
            return (g,)

        return T.apply_op("broken", x.data * 2.0, (x,), _backward)

    case = GradCase({"x": np.ones(4)}, lambda x: broken(x["x"]))
    assert check_case(case, make_rng(0, "broken")) > 0.4


@pytest.mark.integration
def test_every_op_passes_and_report_is_deterministic() -> None:
    first = run_gradcheck("all", trials=1, seed=11)
    second = run_gradcheck("all", trials=1, seed=11)
    assert first == second
    assert [entry["op"] for entry in first["ops"]] == list(OPS)
    failing = [entry["op"] for entry in first["ops"] if not entry["passed"]]
    assert failing == []
    assert all(entry["max_rel_error"] <= TOLERANCE for entry in first["ops"])
    text = format_gradcheck(first)
    assert "all passed" in text
    assert "deformable_cross_attention" in text
