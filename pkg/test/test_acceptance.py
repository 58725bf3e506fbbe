"""
Acceptance checks from test/evaluate.py as pytest cases. The failure-mode
and determinism checks always run; the five-seed trend checks take about a
quarter of an hour and run only with SEMFUSION_ACCEPTANCE=1.

Each case saves its results to dump/acceptance_<name>.json.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from pathlib import Path

import orjson
import pytest

from semfusion.pipeline import TrainingConfig

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
from evaluate import check_determinism, check_failure_modes, check_trends  # noqa: E402

DUMP = Path(__file__).resolve().parent.parent / "dump"
FULL_RUN = bool(os.environ.get("SEMFUSION_ACCEPTANCE"))


def _save(name: str, results: dict) -> None:
    DUMP.mkdir(parents=True, exist_ok=True)
    (DUMP / f"acceptance_{name}.json").write_bytes(
        orjson.dumps(results, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))


def test_failure_modes_reproduce():
    results = check_failure_modes(TrainingConfig(steps=300))
    _save("failure_modes", results)
    for row in results["dilation"]:
        assert row["holds"], row
        assert row["fp_sem2d"] > row["fp_sem3d"]
    confusion = results["confusion"]
    assert confusion["holds"], confusion
    assert confusion["sem3d"] > confusion["sem2d"]


def test_reruns_are_bit_identical():
    results = check_determinism(TrainingConfig(steps=50))
    _save("determinism", results)
    assert results["checkpoints_identical"] and results["reports_identical"]


@pytest.mark.skipif(not FULL_RUN, reason="set SEMFUSION_ACCEPTANCE=1 for the five-seed trend run")
def test_strategy_and_representation_trends():
    results = check_trends(TrainingConfig(steps=600), seeds=5)
    _save("trends", results)
    assert results["strategy_holds"], results["strategy_margin_seeds"]
    assert results["representation_holds"], results["representation_seeds"]


if __name__ == "__main__":
    print("=" * 60)
    print("ACCEPTANCE TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            if name == "test_strategy_and_representation_trends" and not FULL_RUN:
                print(f"SKIP {name}")
                continue
            test()
            print(f"PASS {name}")
