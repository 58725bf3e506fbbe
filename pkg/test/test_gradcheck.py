"""
Gradient checking: the checker itself, then the named suites
(MLP, conv stack, full AAF forward, full DFF forward).
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from semfusion.gradcheck import GRADCHECK_TOLERANCE, check_gradients, compare_gradients, run_suite
from semfusion.tensor import Tensor, _accumulate


def _wrong_square(x: Tensor) -> Tensor:
    """x**2 whose backward forgets the factor 2."""
    return Tensor._result(x.data ** 2, (x,), lambda g: _accumulate(x, g * x.data), "bad_square")


def test_check_gradients_accepts_correct_backward():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert check_gradients(lambda t: (t ** 2.0).sum(), x) <= 1e-8


def test_check_gradients_flags_wrong_backward():
    x = Tensor(np.random.default_rng(1).uniform(1.0, 2.0, size=5))
    assert check_gradients(lambda t: _wrong_square(t).sum(), x) > 0.1


def test_kinks_are_skipped_not_failed():
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)
    worst, checked, skipped = compare_gradients(lambda: x.relu().sum(), [x])
    assert skipped == 1 and checked == 2 and worst <= 1e-8


def test_max_coords_subsamples():
    x = Tensor(np.ones(50), requires_grad=True)
    _, checked, _ = compare_gradients(lambda: (x * 3.0).sum(), [x], max_coords=7)
    assert checked == 7


def test_all_suites_pass():
    results = run_suite("all")
    assert [r.name for r in results] == ["mlp", "conv", "aaf", "dff"]
    for result in results:
        assert result.checked > 0, result.name
        assert result.max_rel_error <= GRADCHECK_TOLERANCE, (result.name, result.max_rel_error)
        assert result.passed
        assert result.to_dict()["passed"] is True


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("transformer")


if __name__ == "__main__":
    print("=" * 60)
    print("GRADIENT CHECK TESTS")
    print("=" * 60)
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            test()
            print(f"PASS {name}")
