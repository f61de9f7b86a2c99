"""Full 100-seed sweeps checked against reference values; run with `pytest -m slow`."""
from fractions import Fraction

import pytest

from models.experiment import SweepSpec
from models.process import Variant
from models.synthetic import ErrorMode, ErrorModel
from services.experiment import run_error_sweep

pytestmark = pytest.mark.slow

NOISY = ErrorModel(beta=1, delta=1, gamma=Fraction(85, 100), mu=Fraction(85, 100))
WORST = ErrorModel(beta=3, delta=3, gamma=Fraction(55, 100), mu=Fraction(55, 100), mode=ErrorMode.WORST_CASE)


def _rows(frame, setting):
    return frame[frame["setting"] == setting.label].set_index("variant")


@pytest.fixture(scope="module")
def exact_sweep():
    return run_error_sweep(SweepSpec(settings=(ErrorModel(),)))


def test_exact_violation_counts(exact_sweep):
    violations = _rows(exact_sweep.table, ErrorModel())["violations"]
    assert violations["fast"] == 0
    assert violations["complex"] == 0
    assert abs(violations["uniform"] - 31) <= 12


@pytest.mark.parametrize("variant,mean,p10", [("uniform", 4.56, 1.33), ("fast", 4.49, 1.43),
                                              ("complex", 4.49, 1.51)])
def test_exact_utilities(exact_sweep, variant, mean, p10):
    row = _rows(exact_sweep.table, ErrorModel()).loc[variant]
    assert row["mean_utility"] == pytest.approx(mean, abs=0.15)
    assert row["p10_utility"] == pytest.approx(p10, abs=0.20)


def test_noisy_curve_at_zero_slack():
    result = run_error_sweep(SweepSpec(settings=(NOISY,), slacks=(0, 3)))
    curves = result.curves[result.curves["b"] == 0]
    at_zero = _rows(curves, NOISY)["mean_max_d"]
    assert at_zero["uniform"] == pytest.approx(3.91, abs=0.30)
    assert at_zero["fast"] == pytest.approx(1.01, abs=0.30)
    assert at_zero["complex"] == pytest.approx(0.93, abs=0.30)


def test_worst_case_widens_the_fast_complex_gap():
    result = run_error_sweep(SweepSpec(settings=(WORST,), variants=(Variant.FAST, Variant.COMPLEX),
                                       slacks=(0, 9)))
    at_zero = _rows(result.curves[result.curves["b"] == 0], WORST)["mean_max_d"]
    assert at_zero["fast"] == pytest.approx(5.45, abs=0.6)
    assert at_zero["complex"] == pytest.approx(1.72, abs=0.4)
