import numpy as np
import pytest

from pipelines.errors import ParameterError
from pipelines.validate import Validator, is_decreasing


def test_is_decreasing():
    assert is_decreasing([3.0, 2.0, 1.0])
    assert not is_decreasing([3.0, 3.0, 1.0])
    assert is_decreasing([1.0])


def test_mean_interval():
    out = Validator.mean_interval(np.array([1.0, 2.0, 3.0, 4.0]))
    assert out["mean"] == 2.5
    assert out["ci_low"] < 2.5 < out["ci_high"]


def test_parameters_are_checked(small):
    n, L = small
    with pytest.raises(ParameterError):
        Validator(n, L, [0.0], 10, 1)
    with pytest.raises(ParameterError):
        Validator(n, L, [3.0], 10, 1, valley_runs=-1)


def test_small_run_report(small, kernel):
    n, L = small
    report = Validator(n, L, [3.0], excursions=3, seed=2, budget=2_000_000, kernel=kernel).run()
    assert report["Z"] == kernel.Z
    (row,) = report["betas"]
    assert row["excursions"] == 3
    assert 0.0 <= row["tv_distance"] <= 1.0
    assert len(row["kernel"]) == L * L - 1
    assert sum(k["exact"] for k in row["kernel"]) == pytest.approx(1.0)
    assert sum(k["empirical"] for k in row["kernel"]) == pytest.approx(1.0)
    assert "ks_statistic" not in row
    assert row["depth"]["exact"] == pytest.approx(1.0 / kernel.Z)
    assert set(report["trends"]) == {"tv_decreasing", "delta2_decreasing", "outside_decreasing"}


@pytest.mark.slow
def test_monte_carlo_matches_the_kernel():
    report = Validator(4, 12, [5.0, 6.0, 7.0], excursions=2000, seed=1, workers=4).run()
    last = report["betas"][-1]
    assert last["tv_distance"] <= 0.05
    assert last["ks_statistic"] <= last["ks_critical"]
    assert 0.8 <= last["depth"]["ratio"] <= 1.25
    assert report["trends"]["tv_decreasing"]
    assert report["trends"]["delta2_decreasing"]
    assert report["trends"]["outside_decreasing"]
