import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwre.harness import fit_rate
from rwre.rates import RateSeries


def test_exact_power_law():
    s = np.array([8, 16, 32, 64.0])
    fit = fit_rate(s, s ** -1.0)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.band < 1e-10


def test_constant_values():
    assert fit_rate([1, 2, 4], [3.0, 3.0, 3.0]).slope == pytest.approx(0.0, abs=1e-12)


def test_log_corrected_power():
    # d log(s^-1 log s) / d log s = -1 + 1/log s lies in (-0.76, -0.51) on [8, 64], so the fitted
    # slope must fall in that window; numpy's polyfit serves as the independent oracle
    s = np.array([8, 16, 32, 64.0])
    slope = fit_rate(s, np.log(s) / s).slope
    assert -0.76 < slope < -0.51
    assert slope == pytest.approx(np.polyfit(np.log(s), np.log(np.log(s) / s), 1)[0], abs=1e-12)
    assert slope == pytest.approx(-0.6678, abs=1e-4)


def test_rejections():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, 0, 2])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 3], [1, -1, 2])


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.01, 100))
def test_recovers_any_exponent(p, c):
    s = np.array([2.0, 5.0, 11.0, 30.0])
    fit = fit_rate(s, c * s ** p)
    assert fit.slope == pytest.approx(p, abs=1e-9)
    assert fit.contains(p - 1e-6, p + 1e-6)


def test_series_medians_and_rows():
    ser = RateSeries("x", [1, 2, 4], [[1.0, 3.0, 2.0], [0.5, 1.5, 1.0], [0.25, 0.75, 0.5]])
    assert ser.values == [2.0, 1.0, 0.5]
    assert ser.slope == pytest.approx(-1.0)
    assert len(ser.rows()) == 9
    assert ser.summary()["fit"]["slope"] == ser.slope
