import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from asyncsam.calibrate import (
    NO_THROTTLE, CalibrationResult, ThrottleSpec, ascent_batch_size, busy_wait, calibrate,
    measure_time_per_sample, throttled,
)
from asyncsam.data import generate_gaussian_blobs
from asyncsam.objectives import MLPObjective


@pytest.fixture(scope="module")
def obj():
    return MLPObjective(generate_gaussian_blobs(0), hidden=64)


@pytest.mark.parametrize("b,ratio,expected", [(128, 5, 26), (40, 3, 14), (40, 4, 10)])
def test_known_rounding_pairs(b, ratio, expected):
    assert ascent_batch_size(b, 1.0, float(ratio)) == expected
    assert ascent_batch_size(b, 2e-6, ratio * 2e-6) == expected


def test_homogeneous_resources_keep_full_batch():
    assert ascent_batch_size(64, 3e-6, 3e-6) == 64
    assert ascent_batch_size(64, 5e-6, 1e-6) == 64  # faster "slow" lane is clamped
    assert ascent_batch_size(3, 1.0, 1e9) == 1


@pytest.mark.parametrize("args", [(0, 1.0, 1.0), (8, 0.0, 1.0), (8, 1.0, -1.0)])
def test_ascent_batch_size_rejects_bad_inputs(args):
    with pytest.raises(ValueError):
        ascent_batch_size(*args)


@given(b=st.integers(1, 4096), tf=st.floats(1e-9, 1.0), ts1=st.floats(1e-9, 1.0), ts2=st.floats(1e-9, 1.0))
def test_ascent_batch_size_monotone_and_bounded(b, tf, ts1, ts2):
    lo, hi = sorted((ts1, ts2))
    a, c = ascent_batch_size(b, tf, lo), ascent_batch_size(b, tf, hi)
    assert 1 <= c <= a <= b
    assert ascent_batch_size(b, tf * 2, hi) >= c


def test_throttle_spec():
    assert not NO_THROTTLE.active and ThrottleSpec(2).active
    with pytest.raises(ValueError):
        ThrottleSpec(0.5)


def test_busy_wait_duration():
    busy_wait(1e-4)  # loads the compiled spin kernel
    t0 = time.perf_counter()
    busy_wait(0.01)
    assert 0.01 <= time.perf_counter() - t0 < 0.05


def test_throttled_stretches_wall_time():
    def work():
        t = time.perf_counter()
        while time.perf_counter() - t < 0.002:
            pass
        return 7
    out, seconds = throttled(work, ThrottleSpec(3))
    assert out == 7 and 0.0058 <= seconds < 0.02


def test_measure_is_stable(obj):
    a = measure_time_per_sample(obj, 32, NO_THROTTLE, trials=15)
    b = measure_time_per_sample(obj, 32, NO_THROTTLE, trials=15)
    assert 0.8 <= a / b <= 1.25


def test_throttle_four_ratio(obj):
    fast = measure_time_per_sample(obj, 32, NO_THROTTLE, trials=15)
    slow = measure_time_per_sample(obj, 32, ThrottleSpec(4), trials=15)
    assert 3.0 <= slow / fast <= 5.0


@pytest.mark.parametrize("kwargs", [dict(batch_size=0), dict(batch_size=8, trials=2)])
def test_measure_rejects_bad_arguments(obj, kwargs):
    with pytest.raises(ValueError):
        measure_time_per_sample(obj, **kwargs)


def test_calibrate_b128_throttle5(obj):
    result = calibrate(obj, 128, ThrottleSpec(5))
    assert result.b_prime == 26
    assert 4.5 <= result.ratio <= 5.5
    assert result.t_fast > 0 and result.t_slow > result.t_fast


def test_calibration_csv_row():
    r = CalibrationResult(1e-6, 5e-6, 5.0, 26, 128)
    assert CalibrationResult.CSV_HEADER == "t_fast,t_slow,ratio,b_prime"
    assert r.csv_row() == "1e-06,5e-06,5,26"
