import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powergov.errors import ConfigInvalid
from powergov.feature import (
    OBS_DIM,
    FeatureConfig,
    LoadClass,
    Observation,
    RailStats,
    build_observation,
    classify_load,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
nonneg = st.floats(0.0, 1e6)


def test_zero_variance_is_stable():
    assert classify_load(8.0, 0.0, 0.0) is LoadClass.STABLE


@pytest.mark.parametrize("slope,expected", [(1.0, LoadClass.HIGH), (-1.0, LoadClass.LOW), (0.0, LoadClass.LOW)])
def test_trend_direction(slope, expected):
    cfg = FeatureConfig(cv_threshold=0.1)
    # cv = sqrt(4) / 8 = 0.25, not smooth
    assert classify_load(8.0, 4.0, slope, cfg) is expected


def test_stable_threshold_is_strict():
    cfg = FeatureConfig(cv_threshold=0.25)
    assert classify_load(8.0, 4.0, 1.0, cfg) is LoadClass.HIGH
    assert classify_load(8.0, 3.99, 1.0, cfg) is LoadClass.STABLE


def test_zero_mean_uses_epsilon_floor():
    # any variance on a zero-mean window is far from smooth
    assert classify_load(0.0, 1e-6, 1.0) is LoadClass.HIGH
    assert classify_load(0.0, 0.0, 1.0) is LoadClass.STABLE


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 1e3), nonneg, finite, st.floats(1e-3, 1e3))
def test_classification_scale_invariant(mean, var, slope, k):
    a = classify_load(mean, var, slope)
    b = classify_load(mean * k, var * k * k, slope * k)
    cv = math.sqrt(var) / mean
    # skip knife-edge cases where rescaling rounds across the threshold
    if abs(cv - 0.05) > 1e-9 and (slope == 0 or abs(slope * k) > 0):
        assert a is b


def test_idle_observation_is_zero():
    obs = build_observation(RailStats(), RailStats(), 0, 0, 3, 3, 0.0, 1.0)
    assert np.all(obs.as_array() == 0.0)


def test_normalization_endpoints():
    cfg = FeatureConfig()
    rail = RailStats(mean=cfg.p_max, variance=0.0, slope=cfg.slope_ref)
    obs = build_observation(rail, rail, 2, 2, 3, 3, backlog=4.0, backlog_ref=4.0, config=cfg)
    assert obs.cpu_power_norm == 1.0 and obs.gpu_power_norm == 1.0
    assert obs.cpu_trend == 1.0 and obs.gpu_trend == 1.0
    assert obs.cpu_level_norm == 1.0 and obs.gpu_level_norm == 1.0
    assert obs.backlog_norm == 1.0


def test_power_clamped_above_budget():
    obs = build_observation(RailStats(30.0, 0.0, 0.0), RailStats(), 0, 0, 3, 3, 0.0, 1.0)
    assert obs.cpu_power_norm == 1.0


def test_smoothness_is_cv_over_reference():
    # cv = 0.5 / 5 = 0.1, cv_ref 0.2 -> 0.5
    obs = build_observation(RailStats(5.0, 0.25, 0.0), RailStats(), 0, 0, 3, 3, 0.0, 1.0)
    assert obs.cpu_smooth == pytest.approx(0.5)


def test_single_level_device_normalizes_to_zero():
    obs = build_observation(RailStats(), RailStats(), 0, 0, 1, 1, 0.0, 1.0)
    assert obs.cpu_level_norm == 0.0


@settings(max_examples=300, deadline=None)
@given(
    st.tuples(finite, nonneg, finite),
    st.tuples(finite, nonneg, finite),
    st.integers(1, 6),
    st.integers(1, 6),
    st.floats(0, 1),
    st.floats(0, 1),
    nonneg,
    st.floats(1e-6, 1e6),
)
def test_observation_always_in_range(cpu, gpu, lc, lg, fc, fg, backlog, ref):
    obs = build_observation(RailStats(*cpu), RailStats(*gpu), int(fc * (lc - 1)), int(fg * (lg - 1)), lc, lg, backlog, ref)
    x = obs.as_array()
    assert x.shape == (OBS_DIM,)
    assert np.all(np.isfinite(x))
    lo = np.array([0, 0, -1, -1, 0, 0, 0, 0, 0])
    assert np.all(x >= lo) and np.all(x <= 1)


def test_array_round_trip():
    x = np.linspace(0, 0.8, OBS_DIM)
    np.testing.assert_array_equal(Observation.from_array(x).as_array(), x)


@pytest.mark.parametrize("kwargs", [{"p_max": 0.0}, {"cv_ref": -1.0}, {"slope_ref": math.inf}, {"backlog_ref": 0.0}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigInvalid):
        FeatureConfig(**kwargs)
