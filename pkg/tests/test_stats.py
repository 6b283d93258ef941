import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import windcast.stats as stats
from oracles import pacf_ols, pacf_ols_covariance, random_stationary_ar, sampen_counts_bruteforce, simulate_ar
from windcast.emd import ImfSet
from windcast.errors import ConfigError, ConstantSeries, SeriesTooShort, UndefinedEntropy
from windcast.stats import (
    Complexity,
    ImfProfile,
    SampEnConfig,
    classify,
    classify_score,
    group_by_lag,
    match_counts,
    optimal_lag,
    pacf,
    profiles_from_json,
    profiles_to_json,
    sample_entropy,
)


def test_pacf_ar1():
    x = simulate_ar([0.7], 5000, np.random.default_rng(1))
    p = pacf(x, 10)
    assert abs(p[0] - 0.7) < 0.05
    assert np.all(np.abs(p[1:]) < 2 / np.sqrt(5000) + 0.03)


def test_pacf_white_noise():
    x = np.random.default_rng(2).standard_normal(5000)
    assert np.all(np.abs(pacf(x, 20)) < 0.08)


def test_pacf_matches_ols_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        coeffs = random_stationary_ar(3, rng)
        x = simulate_ar(coeffs, 2000, rng)
        assert np.max(np.abs(pacf(x, 5) - pacf_ols(x, 5))) < 1e-6


def test_pacf_close_to_unpadded_regression():
    # the unpadded regression differs only by end terms of order 1/N
    rng = np.random.default_rng(4)
    x = simulate_ar([0.5, -0.2], 4000, rng)
    assert np.max(np.abs(pacf(x, 5) - pacf_ols_covariance(x, 5))) < 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_pacf_bounded(seed):
    x = np.random.default_rng(seed).standard_normal(60).cumsum()
    assert np.all(np.abs(pacf(x, 12)) <= 1 + 1e-6)


def test_pacf_errors():
    with pytest.raises(ConstantSeries):
        pacf(np.ones(50), 3)
    with pytest.raises(SeriesTooShort):
        pacf(np.arange(5.0), 4)


def test_optimal_lag_ar2_and_noise():
    x = simulate_ar([0.6, 0.3], 5000, np.random.default_rng(5))
    assert optimal_lag(x, 10) == 2
    assert optimal_lag(np.random.default_rng(6).standard_normal(5000), 3) == 1


def test_optimal_lag_is_largest_band_crossing():
    t = np.arange(3000)
    x = np.sin(2 * np.pi * t / 40) + 0.3 * np.random.default_rng(7).standard_normal(t.size)
    band = 1.96 / np.sqrt(t.size)
    ref = pacf_ols(x, 24)
    hits = [k + 1 for k in range(24) if abs(ref[k]) > band]
    assert optimal_lag(x, 24) == hits[-1]
    assert optimal_lag(x, 5) == max(k for k in hits if k <= 5)


def test_group_by_lag_examples():
    comps = np.arange(15.0).reshape(3, 5)
    signals, lags, members = group_by_lag(comps, [3, 3, 5])
    assert lags == [3, 5] and members == [[0, 1], [2]]
    assert np.array_equal(signals[0], comps[0] + comps[1])
    signals, lags, members = group_by_lag(comps, [4, 1, 2])
    assert lags == [1, 2, 4] and members == [[1], [2], [0]]
    signals, lags, _ = group_by_lag(comps, [2, 2, 2])
    assert signals.shape == (1, 5)
    assert np.array_equal(signals[0], comps[0] + comps[1] + comps[2])


def test_group_by_lag_accepts_imfset():
    imfs = ImfSet(np.ones((2, 4)), np.full(4, 3.0))
    signals, lags, members = group_by_lag(imfs, [1, 2, 1])
    assert members == [[0, 2], [1]]
    assert np.array_equal(signals[0], np.full(4, 4.0))
    with pytest.raises(ValueError):
        group_by_lag(imfs, [1, 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=8), st.integers(0, 1000))
def test_group_by_lag_conserves_mass(lags, seed):
    comps = np.random.default_rng(seed).integers(-50, 50, (len(lags), 20)).astype(float)
    signals, glags, members = group_by_lag(comps, lags)
    assert len(signals) <= len(lags)
    assert glags == sorted(glags)
    assert np.array_equal(signals.sum(axis=0), comps.sum(axis=0))
    assert sorted(i for m in members for i in m) == list(range(len(lags)))


def test_sampen_regular_pattern():
    x = np.tile([1.0, 2.0], 50)
    assert sample_entropy(x) == 0.0


def test_sampen_formula_from_counts(monkeypatch):
    monkeypatch.setattr(stats, "match_counts", lambda x, cfg=None: (40, 100))
    assert abs(stats.sample_entropy(np.arange(10.0)) - (-math.log(0.4))) < 1e-12
    assert abs(-math.log(0.4) - 0.9163) < 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(5, 200))
def test_sampen_counts_match_bruteforce(seed, n):
    rng = np.random.default_rng(seed)
    x = np.round(rng.standard_normal(n), 1)  # coarse values exercise ties at the tolerance
    if np.std(x) == 0:
        return
    r = 0.2 * np.std(x)
    assert match_counts(x) == sampen_counts_bruteforce(x, 2, r)


def test_sampen_noise_above_sine():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(1000)
        sine = np.sin(2 * np.pi * np.arange(1000) / 50 + rng.uniform(0, 6))
        assert sample_entropy(noise) > sample_entropy(sine)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 3.0, 100.0]))
def test_sampen_scale_invariant(seed, c):
    x = np.random.default_rng(seed).standard_normal(150)
    assert sample_entropy(c * x) == sample_entropy(x)


def test_sampen_errors():
    with pytest.raises(ConstantSeries):
        sample_entropy(np.ones(20))
    with pytest.raises(SeriesTooShort):
        sample_entropy(np.array([1.0, 2.0, 3.0]))
    with pytest.raises(UndefinedEntropy):
        sample_entropy(np.array([0.0, 5.0, 1.0, 9.0, 2.0, 7.0]))
    with pytest.raises(ConfigError):
        SampEnConfig(template_len=0)
    with pytest.raises(ConfigError):
        SampEnConfig(tolerance_frac=0)


def test_classify_threshold_rule():
    assert classify_score(0.05) is Complexity.SIMPLE
    assert classify_score(0.1) is Complexity.SIMPLE
    assert classify_score(0.9163) is Complexity.COMPLEX


def test_classify_profiles():
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(400)
    sine = np.sin(2 * np.pi * np.arange(400) / 400)
    undefined = np.array([0.0, 5.0, 1.0, 9.0, 2.0, 7.0])
    profiles = classify([noise, sine, undefined], lags=[1, 3, 2])
    assert profiles[0].is_complex and not profiles[1].is_complex
    assert math.isinf(profiles[2].sampen) and profiles[2].is_complex
    assert [p.lag for p in profiles] == [1, 3, 2]
    with pytest.raises(ValueError):
        classify([])


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
def test_classify_monotone(a, b, threshold):
    lo, hi = sorted((a, b))
    if classify_score(lo, threshold) is Complexity.COMPLEX:
        assert classify_score(hi, threshold) is Complexity.COMPLEX


def test_profiles_json_round_trip():
    profiles = [ImfProfile(3, 0.25, Complexity.COMPLEX), ImfProfile(1, math.inf, Complexity.COMPLEX),
                ImfProfile(24, 0.01, Complexity.SIMPLE)]
    text = profiles_to_json(profiles)
    rows = json.loads(text)
    assert rows[1] == {"group_index": 1, "lag": 1, "sampen": None, "class": "Complex"}
    assert profiles_from_json(text) == profiles
