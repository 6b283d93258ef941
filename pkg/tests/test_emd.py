import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from windcast.emd import (
    EemdConfig,
    ImfSet,
    eemd,
    emd,
    envelope,
    find_extrema,
    natural_spline,
    rolling_decompose,
)
from windcast.errors import ConfigError, SeriesTooShort, TooFewExtrema
from windcast.series import generate_synthetic


def interior(x, frac=0.05):
    k = int(len(x) * frac)
    return slice(k, len(x) - k)


def corr(a, b, sl):
    return float(np.corrcoef(a[sl], b[sl])[0, 1])


def test_find_extrema_examples():
    mx, mn = find_extrema([0, 1, 0])
    assert mx.tolist() == [1] and mn.tolist() == []
    mx, mn = find_extrema([1, 2, 3, 4])
    assert mx.size == 0 and mn.size == 0
    mx, mn = find_extrema([0, 1, 1, 0])
    assert mx.tolist() == [1] and mn.tolist() == []
    mx, mn = find_extrema([0, 2, 2, 2, 0, -1, -1, 3])
    assert mx.tolist() == [2] and mn.tolist() == [5]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=3, max_size=40))
def test_find_extrema_against_scan(values):
    x = np.array(values, dtype=float)
    mx, mn = find_extrema(x)
    # independent run-length scan
    runs = []
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[j + 1] == x[i]:
            j += 1
        runs.append((i, j, x[i]))
        i = j + 1
    exp_max, exp_min = [], []
    for r in range(1, len(runs) - 1):
        a, b, v = runs[r]
        if v > runs[r - 1][2] and v > runs[r + 1][2]:
            exp_max.append((a + b) // 2)
        if v < runs[r - 1][2] and v < runs[r + 1][2]:
            exp_min.append((a + b) // 2)
    assert mx.tolist() == exp_max and mn.tolist() == exp_min
    assert 0 not in mx and len(x) - 1 not in mx


def test_natural_spline_matches_scipy():
    rng = np.random.default_rng(0)
    xk = np.sort(rng.uniform(-5, 50, 12))
    yk = rng.standard_normal(12)
    at = np.linspace(xk[0], xk[-1], 300)
    ref = CubicSpline(xk, yk, bc_type="natural")(at)
    assert np.max(np.abs(natural_spline(xk, yk, at) - ref)) < 1e-10


def test_spline_reproduces_collinear_knots():
    xk = np.array([5.0, 15.0, 25.0, 35.0, 45.0])
    at = np.arange(50.0)
    assert np.max(np.abs(natural_spline(xk, 0.5 * xk + 1, at) - (0.5 * at + 1))) < 1e-10


def test_envelope_collinear_level():
    # the mirror rule reflects values evenly, so a level line survives extension exactly
    x = np.zeros(50)
    idx = np.array([5, 15, 25, 35, 45])
    x[idx] = 2.5
    assert np.max(np.abs(envelope(x, idx) - 2.5)) < 1e-10


def test_envelope_single_extremum_mirrors():
    x = np.array([0.0, 1.0, 3.0, 1.0, 0.0, -1.0])
    env = envelope(x, np.array([2]))
    assert np.allclose(env, 3.0)
    with pytest.raises(TooFewExtrema):
        envelope(x, np.array([], dtype=int))


def test_envelope_of_sine_is_flat():
    t = np.arange(1000)
    x = 2.0 * np.sin(2 * np.pi * t / 50)
    mx, _ = find_extrema(x)
    env = envelope(x, mx)
    sl = interior(x)
    assert np.max(np.abs(env[sl] / 2.0 - 1)) < 0.02


def test_emd_sinusoid():
    t = np.linspace(0, 3, 256, endpoint=False)
    x = np.sin(2 * np.pi * t)
    d = emd(x)
    assert 1 <= d.n_imfs <= 2
    assert corr(d.imfs[0], x, interior(x)) > 0.95


def test_emd_ramp():
    x = np.linspace(0, 1, 100)
    d = emd(x)
    assert d.n_imfs == 0
    assert np.array_equal(d.residual, x)


def test_emd_two_tone():
    t = np.arange(1024) / 256
    fast = np.sin(2 * np.pi * 8 * t)
    slow = np.sin(2 * np.pi * 0.5 * t)
    d = emd(fast + slow)
    sl = interior(t)
    comps = d.components()
    assert corr(comps[0], fast, sl) > 0.9
    assert max(corr(c, slow, sl) for c in comps[1:]) > 0.9


def test_emd_too_short():
    with pytest.raises(SeriesTooShort):
        emd(np.arange(7.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 400))
def test_emd_exact_reconstruction(seed, n):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.standard_normal(n)) + 3 * np.sin(np.arange(n) / 7)
    d = emd(x)
    assert np.max(np.abs(x - d.reconstruct())) < 1e-9 * np.max(np.abs(x))


def _crossings(x):
    s = np.sign(x)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def test_imf_property_and_orthogonality():
    t = np.arange(2048) / 256
    x = np.sin(2 * np.pi * 6 * t) + 0.7 * np.sin(2 * np.pi * 1.1 * t) + 0.4 * np.sin(2 * np.pi * 0.3 * t)
    d = emd(x)
    sl = interior(x)
    for imf in d.imfs:
        mx, mn = find_extrema(imf)
        ext = np.concatenate([mx, mn])
        n_ext = int(np.count_nonzero((ext >= sl.start) & (ext < sl.stop)))
        assert abs(n_ext - _crossings(imf[sl])) <= 1
    comps = d.imfs
    cross = sum(np.sum(comps[i] * comps[j]) for i in range(len(comps)) for j in range(len(comps)) if i != j)
    assert abs(cross) / np.sum(x * x) < 0.2


def test_imfset_invariants_and_csv(tmp_path):
    with pytest.raises(ValueError):
        ImfSet(np.zeros((2, 5)), np.zeros(4))
    d = emd(np.sin(np.arange(64) / 3.0))
    with pytest.raises(ValueError):
        d.imfs[0, 0] = 1.0
    d.to_csv(tmp_path / "imfs.csv")
    lines = (tmp_path / "imfs.csv").read_text().splitlines()
    assert lines[0].split(",") == ["t"] + [f"imf_{i + 1}" for i in range(d.n_imfs)] + ["residual"]
    assert len(lines) == 65


def test_eemd_config():
    with pytest.raises(ConfigError):
        EemdConfig(noise_amplitude=0)
    with pytest.raises(ConfigError):
        EemdConfig(ensemble_size=0)
    cfg = EemdConfig.from_json(json.dumps({"ensemble_size": 7, "master_seed": 3}))
    assert cfg.ensemble_size == 7 and EemdConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        EemdConfig.from_dict({"ensembles": 3})


def test_eemd_degenerate_matches_emd():
    x = generate_synthetic(1, 300).values
    d = eemd(x, EemdConfig(noise_amplitude=1e-14, ensemble_size=1))
    ref = emd(x)
    assert d.n_imfs == ref.n_imfs
    assert np.max(np.abs(d.components() - ref.components())) < 1e-8


def test_eemd_deterministic_across_workers():
    x = generate_synthetic(2, 400).values
    a = eemd(x, EemdConfig(ensemble_size=12, master_seed=5, n_jobs=1))
    b = eemd(x, EemdConfig(ensemble_size=12, master_seed=5, n_jobs=3))
    assert np.array_equal(a.components(), b.components())
    c = eemd(x, EemdConfig(ensemble_size=12, master_seed=6))
    assert not np.array_equal(a.components(), c.components())


def test_eemd_noise_cancellation_bound():
    x = generate_synthetic(4, 500).values
    bound = 2 * 0.05 * np.std(x) / np.sqrt(50)
    d = eemd(x, EemdConfig(ensemble_size=50))
    assert np.std(x - d.reconstruct()) <= bound


def test_eemd_fixed_mode_count():
    x = generate_synthetic(4, 300).values
    d = eemd(x, EemdConfig(ensemble_size=5, num_imfs=3))
    assert d.n_imfs == 3
    natural = eemd(x, EemdConfig(ensemble_size=5))
    assert np.allclose(d.reconstruct(), natural.reconstruct(), atol=1e-9)


def test_rolling_decompose_lengths():
    x = np.sin(np.arange(200) / 4.0)
    cfg = EemdConfig(ensemble_size=4)
    d = rolling_decompose(x[:-1], x[-1], cfg)
    assert d.source_len == 200
    capped = rolling_decompose(x, 0.3, cfg, window=64)
    assert capped.source_len == 64
    with pytest.raises(SeriesTooShort):
        rolling_decompose([], 1.0, cfg)


def test_rolling_decompose_stable():
    t = np.arange(401)
    x = np.sin(2 * np.pi * t / 25)
    cfg = EemdConfig(ensemble_size=10)
    old = eemd(x[:400], cfg)
    new = rolling_decompose(x[:400], x[400], cfg)
    assert corr(old.imfs[0], new.imfs[0][:400], slice(0, 400)) > 0.9
