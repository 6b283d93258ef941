"""Empirical mode decomposition, its noise-assisted ensemble variant and
rolling re-decomposition for real-time use.

Sifting follows the classic recipe: upper and lower envelopes are natural
cubic splines through the local maxima and minima, their mean is subtracted
until the Cauchy-type SD criterion falls under ``sift_tolerance``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import solve_banded

from .errors import ConfigError, SeriesTooShort, TooFewExtrema

MIN_EMD_LENGTH = 8


@dataclass(frozen=True)
class ImfSet:
    """Intrinsic mode functions plus the final residual.

    ``imfs`` has shape ``(k, N)``; ``k`` may be zero for monotone input.
    """

    imfs: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        imfs = np.asarray(self.imfs, dtype=float)
        if imfs.ndim == 1 and imfs.size == 0:
            imfs = imfs.reshape(0, len(self.residual))
        residual = np.asarray(self.residual, dtype=float)
        if imfs.ndim != 2 or imfs.shape[1] != residual.shape[0]:
            raise ValueError("all components must share the source length")
        imfs.setflags(write=False)
        residual.setflags(write=False)
        object.__setattr__(self, "imfs", imfs)
        object.__setattr__(self, "residual", residual)

    @property
    def source_len(self) -> int:
        return self.residual.shape[0]

    @property
    def n_imfs(self) -> int:
        return self.imfs.shape[0]

    def components(self) -> np.ndarray:
        """IMFs followed by the residual, shape ``(k + 1, N)``."""
        return np.vstack([self.imfs, self.residual[None, :]])

    def reconstruct(self) -> np.ndarray:
        return self.imfs.sum(axis=0) + self.residual

    def to_csv(self, path, t: Sequence | None = None) -> None:
        """Write ``t, imf_1..imf_k, residual`` columns."""
        t = np.arange(self.source_len) if t is None else np.asarray(t)
        header = ["t"] + [f"imf_{i + 1}" for i in range(self.n_imfs)] + ["residual"]
        comps = self.components()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for j in range(self.source_len):
                row = [str(t[j])] + [repr(float(v)) for v in comps[:, j]]
                fh.write(",".join(row) + "\n")


@dataclass(frozen=True)
class EemdConfig:
    noise_amplitude: float = 0.05  # fraction of std(x)
    ensemble_size: int = 100
    max_siftings: int = 50
    sift_tolerance: float = 0.2
    master_seed: int = 0
    num_imfs: int | None = None  # force a fixed mode count (None: natural)
    n_jobs: int = 1

    def __post_init__(self):
        if not self.noise_amplitude > 0:
            raise ConfigError("noise_amplitude must be > 0")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1")
        if self.max_siftings < 1:
            raise ConfigError("max_siftings must be >= 1")
        if self.num_imfs is not None and self.num_imfs < 1:
            raise ConfigError("num_imfs must be >= 1 when given")

    @classmethod
    def from_dict(cls, d: dict) -> "EemdConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown eemd keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "EemdConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


def find_extrema(x) -> tuple[np.ndarray, np.ndarray]:
    """Indices of strict local maxima and minima.

    A flat run of equal values counts once, at its (floored) midpoint. The
    first and last samples are never reported.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 3:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    change = np.flatnonzero(np.diff(x) != 0)
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change, [x.size - 1]))
    if starts.size < 3:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    vals = x[starts]
    mid = vals[1:-1]
    is_max = (mid > vals[:-2]) & (mid > vals[2:])
    is_min = (mid < vals[:-2]) & (mid < vals[2:])
    centre = (starts[1:-1] + ends[1:-1]) // 2
    return centre[is_max], centre[is_min]


def _mirror_knots(n: int, idx: np.ndarray, vals: np.ndarray):
    # reflect the two extrema closest to each end about that endpoint
    left = idx[:2]
    right = idx[-2:]
    pos = np.concatenate((-left[::-1], idx, 2 * (n - 1) - right[::-1]))
    val = np.concatenate((vals[:2][::-1], vals, vals[-2:][::-1]))
    return pos.astype(float), val


def natural_spline(knots, values, at) -> np.ndarray:
    """Evaluate the natural cubic spline through ``(knots, values)`` at ``at``.

    ``knots`` must be strictly increasing. Points outside the knot range use
    the end polynomial.
    """
    xk = np.asarray(knots, dtype=float)
    yk = np.asarray(values, dtype=float)
    h = np.diff(xk)
    n = xk.size
    m = np.zeros(n)  # second derivatives, zero at both ends
    if n > 2:
        slope = np.diff(yk) / h
        rhs = 6.0 * np.diff(slope)
        ab = np.zeros((3, n - 2))
        ab[0, 1:] = h[1:-1]
        ab[1] = 2.0 * (h[:-1] + h[1:])
        ab[2, :-1] = h[1:-1]
        m[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
    t = np.asarray(at, dtype=float)
    i = np.clip(np.searchsorted(xk, t, side="right") - 1, 0, n - 2)
    hi = h[i]
    a = xk[i + 1] - t
    b = t - xk[i]
    return (m[i] * a**3 + m[i + 1] * b**3) / (6.0 * hi) + (
        (yk[i] / hi - m[i] * hi / 6.0) * a + (yk[i + 1] / hi - m[i + 1] * hi / 6.0) * b
    )


def envelope(x, extrema) -> np.ndarray:
    """Natural cubic spline through ``x[extrema]`` evaluated on every sample.

    The two extrema nearest each end are mirrored about that endpoint first,
    so a single extremum still yields three knots.
    """
    x = np.asarray(x, dtype=float)
    idx = np.asarray(extrema, dtype=int)
    if idx.size == 0:
        raise TooFewExtrema("envelope needs at least one extremum to mirror")
    pos, val = _mirror_knots(x.size, idx, x[idx])
    if pos.size < 2:
        raise TooFewExtrema("fewer than two spline knots after mirroring")
    return natural_spline(pos, val, np.arange(x.size, dtype=float))


def _sift(h: np.ndarray, max_siftings: int, tol: float) -> np.ndarray:
    for _ in range(max_siftings):
        maxima, minima = find_extrema(h)
        if maxima.size == 0 or minima.size == 0:
            break
        mean = 0.5 * (envelope(h, maxima) + envelope(h, minima))
        energy = np.dot(h, h)
        h = h - mean
        if energy == 0 or np.dot(mean, mean) / energy < tol:
            break
    return h


def _n_extrema(r: np.ndarray, eps: float) -> int:
    # steps below eps are round-off; a flat-but-noisy remainder counts as monotone
    d = np.diff(r)
    d = d[np.abs(d) > eps]
    return int(np.count_nonzero(np.sign(d[1:]) != np.sign(d[:-1])))


def emd(x, max_siftings: int = 50, sift_tolerance: float = 0.2, max_imfs: int | None = None) -> ImfSet:
    """Decompose ``x`` into IMFs by repeated sifting.

    Extraction stops when the remainder has fewer than two extrema (which
    covers monotone remainders) or when ``max_imfs`` modes were taken.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < MIN_EMD_LENGTH:
        raise SeriesTooShort(f"emd needs at least {MIN_EMD_LENGTH} samples, got {x.size}")
    residual = x.copy()
    eps = 1e-10 * max(float(np.max(np.abs(x))), np.finfo(float).tiny)
    imfs = []
    while max_imfs is None or len(imfs) < max_imfs:
        if _n_extrema(residual, eps) < 2:
            break
        h = _sift(residual, max_siftings, sift_tolerance)
        imfs.append(h)
        residual = residual - h
    stacked = np.array(imfs) if imfs else np.empty((0, x.size))
    return ImfSet(stacked, residual)


def _trial(x: np.ndarray, noise_std: float, master_seed: int, trial: int,
           max_siftings: int, tol: float, max_imfs: int | None):
    rng = np.random.default_rng([master_seed, trial])
    noisy = x + noise_std * rng.standard_normal(x.size)
    result = emd(noisy, max_siftings, tol, max_imfs)
    return result.imfs, result.residual


def _trial_chunk(x, noise_std, master_seed, trials, max_siftings, tol, max_imfs):
    return [_trial(x, noise_std, master_seed, j, max_siftings, tol, max_imfs) for j in trials]


def eemd(x, cfg: EemdConfig = EemdConfig()) -> ImfSet:
    """Ensemble EMD over ``cfg.ensemble_size`` white-noise perturbed copies.

    Trial ``j`` draws its noise from a generator seeded with
    ``(cfg.master_seed, j)``, so the result does not depend on ``cfg.n_jobs``.
    Trials that yield fewer modes than the ensemble maximum add their residual
    into the deepest mode slot before the index-wise mean is taken.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < MIN_EMD_LENGTH:
        raise SeriesTooShort(f"eemd needs at least {MIN_EMD_LENGTH} samples, got {x.size}")
    noise_std = cfg.noise_amplitude * float(np.std(x))
    trials = range(cfg.ensemble_size)
    args = (cfg.max_siftings, cfg.sift_tolerance, cfg.num_imfs)
    if cfg.n_jobs == 1:
        results = [_trial(x, noise_std, cfg.master_seed, j, *args) for j in trials]
    else:
        n_chunks = min(cfg.ensemble_size, 4 * abs(cfg.n_jobs))
        chunks = np.array_split(np.arange(cfg.ensemble_size), n_chunks)
        parts = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_trial_chunk)(x, noise_std, cfg.master_seed, c.tolist(), *args)
            for c in chunks
        )
        results = [r for part in parts for r in part]

    k = cfg.num_imfs if cfg.num_imfs is not None else max(r[0].shape[0] for r in results)
    imf_sum = np.zeros((k, x.size))
    res_sum = np.zeros(x.size)
    for imfs, residual in results:
        kj = imfs.shape[0]
        imf_sum[:kj] += imfs
        if kj < k:
            imf_sum[k - 1] += residual
        else:
            res_sum += residual
    n = cfg.ensemble_size
    return ImfSet(imf_sum / n, res_sum / n)


def rolling_decompose(history, new_value: float, cfg: EemdConfig = EemdConfig(),
                      window: int | None = None) -> ImfSet:
    """Append ``new_value`` to ``history`` and re-run EEMD on the result.

    ``window`` caps the decomposed span to the most recent samples; ``None``
    keeps the full history.
    """
    values = getattr(history, "values", history)
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise SeriesTooShort("history is empty")
    updated = np.append(values, float(new_value))
    if window is not None:
        updated = updated[-window:]
    return eemd(updated, cfg)
