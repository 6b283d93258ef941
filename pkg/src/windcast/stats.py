"""Partial autocorrelation, lag-based component grouping and sample-entropy
complexity scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConstantSeries, SeriesTooShort, UndefinedEntropy

DEFAULT_THRESHOLD = 0.1


class Complexity(str, Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"


@dataclass(frozen=True)
class SampEnConfig:
    template_len: int = 2
    tolerance_frac: float = 0.2  # r as a fraction of std(x)

    def __post_init__(self):
        if self.template_len < 1:
            raise ConfigError("template_len must be >= 1")
        if not self.tolerance_frac > 0:
            raise ConfigError("tolerance_frac must be > 0")


@dataclass(frozen=True)
class ImfProfile:
    lag: int
    sampen: float  # math.inf when the entropy is undefined
    cls: Complexity

    @property
    def is_complex(self) -> bool:
        return self.cls is Complexity.COMPLEX


def autocovariance(x, max_lag: int) -> np.ndarray:
    """Biased sample autocovariances gamma(0..max_lag) of the demeaned series."""
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    n = d.size
    return np.array([np.dot(d[: n - k], d[k:]) / n for k in range(max_lag + 1)])


def pacf(x, max_lag: int) -> np.ndarray:
    """Partial autocorrelations at lags 1..max_lag (Durbin-Levinson)."""
    x = np.asarray(x, dtype=float)
    if max_lag < 1 or x.size <= max_lag + 1:
        raise SeriesTooShort(f"pacf up to lag {max_lag} needs more than {max_lag + 1} samples")
    gamma = autocovariance(x, max_lag)
    if gamma[0] <= 0 or np.ptp(x) == 0:
        raise ConstantSeries("pacf of a constant series is undefined")
    rho = gamma / gamma[0]
    out = np.empty(max_lag)
    phi = np.zeros(0)
    v = 1.0
    for k in range(1, max_lag + 1):
        num = rho[k] - np.dot(phi, rho[k - 1:0:-1])
        a = num / v
        phi = np.concatenate((phi - a * phi[::-1], [a]))
        v *= 1.0 - a * a
        out[k - 1] = a
    return out


def optimal_lag(x, max_lag: int = 24, significance: float = 1.96) -> int:
    """Largest lag whose |pacf| clears ``significance / sqrt(N)``; 1 if none does."""
    x = np.asarray(x, dtype=float)
    p = pacf(x, max_lag)
    band = significance / math.sqrt(x.size)
    hits = np.flatnonzero(np.abs(p) > band)
    return int(hits[-1] + 1) if hits.size else 1


def group_by_lag(imfs, lags: Sequence[int]):
    """Sum components that share an identical lag.

    ``imfs`` is either an :class:`~windcast.emd.ImfSet` (its residual is the
    final component) or a ``(k, N)`` array of components. Returns the grouped
    signals (ascending lag order), their lags, and the member component
    indices of each group.
    """
    comps = imfs.components() if hasattr(imfs, "components") else np.asarray(imfs, dtype=float)
    lags = [int(v) for v in lags]
    if len(lags) != comps.shape[0]:
        raise ValueError(f"{comps.shape[0]} components but {len(lags)} lags")
    order = sorted(set(lags))
    members = [[i for i, lag in enumerate(lags) if lag == g] for g in order]
    signals = np.array([comps[idx].sum(axis=0) for idx in members])
    return signals, order, members


def _match_counts(x: np.ndarray, m: int, r: float) -> tuple[int, int]:
    # pairs (i, i + k) over the first N - m templates, compared at lengths m and m + 1
    n = x.size
    n_templates = n - m
    a = b = 0
    for k in range(1, n_templates):
        d = np.abs(x[k:] - x[:-k])
        # Chebyshev distance of templates starting at i and i + k, i < n_templates - k
        count = n_templates - k
        windows = np.lib.stride_tricks.sliding_window_view(d[: count + m], m + 1)
        dm = windows[:, :m].max(axis=1)
        within_m = dm < r
        b += int(np.count_nonzero(within_m))
        a += int(np.count_nonzero(within_m & (windows[:, m] < r)))
    return a, b


def match_counts(x, cfg: SampEnConfig = SampEnConfig()) -> tuple[int, int]:
    """Template-pair counts ``(A, B)`` underlying sample entropy."""
    x = np.asarray(x, dtype=float)
    m = cfg.template_len
    if x.size <= m + 1:
        raise SeriesTooShort(f"sample entropy needs more than {m + 1} samples")
    sd = float(np.std(x))
    if sd == 0:
        raise ConstantSeries("sample entropy of a constant series is undefined")
    return _match_counts(x, m, cfg.tolerance_frac * sd)


def sample_entropy(x, cfg: SampEnConfig = SampEnConfig()) -> float:
    """SampEn = -ln(A/B) with Chebyshev distance and r = tolerance_frac * std(x).

    Raises :class:`UndefinedEntropy` when either count is zero.
    """
    a, b = match_counts(x, cfg)
    if a == 0 or b == 0:
        raise UndefinedEntropy(a, b)
    return -math.log(a / b)


def classify_score(sampen: float, threshold: float = DEFAULT_THRESHOLD) -> Complexity:
    return Complexity.COMPLEX if sampen > threshold else Complexity.SIMPLE


def classify(signals, threshold: float = DEFAULT_THRESHOLD, cfg: SampEnConfig = SampEnConfig(),
             lags: Sequence[int] | None = None) -> list[ImfProfile]:
    """Profile each signal; undefined entropy is treated as complex."""
    signals = list(signals)
    if not signals:
        raise ValueError("classify needs at least one signal")
    lags = [1] * len(signals) if lags is None else list(lags)
    profiles = []
    for sig, lag in zip(signals, lags):
        try:
            se = sample_entropy(sig, cfg)
        except UndefinedEntropy:
            se = math.inf
        profiles.append(ImfProfile(int(lag), se, classify_score(se, threshold)))
    return profiles


def profiles_to_json(profiles: Sequence[ImfProfile]) -> str:
    rows = [
        {"group_index": i, "lag": p.lag,
         "sampen": None if math.isinf(p.sampen) else p.sampen, "class": p.cls.value}
        for i, p in enumerate(profiles)
    ]
    return json.dumps(rows, indent=2)


def profiles_from_json(text: str) -> list[ImfProfile]:
    rows = sorted(json.loads(text), key=lambda r: r["group_index"])
    return [ImfProfile(int(r["lag"]), math.inf if r["sampen"] is None else float(r["sampen"]),
                       Complexity(r["class"])) for r in rows]
