"""Time-series ingestion, scaling, windowing and chronological splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.signal import lfilter

from .errors import (
    ConstantSeries,
    EmptySplit,
    MalformedRow,
    NonFiniteValue,
    NonUniformStride,
    SeriesTooShort,
    ValidationError,
)

HOUR = 3600

DEFAULT_SEASONS: dict[int, str] = {
    11: "winter", 12: "winter", 1: "winter", 2: "winter",
    3: "summer", 4: "summer", 5: "summer", 6: "summer",
    7: "rainy", 8: "rainy", 9: "rainy", 10: "rainy",
}


@dataclass(frozen=True)
class TimeSeries:
    """Timestamped wind-speed samples.

    ``timestamps`` are integer epoch seconds (UTC), ``values`` are m/s.
    Construction only checks that the arrays line up, are finite and strictly
    increasing; :meth:`validated` additionally enforces a uniform stride and a
    minimum length, which is what ingestion uses.
    """

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vs = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or vs.ndim != 1 or ts.shape != vs.shape:
            raise ValidationError("timestamps and values must be 1-D arrays of equal length")
        if not np.all(np.isfinite(vs)):
            bad = int(np.flatnonzero(~np.isfinite(vs))[0])
            raise NonFiniteValue(f"non-finite value at sample {bad}")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        ts.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)

    @classmethod
    def validated(cls, timestamps, values) -> "TimeSeries":
        s = cls(timestamps, values)
        if len(s) < 2:
            raise SeriesTooShort(f"series needs at least 2 samples, got {len(s)}")
        steps = np.diff(s.timestamps)
        bad = np.flatnonzero(steps != steps[0])
        if bad.size:
            i = int(bad[0])
            raise NonUniformStride(i + 1, int(steps[0]), int(steps[i]))
        return s

    @classmethod
    def from_values(cls, values, start: int = 0, step: int = HOUR) -> "TimeSeries":
        values = np.asarray(values, dtype=float)
        return cls.validated(start + step * np.arange(values.size, dtype=np.int64), values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def step(self) -> int:
        return int(self.timestamps[1] - self.timestamps[0]) if len(self) > 1 else HOUR

    def __getitem__(self, item: slice) -> "TimeSeries":
        if not isinstance(item, slice):
            raise TypeError("TimeSeries supports slicing only")
        return TimeSeries(self.timestamps[item], self.values[item])

    def months(self) -> np.ndarray:
        return np.array([datetime.fromtimestamp(int(t), tz=timezone.utc).month
                         for t in self.timestamps], dtype=int)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("timestamp,ws\n")
            for t, v in zip(self.timestamps, self.values):
                fh.write(f"{format_timestamp(int(t))},{float(v)!r}\n")


def parse_timestamp(text: str) -> int:
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


def parse_csv(path) -> TimeSeries:
    """Read a ``timestamp,ws`` CSV into a validated :class:`TimeSeries`."""
    path = Path(path)
    rows: list[tuple[int, float]] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "ws"]:
            raise MalformedRow(1, "header must be exactly 'timestamp,ws'")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise MalformedRow(line, f"expected 2 fields, found {len(row)}")
            try:
                ts = parse_timestamp(row[0])
            except ValueError as exc:
                raise MalformedRow(line, f"bad timestamp {row[0]!r}") from exc
            try:
                val = float(row[1])
            except ValueError as exc:
                raise MalformedRow(line, f"bad value {row[1]!r}") from exc
            if not math.isfinite(val):
                raise NonFiniteValue(f"line {line}: non-finite value {row[1]!r}")
            rows.append((ts, val))
    rows.sort(key=lambda r: r[0])
    ts = np.array([r[0] for r in rows], dtype=np.int64)
    if ts.size > 1 and np.any(np.diff(ts) == 0):
        i = int(np.flatnonzero(np.diff(ts) == 0)[0])
        raise NonUniformStride(i + 1, HOUR, 0)
    return TimeSeries.validated(ts, [r[1] for r in rows])


@dataclass(frozen=True)
class NormalizationParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ConstantSeries(f"max ({self.max}) must exceed min ({self.min})")

    @classmethod
    def fit(cls, values) -> "NormalizationParams":
        values = np.asarray(values, dtype=float)
        lo, hi = float(values.min()), float(values.max())
        if not hi > lo:
            raise ConstantSeries("cannot min-max scale a constant series")
        return cls(lo, hi)

    def apply(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.min) / (self.max - self.min)

    def invert(self, values) -> np.ndarray:
        return self.min + np.asarray(values, dtype=float) * (self.max - self.min)


def minmax_normalize(s) -> tuple:
    """Scale to [0, 1]; returns the scaled data and the parameters used.

    Accepts a :class:`TimeSeries` (returned as one) or a bare array.
    """
    values = s.values if isinstance(s, TimeSeries) else np.asarray(s, dtype=float)
    p = NormalizationParams.fit(values)
    scaled = p.apply(values)
    if isinstance(s, TimeSeries):
        return TimeSeries(s.timestamps, scaled), p
    return scaled, p


def denormalize(v, p: NormalizationParams) -> np.ndarray:
    return p.invert(v)


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray   # (num_samples, input_len)
    targets: np.ndarray  # (num_samples, output_len)
    input_len: int
    output_len: int
    start: np.ndarray = field(default=None)  # source index of each sample's first input

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, sl: slice) -> "WindowedDataset":
        return WindowedDataset(self.inputs[sl], self.targets[sl], self.input_len,
                               self.output_len, None if self.start is None else self.start[sl])


def sliding_window(s, input_len: int, output_len: int) -> WindowedDataset:
    """Stride-1 windows: input ``s[i:i+m]``, target ``s[i+m:i+m+n]``."""
    values = s.values if isinstance(s, TimeSeries) else np.asarray(s, dtype=float)
    m, n = int(input_len), int(output_len)
    if m < 1 or n < 1:
        raise ValidationError("input_len and output_len must be >= 1")
    if values.size < m + n:
        raise SeriesTooShort(f"need at least {m + n} samples for m={m}, n={n}; got {values.size}")
    frames = np.lib.stride_tricks.sliding_window_view(values, m + n)
    return WindowedDataset(
        inputs=np.ascontiguousarray(frames[:, :m]),
        targets=np.ascontiguousarray(frames[:, m:]),
        input_len=m,
        output_len=n,
        start=np.arange(frames.shape[0]),
    )


def split_sizes(total: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Floor-rounded train/val sizes; the remainder goes to test."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValidationError(f"fractions must be three non-negative values summing to 1: {fractions}")
    # small epsilon keeps e.g. 10 * 0.7 from flooring to 6
    n_train = int(math.floor(total * fractions[0] + 1e-9))
    n_val = int(math.floor(total * fractions[1] + 1e-9))
    return n_train, n_val, total - n_train - n_val


def split_train_val_test(d: WindowedDataset, fractions=(0.7, 0.1, 0.2)):
    """Contiguous chronological split; no shuffling."""
    total = len(d)
    if total == 0:
        raise EmptySplit("dataset is empty")
    n_train, n_val, n_test = split_sizes(total, fractions)
    for name, size in (("train", n_train), ("validation", n_val), ("test", n_test)):
        if size == 0:
            raise EmptySplit(f"{name} partition would be empty for {total} samples")
    return (d.take(slice(0, n_train)),
            d.take(slice(n_train, n_train + n_val)),
            d.take(slice(n_train + n_val, total)))


def season_split(s: TimeSeries, season_map: Mapping[int, str] | None = None) -> dict[str, TimeSeries]:
    """Partition samples by the calendar month (UTC) of their timestamp.

    Every season named in the map gets an entry, possibly empty. Buckets are
    generally not contiguous.
    """
    season_map = DEFAULT_SEASONS if season_map is None else dict(season_map)
    missing = set(range(1, 13)) - set(season_map)
    if missing:
        raise ValidationError(f"season map misses months {sorted(missing)}")
    months = s.months()
    labels = np.array([season_map[int(m)] for m in months], dtype=object)
    out = {}
    for season in dict.fromkeys(season_map.values()):
        mask = labels == season
        out[season] = TimeSeries(s.timestamps[mask], s.values[mask])
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Generative parameters for the desk-scale wind-speed substitute.

    value(t) = offset + trend_slope * t
               + diurnal_amplitude * sin(2 pi t / period + phase)
               + AR(2) noise with innovations N(0, noise_std^2),
    clipped at zero.
    """

    ar_coeffs: tuple[float, float] = (1.2, -0.3)
    noise_std: float = 0.15
    diurnal_amplitude: float = 1.5
    offset: float = 6.0
    period: int = 24
    phase: float = 0.0
    trend_slope: float = 2e-4
    start: str = "2021-01-01T00:00:00"
    burn_in: int = 200

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        d = dict(d)
        d.pop("seed", None)
        d.pop("length", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        if "ar_coeffs" in d:
            d["ar_coeffs"] = tuple(float(a) for a in d["ar_coeffs"])
            if len(d["ar_coeffs"]) != 2:
                raise ValidationError("ar_coeffs must hold exactly two coefficients")
        return cls(**d)


def ar2_variance(a1: float, a2: float, noise_std: float) -> float:
    """Stationary variance of x_t = a1 x_{t-1} + a2 x_{t-2} + e_t."""
    return noise_std**2 * (1 - a2) / ((1 + a2) * ((1 - a2) ** 2 - a1**2))


def generate_synthetic(seed: int, N: int, spec: SyntheticSpec | None = None) -> TimeSeries:
    """Deterministic hourly synthetic wind-speed series."""
    if N < 48:
        raise SeriesTooShort(f"synthetic series needs N >= 48, got {N}")
    spec = SyntheticSpec() if spec is None else spec
    rng = np.random.default_rng(seed)
    a1, a2 = spec.ar_coeffs
    total = N + spec.burn_in
    e = rng.standard_normal(total) * spec.noise_std
    ar = lfilter([1.0], [1.0, -a1, -a2], e)[spec.burn_in:]
    t = np.arange(N, dtype=float)
    values = (spec.offset + spec.trend_slope * t
              + spec.diurnal_amplitude * np.sin(2 * np.pi * t / spec.period + spec.phase)
              + ar)
    values = np.clip(values, 0.0, None)
    start = parse_timestamp(spec.start)
    return TimeSeries.from_values(values, start=start, step=HOUR)
