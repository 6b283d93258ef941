"""Forecast error metrics, terrain forecasting deviation and model ranking."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateDenominator, EmptyInput, EmptyTable, LengthMismatch, ZeroMeanActual


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    a = np.asarray(actual, dtype=float).ravel()
    if p.size != a.size:
        raise LengthMismatch(f"prediction has {p.size} values, actual has {a.size}")
    if p.size == 0:
        raise EmptyInput("metrics need at least one value")
    return p, a


def mae(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.mean(np.abs(p - a)))


def rmse(pred, actual) -> float:
    p, a = _pair(pred, actual)
    e = np.abs(p - a)
    # never below the MAE, which holds exactly in real arithmetic
    return float(max(np.sqrt(np.mean(e * e)), np.mean(e)))


def nrmse(pred, actual) -> float:
    """RMSE divided by the mean of the actual values."""
    p, a = _pair(pred, actual)
    mu = float(np.mean(a))
    if mu == 0:
        raise ZeroMeanActual("mean of actual values is zero")
    return rmse(p, a) / mu


def forecast_deviation(simple_nrmses: Sequence[float], complex_nrmses: Sequence[float]) -> float:
    """Percentage gap in (1 - mean nRMSE) between complex and simple terrain."""
    if len(simple_nrmses) == 0 or len(complex_nrmses) == 0:
        raise EmptyInput("both terrain groups need at least one nRMSE")
    acc_simple = 1.0 - float(np.mean(simple_nrmses))
    acc_complex = 1.0 - float(np.mean(complex_nrmses))
    if acc_simple == 0:
        raise DegenerateDenominator("mean simple-terrain nRMSE equals 1")
    return abs((acc_complex - acc_simple) / acc_simple) * 100.0


def mean_rank(error_table) -> np.ndarray:
    """Mean rank per model (rows) over cases (columns); ties share the average rank."""
    table = np.asarray(error_table, dtype=float)
    if table.ndim != 2 or table.size == 0:
        raise EmptyTable("error table must be a non-empty models x cases matrix")
    if np.isnan(table).any():
        raise ValueError("error table contains NaN")
    ranks = np.apply_along_axis(rankdata, 0, table, method="average")
    return ranks.mean(axis=1)


@dataclass(frozen=True)
class MetricRow:
    station: str
    terrain: str
    season: str
    horizon: int
    model: str
    mae: float
    rmse: float
    nrmse: float
    mean_actual: float
    count: int


def score(pred, actual, **labels) -> MetricRow:
    p, a = _pair(pred, actual)
    mu = float(np.mean(a))
    if mu == 0:
        raise ZeroMeanActual("mean of actual values is zero")
    r = rmse(p, a)
    return MetricRow(mae=mae(p, a), rmse=r, nrmse=r / mu, mean_actual=mu, count=int(p.size), **labels)


@dataclass
class EvalReport:
    rows: list[MetricRow]
    deviation: dict[str, float]       # model -> FD (%) between terrain groups
    mean_ranks: dict[str, float]      # model -> mean rank over all cases

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v
        rows = [{k: clean(v) for k, v in asdict(r).items()} for r in self.rows]
        return json.dumps({"rows": rows, "forecast_deviation": self.deviation,
                           "mean_rank": self.mean_ranks}, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = ["station", "terrain", "season", "horizon", "model", "mae", "rmse", "nrmse",
                "mean_actual", "count"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([getattr(r, c) for c in cols])


SIMPLE_TERRAIN = {"simple", "plain"}


def build_report(rows: Sequence[MetricRow]) -> EvalReport:
    """Attach terrain deviation and mean ranks to a flat list of metric rows.

    Ranking uses nRMSE over every (station, season, horizon) case that all
    models share. Deviation is reported per model when both a simple/plain
    and a complex station are present, using season ``all`` rows averaged
    over horizons.
    """
    rows = list(rows)
    models = sorted({r.model for r in rows})
    cases: dict[tuple, dict[str, float]] = {}
    for r in rows:
        cases.setdefault((r.station, r.season, r.horizon), {})[r.model] = r.nrmse
    full = [c for c in sorted(cases) if len(cases[c]) == len(models)]
    ranks: dict[str, float] = {}
    if full and models:
        table = np.array([[cases[c][m] for c in full] for m in models])
        ranks = dict(zip(models, map(float, mean_rank(table))))

    deviation: dict[str, float] = {}
    for model in models:
        per_station: dict[tuple[str, str], list[float]] = {}
        for r in rows:
            if r.model == model and r.season == "all":
                per_station.setdefault((r.station, r.terrain), []).append(r.nrmse)
        simple = [float(np.mean(v)) for (s, t), v in per_station.items() if t.lower() in SIMPLE_TERRAIN]
        complex_ = [float(np.mean(v)) for (s, t), v in per_station.items() if t.lower() == "complex"]
        if simple and complex_:
            deviation[model] = forecast_deviation(simple, complex_)
    return EvalReport(rows, deviation, ranks)
