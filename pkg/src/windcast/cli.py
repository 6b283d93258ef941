"""Command-line driver: decompose, train, forecast, evaluate, synth.

Exit codes: 0 success, 2 input or validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .emd import eemd
from .errors import ConfigError, NumericalError, StageError, ValidationError, WindcastError
from .metrics import MetricRow, build_report, score
from .pipeline import PipelineConfig, PipelineModel, fit, forecast_many, reduce_components
from .series import (
    TimeSeries,
    SyntheticSpec,
    format_timestamp,
    generate_synthetic,
    parse_csv,
    parse_timestamp,
    season_split,
    split_sizes,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
DEFAULT_LENGTH = 4380
THREADS_ENV = "WINDCAST_THREADS"


@dataclass
class RunConfig:
    input: str | None = None
    synthetic: dict | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    out: str = "."
    seed: int = 0
    horizons: list[int] = field(default_factory=lambda: [1, 2, 3, 4])

    def __post_init__(self):
        if self.input is not None and self.synthetic is not None:
            raise ConfigError("give either an input path or a synthetic spec, not both")
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigError("horizons must be positive integers")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {"input", "synthetic", "pipeline", "out", "seed", "horizons"}
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        if "pipeline" in d:
            d["pipeline"] = PipelineConfig.from_dict(d["pipeline"])
        if "horizons" in d:
            d["horizons"] = [int(h) for h in d["horizons"]]
        return cls(**d)

    def load_series(self) -> TimeSeries:
        if self.input is not None:
            return parse_csv(self.input)
        syn = dict(self.synthetic or {})
        seed = int(syn.get("seed", self.seed))
        length = int(syn.get("length", DEFAULT_LENGTH))
        return generate_synthetic(seed, length, SyntheticSpec.from_dict(syn))

    def source(self) -> dict:
        if self.input is not None:
            return {"input": self.input}
        syn = dict(self.synthetic or {})
        syn.setdefault("seed", self.seed)
        syn.setdefault("length", DEFAULT_LENGTH)
        return {"synthetic": syn}


def worker_count() -> int:
    cpus = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return cpus
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return min(cap, cpus)


def _read_json(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def resolve(args) -> RunConfig:
    """Merge the JSON run config with command-line overrides."""
    base = _read_json(args.config) if getattr(args, "config", None) else {}
    if "seed" not in base and "pipeline" in base and "seed" in base["pipeline"]:
        base["seed"] = base["pipeline"]["seed"]
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        base["out"] = args.out
    if getattr(args, "input", None) is not None:
        base.pop("synthetic", None)
        base["input"] = args.input
    if getattr(args, "synthetic", None) is not None:
        base.pop("input", None)
        base["synthetic"] = _read_json(args.synthetic)
    if getattr(args, "horizons", None):
        base["horizons"] = args.horizons
    run = RunConfig.from_dict(base)
    seed = int(run.seed)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    # one master seed drives every random choice in the run
    pipe = run.pipeline.to_dict()
    pipe["seed"] = seed
    run.pipeline = PipelineConfig.from_dict(pipe)
    return run


def _out_dir(run: RunConfig) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, run: RunConfig, files: list[str], extra: dict | None = None):
    doc = {
        "command": command,
        "version": __version__,
        "seed": run.seed,
        "source": run.source(),
        "pipeline": run.pipeline.to_dict(),
        "outputs": sorted(files),
    }
    doc.update(extra or {})
    (out / f"{command}.manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")


def _fmt(v: float) -> str:
    return repr(float(v))


# -- commands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    run = resolve(args)
    if run.input is not None:
        raise ConfigError("synth generates data; do not pass --input")
    series = run.load_series()
    out = _out_dir(run)
    series.to_csv(out / "series.csv")
    _write_manifest(out, "synth", run, ["series.csv"])
    print(f"wrote {len(series)} samples to {out / 'series.csv'}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    run = resolve(args)
    series = run.load_series()
    cfg = run.pipeline
    dec = eemd(series.values, _eemd_cfg(cfg))
    out = _out_dir(run)
    dec.to_csv(out / "imfs.csv", [format_timestamp(t) for t in series.timestamps])

    err = float(np.max(np.abs(series.values - dec.reconstruct())))
    bound = reconstruction_bound(series.values, cfg.eemd, args.tolerance)
    red = reduce_components(dec.components(), cfg)
    groups = [{"group_index": gi, "members": members, "lag": p.lag,
               "sampen": None if math.isinf(p.sampen) else p.sampen, "class": p.cls.value}
              for gi, (members, p) in enumerate(zip(red.members, red.profiles))]
    (out / "groups.json").write_text(json.dumps({"seed": run.seed, "n_imfs": dec.n_imfs,
                                                 "component_lags": red.component_lags,
                                                 "groups": groups}, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    _write_manifest(out, "decompose", run, ["imfs.csv", "groups.json"],
                    {"reconstruction_error": err, "reconstruction_bound": bound})

    print(f"imfs: {dec.n_imfs} (+ residual)")
    print(f"groups after reduction: {len(groups)}")
    for g in groups:
        se = "undefined" if g["sampen"] is None else f"{g['sampen']:.4f}"
        print(f"  group {g['group_index']}: members={g['members']} lag={g['lag']} sampen={se} "
              f"class={g['class']}")
    ok = err <= bound
    print(f"reconstruction max error: {err:.3e} (bound {bound:.3e}) {'ok' if ok else 'EXCEEDED'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def reconstruction_bound(x, eemd_cfg, tolerance: float | None = None) -> float:
    """Largest acceptable max |x - sum of components|.

    The ensemble mean of the components equals ``x`` plus the mean of the
    added noise, whose per-sample std is ``a * std(x) / sqrt(E)``; the
    default allows six of those. An explicit ``tolerance`` is taken relative
    to ``max |x|`` instead.
    """
    x = np.asarray(x, dtype=float)
    if tolerance is not None:
        return float(tolerance) * float(np.max(np.abs(x)))
    noise = eemd_cfg.noise_amplitude * float(np.std(x)) / math.sqrt(eemd_cfg.ensemble_size)
    return 6.0 * noise + 1e-9 * float(np.max(np.abs(x)))


def _eemd_cfg(cfg: PipelineConfig):
    return replace(cfg.eemd, master_seed=cfg.seed, n_jobs=worker_count())


def cmd_train(args) -> int:
    run = resolve(args)
    series = run.load_series()
    model = fit(series, run.pipeline, n_jobs=worker_count())
    out = _out_dir(run)
    model_path = out / args.model_name
    model.save(model_path)
    with open(out / "losses.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "kind", "epoch", "train_loss", "val_loss"])
        for gi, (net, hist) in enumerate(zip(model.models, model.histories)):
            for ep, tl in enumerate(hist.train):
                vl = hist.val[ep] if ep < len(hist.val) else ""
                w.writerow([gi, net.spec.kind.value, ep + 1, _fmt(tl), "" if vl == "" else _fmt(vl)])
        joint = model.joint_history
        for ep, tl in enumerate(joint.train if joint is not None else []):
            vl = joint.val[ep] if ep < len(joint.val) else None
            w.writerow(["joint", "ensemble", ep + 1, _fmt(tl), "" if vl is None else _fmt(vl)])
    _write_manifest(out, "train", run, [model_path.name, "losses.csv"])
    print(f"imfs: {model.n_imfs}, groups: {model.n_groups}")
    for gi, (p, net) in enumerate(zip(model.profiles, model.models)):
        print(f"  group {gi}: lag={p.lag} class={p.cls.value} model={net.spec.kind.value} "
              f"m={net.spec.input_len}")
    print(f"model written to {model_path}")
    return EXIT_OK


def _origins(model: PipelineModel, series: TimeSeries, mode: str) -> list[int]:
    n = model.output_len
    if mode == "last":
        return [len(series)]
    tr, va, _ = split_sizes(len(series), model.cfg.fractions)
    start = max(tr + va, model.required_history())
    if mode == "test":
        return list(range(start, len(series) - n + 1))
    raise ConfigError(f"unknown origin mode {mode!r}")


def cmd_forecast(args) -> int:
    run = resolve(args)
    model = PipelineModel.load(_existing(args.model))
    series = run.load_series()
    origins = _origins(model, series, args.origins)
    out = _out_dir(run)
    n = model.output_len
    points = forecast_many(model, series, origins, n, n_jobs=worker_count())
    rows = []
    for t, point in zip(origins, points):
        point = np.clip(point, 0.0, None) if args.clamp else point
        if not np.all(np.isfinite(point)):
            raise NumericalError(f"non-finite forecast at origin {format_timestamp(series.timestamps[t - 1])}")
        rows.append([format_timestamp(series.timestamps[t - 1])] + [_fmt(v) for v in point])
    with open(out / "forecast.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"h{j}" for j in range(1, n + 1)])
        w.writerows(rows)
    _write_manifest(out, "forecast", run, ["forecast.csv"],
                    {"model": Path(args.model).name, "model_seed": model.cfg.seed, "clamp": bool(args.clamp),
                     "origins": args.origins})
    print(f"{len(rows)} forecast rows written to {out / 'forecast.csv'}")
    return EXIT_OK


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise ValidationError(f"file not found: {path}")
    return path


def read_forecasts(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Return origin timestamps and the (origins, n) forecast matrix."""
    with open(_existing(path), encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise ValidationError(f"{path}: header must be timestamp,h1..hn")
        if header[1:] != [f"h{j}" for j in range(1, len(header))]:
            raise ValidationError(f"{path}: horizon columns must be h1..h{len(header) - 1}")
        ts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                ts.append(parse_timestamp(row[0]))
                vals.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not ts:
        raise ValidationError(f"{path}: no forecast rows")
    return np.array(ts, dtype=np.int64), np.array(vals)


def evaluate_station(forecasts_path: str, actuals: TimeSeries, horizons: list[int], station: str,
                     terrain: str, season_map=None) -> list[MetricRow]:
    """Score forecasts and the persistence baseline per horizon and season.

    Row ``timestamp`` is the forecast origin (the last observation used);
    horizon ``h`` targets ``origin + h * step``. Seasons are assigned by the
    target's calendar month.
    """
    origins, fc = read_forecasts(forecasts_path)
    if max(horizons) > fc.shape[1]:
        raise ValidationError(f"forecasts hold {fc.shape[1]} horizons, {max(horizons)} requested")
    lookup = {int(t): i for i, t in enumerate(actuals.timestamps)}
    step = actuals.step
    missing = [format_timestamp(t) for t in origins if int(t) not in lookup]
    if missing:
        raise ValidationError(f"actuals lack forecast origin {missing[0]}")
    season_of = {}
    seasons = season_split(actuals, season_map)
    for name, sub in seasons.items():
        for t in sub.timestamps:
            season_of[int(t)] = name
    rows = []
    for h in horizons:
        targets = origins + h * step
        ok = np.array([int(t) in lookup for t in targets])
        if not ok.any():
            raise ValidationError(f"no actual values cover horizon {h}")
        idx = np.array([lookup[int(t)] for t in targets[ok]])
        actual = actuals.values[idx]
        pred = fc[ok, h - 1]
        pers = actuals.values[[lookup[int(t)] for t in origins[ok]]]
        labels = np.array([season_of[int(t)] for t in targets[ok]], dtype=object)
        for season in ["all"] + list(seasons):
            sel = np.ones(labels.size, bool) if season == "all" else labels == season
            if not sel.any():
                continue
            for model_name, p in (("proposed", pred), ("persistence", pers)):
                rows.append(score(p[sel], actual[sel], station=station, terrain=terrain,
                                  season=season, horizon=int(h), model=model_name))
    return rows


def cmd_evaluate(args) -> int:
    run = resolve(args)
    forecasts = args.forecasts
    actual_paths = args.actuals
    if len(actual_paths) == 1 and len(forecasts) > 1:
        actual_paths = actual_paths * len(forecasts)
    stations = args.station or [f"station{i + 1}" for i in range(len(forecasts))]
    terrains = args.terrain or ["unknown"] * len(forecasts)
    if not len(forecasts) == len(actual_paths) == len(stations) == len(terrains):
        raise ConfigError("--forecasts, --actuals, --station and --terrain counts must match")
    rows = []
    for fpath, apath, station, terrain in zip(forecasts, actual_paths, stations, terrains):
        rows.extend(evaluate_station(fpath, parse_csv(apath), run.horizons, station, terrain))
    report = build_report(rows)
    out = _out_dir(run)
    doc = json.loads(report.to_json())
    doc["seed"] = run.seed
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report.write_csv(out / "metrics.csv")
    _write_manifest(out, "evaluate", run, ["metrics.json", "metrics.csv"])
    for r in report.rows:
        if r.season == "all":
            print(f"{r.station} h{r.horizon} {r.model:<11} nRMSE={r.nrmse:.4f} RMSE={r.rmse:.4f} MAE={r.mae:.4f}")
    for m, fd in sorted(report.deviation.items()):
        print(f"forecast deviation [{m}]: {fd:.2f}%")
    for m, rk in sorted(report.mean_ranks.items()):
        print(f"mean rank [{m}]: {rk:.3f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    default = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=default, help="run-config JSON file")
    p.add_argument("--seed", type=int, default=default, help="master seed (unsigned 64-bit)")
    p.add_argument("--out", default=default, help="output directory")


def _source(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--input", help="CSV with header timestamp,ws")
    g.add_argument("--synthetic", help="synthetic-spec JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"windcast {__version__}")
    _common(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic wind-speed series")
    _common(p, top=False)
    p.add_argument("--synthetic", help="synthetic-spec JSON file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decompose", help="EEMD, lag grouping and complexity profile")
    _common(p, top=False)
    _source(p)
    p.add_argument("--tolerance", type=float, default=None,
                   help="reconstruction bound relative to max |x| (default: six noise std of the ensemble mean)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("train", help="fit the pipeline and save the model")
    _common(p, top=False)
    _source(p)
    p.add_argument("--model-name", default="model.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast from a saved model")
    _common(p, top=False)
    _source(p)
    p.add_argument("--model", required=True, help="model artifact from the train command")
    p.add_argument("--origins", choices=["last", "test"], default="last",
                   help="forecast after the last sample, or walk forward over the test split")
    p.add_argument("--clamp", action="store_true", help="clamp forecasts at zero")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score forecasts against actuals")
    _common(p, top=False)
    p.add_argument("--forecasts", nargs="+", required=True)
    p.add_argument("--actuals", nargs="+", required=True)
    p.add_argument("--station", nargs="+")
    p.add_argument("--terrain", nargs="+", help="simple, plain or complex per station")
    p.add_argument("--horizons", nargs="+", type=int)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    return EXIT_NUMERIC if isinstance(cause, (NumericalError, ArithmeticError)) else EXIT_INPUT


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WindcastError, ValueError, ArithmeticError, OSError, KeyError) as exc:
        code = _exit_code(exc)
        print(f"windcast {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
