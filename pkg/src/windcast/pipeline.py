"""The adaptive decompose -> reduce -> classify -> train -> forecast pipeline."""

from __future__ import annotations

import base64
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .emd import EemdConfig, ImfSet, eemd, rolling_decompose
from .errors import ConfigError, HistoryTooShort, StageError, VersionMismatch, WindcastError
from .metrics import mae, nrmse, rmse
from .nets import (
    BIFEATURE_DEFAULTS,
    DAY_STRIDE,
    STANDARD_DEFAULTS,
    FeatureBatch,
    JointSpec,
    LossHistory,
    LstmNetwork,
    NetKind,
    NetworkSpec,
    feature_arrays,
    min_history,
    persistence,
    train,
    train_joint,
    warm_predict,
)
from .series import NormalizationParams, TimeSeries, split_sizes
from .stats import (
    DEFAULT_THRESHOLD,
    Complexity,
    ImfProfile,
    SampEnConfig,
    classify,
    group_by_lag,
    optimal_lag,
)

MODEL_FORMAT = "windcast-pipeline"
MODEL_VERSION = 1
MIN_INPUT_LEN = 4


@dataclass(frozen=True)
class PipelineConfig:
    eemd: EemdConfig = EemdConfig()
    sampen: SampEnConfig = SampEnConfig()
    threshold: float = DEFAULT_THRESHOLD
    m: int | str = "auto"
    n: int = 4
    standard: NetworkSpec = STANDARD_DEFAULTS
    bifeature: NetworkSpec = BIFEATURE_DEFAULTS
    seed: int = 0
    max_lag: int = 24
    significance: float = 1.96
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    group_by_lag: bool = True
    window: int | None = 512  # samples per causal re-decomposition; None keeps full history
    rolling_ensemble_size: int | None = 20  # ensemble of the re-decompositions; None: eemd's
    joint: JointSpec = JointSpec(epochs=10, learning_rate=1e-3)
    day_stride: int = DAY_STRIDE

    def __post_init__(self):
        if self.m != "auto" and (not isinstance(self.m, int) or self.m < 1):
            raise ConfigError(f"m must be 'auto' or a positive integer, got {self.m!r}")
        if self.n < 1 or self.n >= self.day_stride:
            raise ConfigError(f"n must lie in [1, {self.day_stride - 1}]")
        if self.max_lag < 1:
            raise ConfigError("max_lag must be >= 1")
        if self.window is not None and self.window < 8:
            raise ConfigError("window must hold at least 8 samples")
        if self.rolling_ensemble_size is not None and self.rolling_ensemble_size < 1:
            raise ConfigError("rolling_ensemble_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        kw = {}
        if "eemd" in d:
            kw["eemd"] = EemdConfig.from_dict(d.pop("eemd"))
        if "sampen" in d:
            kw["sampen"] = SampEnConfig(**d.pop("sampen"))
        nets = d.pop("networks", {}) or {}
        unknown_nets = set(nets) - {"standard", "bifeature"}
        if unknown_nets:
            raise ConfigError(f"unknown network entries: {sorted(unknown_nets)}")
        if "standard" in nets:
            kw["standard"] = NetworkSpec.from_dict({**STANDARD_DEFAULTS.to_dict(), **nets["standard"],
                                                    "kind": NetKind.STANDARD})
        if "bifeature" in nets:
            kw["bifeature"] = NetworkSpec.from_dict({**BIFEATURE_DEFAULTS.to_dict(), **nets["bifeature"],
                                                     "kind": NetKind.BIFEATURE})
        if "joint" in d:
            joint = dict(d.pop("joint"))
            unknown_joint = set(joint) - set(JointSpec.__dataclass_fields__)
            if unknown_joint:
                raise ConfigError(f"unknown joint keys: {sorted(unknown_joint)}")
            kw["joint"] = JointSpec(**joint)
        if "fractions" in d:
            d["fractions"] = tuple(float(f) for f in d["fractions"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(**kw, **d)

    def to_dict(self) -> dict:
        return {
            "eemd": self.eemd.to_dict(),
            "sampen": asdict(self.sampen),
            "threshold": self.threshold,
            "m": self.m,
            "n": self.n,
            "networks": {"standard": self.standard.to_dict(), "bifeature": self.bifeature.to_dict()},
            "seed": self.seed,
            "max_lag": self.max_lag,
            "significance": self.significance,
            "fractions": list(self.fractions),
            "group_by_lag": self.group_by_lag,
            "window": self.window,
            "rolling_ensemble_size": self.rolling_ensemble_size,
            "joint": asdict(self.joint),
            "day_stride": self.day_stride,
        }


def derive_seed(master: int, *path: int) -> int:
    """Stable 32-bit child seed for a position below the master seed."""
    return int(np.random.SeedSequence([master, *path]).generate_state(1)[0])


@dataclass
class PipelineModel:
    cfg: PipelineConfig
    n_imfs: int                       # k of the fit-time decomposition
    members: list[list[int]]          # component indices summed into each group
    profiles: list[ImfProfile]
    models: list[LstmNetwork]
    norm_params: list[NormalizationParams]
    component_lags: list[int]
    fit_len: int
    train_seconds: float = 0.0
    histories: list[LossHistory] = field(default_factory=list)
    joint_history: LossHistory | None = None

    def __post_init__(self):
        if not len(self.profiles) == len(self.models) == len(self.norm_params) == len(self.members):
            raise ValueError("profiles, models, norm_params and groups must align")
        for p, net in zip(self.profiles, self.models):
            if (net.spec.kind is NetKind.BIFEATURE) != p.is_complex:
                raise ValueError("model kind must be BiFeature exactly for complex groups")

    @property
    def output_len(self) -> int:
        return self.cfg.n

    @property
    def input_lens(self) -> list[int]:
        return [net.spec.input_len for net in self.models]

    @property
    def n_groups(self) -> int:
        return len(self.models)

    def required_history(self) -> int:
        return required_history(self.cfg, self.input_lens)

    def forecast(self, history, n: int | None = None) -> "ForecastResult":
        return forecast(self, history, n)

    __call__ = forecast

    # -- serialisation ---------------------------------------------------

    def to_json(self) -> str:
        def enc(a: np.ndarray) -> dict:
            a = np.ascontiguousarray(a, dtype="<f8")
            return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}

        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "package_version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "n_imfs": self.n_imfs,
            "fit_len": self.fit_len,
            "component_lags": self.component_lags,
            "groups": [
                {
                    "members": members,
                    "lag": prof.lag,
                    "sampen": None if math.isinf(prof.sampen) else prof.sampen,
                    "class": prof.cls.value,
                    "norm": {"min": norm.min, "max": norm.max},
                    "network": {"spec": net.spec.to_dict(),
                                "params": {k: enc(v) for k, v in sorted(net.params.items())}},
                }
                for members, prof, norm, net in zip(self.members, self.profiles, self.norm_params,
                                                    self.models)
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "PipelineModel":
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT:
            raise VersionMismatch("not a windcast pipeline artifact")
        if doc.get("version") != MODEL_VERSION:
            raise VersionMismatch(f"artifact version {doc.get('version')} != supported {MODEL_VERSION}")

        def dec(d: dict) -> np.ndarray:
            raw = base64.b64decode(d["data"])
            return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(float)

        cfg = PipelineConfig.from_dict(doc["config"])
        members, profiles, models, norms = [], [], [], []
        for g in doc["groups"]:
            members.append([int(i) for i in g["members"]])
            se = math.inf if g["sampen"] is None else float(g["sampen"])
            profiles.append(ImfProfile(int(g["lag"]), se, Complexity(g["class"])))
            norms.append(NormalizationParams(g["norm"]["min"], g["norm"]["max"]))
            spec = NetworkSpec.from_dict(g["network"]["spec"])
            models.append(LstmNetwork(spec, {k: dec(v) for k, v in g["network"]["params"].items()}))
        return cls(cfg, int(doc["n_imfs"]), members, profiles, models, norms,
                   [int(v) for v in doc["component_lags"]], int(doc["fit_len"]))

    @classmethod
    def load(cls, path) -> "PipelineModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class ForecastResult:
    point: np.ndarray          # (n,) m/s
    contributions: np.ndarray  # (groups, n) m/s
    timestamps: np.ndarray     # (n,) epoch seconds of each horizon


def _stage(name: str, group: int | None, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except WindcastError as exc:
        raise StageError(name, group, exc) from exc


def _is_flat(comp: np.ndarray) -> bool:
    return float(np.ptp(comp)) <= 1e-9 * max(1.0, float(np.max(np.abs(comp))))


def _component_lags(comps: np.ndarray, cfg: PipelineConfig) -> tuple[list[int], list[bool]]:
    """Optimal lag per component; flat components inherit the previous lag."""
    lags, flat = [], []
    for i, c in enumerate(comps):
        if _is_flat(c):
            flat.append(True)
            lags.append(lags[-1] if lags else 1)
        else:
            flat.append(False)
            lags.append(_stage("lag", i, optimal_lag, c, cfg.max_lag, cfg.significance))
    return lags, flat


def _ungrouped(comps: np.ndarray, lags: list[int], flat: list[bool]):
    members: list[list[int]] = []
    for i, is_flat in enumerate(flat):
        if is_flat and members:
            members[-1].append(i)
        else:
            members.append([i])
    signals = np.array([comps[idx].sum(axis=0) for idx in members])
    return signals, [lags[idx[0]] for idx in members], members


@dataclass(frozen=True)
class Reduction:
    signals: np.ndarray          # (groups, N)
    members: list[list[int]]
    profiles: list[ImfProfile]
    component_lags: list[int]


def reduce_components(comps: np.ndarray, cfg: PipelineConfig = PipelineConfig()) -> Reduction:
    """Lag per component, grouping by shared lag, then complexity profiling per group."""
    comps = np.asarray(comps, dtype=float)
    lags, flat = _component_lags(comps, cfg)
    if cfg.group_by_lag:
        signals, group_lags, members = group_by_lag(comps, lags)
    else:
        signals, group_lags, members = _ungrouped(comps, lags, flat)
    profiles = []
    for gi, (sig, lag) in enumerate(zip(signals, group_lags)):
        profiles.extend(_stage("classify", gi, classify, [sig], cfg.threshold, cfg.sampen, [lag]))
    return Reduction(signals, [list(map(int, m)) for m in members], profiles, [int(v) for v in lags])


def _input_len(cfg: PipelineConfig, lag: int) -> int:
    return max(lag, MIN_INPUT_LEN) if cfg.m == "auto" else int(cfg.m)


def required_history(cfg: PipelineConfig, input_lens: Sequence[int]) -> int:
    """Samples every group needs behind a forecast origin."""
    need = max(min_history(m, cfg.day_stride) for m in input_lens)
    return max(need, 8)


def rolling_config(cfg: PipelineConfig, n_imfs: int) -> EemdConfig:
    """EEMD settings of the causal re-decompositions, pinned to the fit-time mode count."""
    size = cfg.eemd.ensemble_size if cfg.rolling_ensemble_size is None else cfg.rolling_ensemble_size
    return replace(cfg.eemd, ensemble_size=size, master_seed=cfg.seed, num_imfs=max(n_imfs, 1), n_jobs=1)


def edge_slab(values, t: int, ecfg: EemdConfig, window: int | None, keep: int) -> np.ndarray:
    """Last ``keep`` samples of every component of the decomposition seen at origin ``t``.

    That decomposition covers ``values[:t]`` (capped to ``window`` samples),
    i.e. exactly what :func:`~windcast.emd.rolling_decompose` produces when
    ``values[t - 1]`` arrives.
    """
    values = np.asarray(values, dtype=float)
    if not keep <= t <= values.size:
        raise HistoryTooShort(keep, t)
    dec = rolling_decompose(values[:t - 1], values[t - 1], ecfg, window)
    return dec.components()[:, -keep:]


def _slab_chunk(values, origins, ecfg, window, keep):
    return [edge_slab(values, t, ecfg, window, keep) for t in origins]


def edge_slabs(values, origins: Sequence[int], ecfg: EemdConfig, window: int | None, keep: int,
               n_jobs: int = 1) -> dict[int, np.ndarray]:
    """:func:`edge_slab` for many origins; results do not depend on ``n_jobs``."""
    values = np.asarray(values, dtype=float)
    origins = sorted({int(t) for t in origins})
    if n_jobs == 1 or len(origins) < 2:
        slabs = _slab_chunk(values, origins, ecfg, window, keep)
    else:
        chunks = [c.tolist() for c in np.array_split(np.array(origins), min(len(origins), 8 * abs(n_jobs)))]
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_slab_chunk)(values[:c[-1]], c, ecfg, window, keep) for c in chunks)
        slabs = [sl for part in parts for sl in part]
    return dict(zip(origins, slabs))


def group_rows(slabs: dict[int, np.ndarray], origins: Sequence[int], members: Sequence[int],
               norm: NormalizationParams, spec: NetworkSpec, n: int, day_stride: int) -> FeatureBatch:
    """Normalised feature rows of one group, one per origin, from the origin's own slab.

    Targets are left unknown (NaN); callers attach them.
    """
    parts = []
    for t in origins:
        sig = slabs[int(t)][list(members)].sum(axis=0)
        parts.append(feature_arrays(norm.apply(sig), spec.kind, spec.input_len, n, day_stride,
                                    targets=[sig.size]))
    fb = FeatureBatch.concat(parts)
    return FeatureBatch(fb.forward_in, fb.backward_in, fb.target, np.asarray(origins, dtype=int))


@dataclass(frozen=True)
class FitData:
    """Decompositions a fit needs; independent of grouping and network settings."""

    values: np.ndarray        # the train + validation span
    n_train: int
    imfset: ImfSet            # fit-time decomposition
    origins: np.ndarray       # forecast origins with features
    slabs: dict               # origin -> (k + 1, keep) causal components
    keep: int
    key: tuple                # settings the decompositions depend on


def _fit_key(cfg: PipelineConfig) -> tuple:
    return (json.dumps(cfg.eemd.to_dict(), sort_keys=True), cfg.seed, cfg.window, cfg.rolling_ensemble_size,
            cfg.fractions, cfg.n, cfg.m, cfg.max_lag, cfg.significance, cfg.day_stride)


def network_specs(profiles: Sequence[ImfProfile], cfg: PipelineConfig) -> list[NetworkSpec]:
    """BiFeature for complex groups, Standard otherwise, sized from each group's lag."""
    return [replace(cfg.bifeature if prof.is_complex else cfg.standard, input_len=_input_len(cfg, prof.lag),
                    output_len=cfg.n, seed=derive_seed(cfg.seed, gi))
            for gi, prof in enumerate(profiles)]


def prepare_fit(series, cfg: PipelineConfig = PipelineConfig(), n_jobs: int = 1) -> FitData:
    """Fit-time decomposition plus one causal re-decomposition per training origin.

    The slabs keep enough samples for the longest input any component lag
    can ask for, so the same data serves grouped and ungrouped fits.
    """
    values = np.asarray(getattr(series, "values", series), dtype=float)
    n_train, n_val, _ = split_sizes(values.size, cfg.fractions)
    fit_values = values[:n_train + n_val]
    eemd_cfg = replace(cfg.eemd, master_seed=cfg.seed, n_jobs=n_jobs)
    imfset = _stage("eemd", None, eemd, fit_values, eemd_cfg)
    lags, _ = _component_lags(imfset.components(), cfg)
    keep = required_history(cfg, [_input_len(cfg, lag) for lag in lags])
    origins = np.arange(keep, fit_values.size - cfg.n + 1)
    if origins.size == 0 or not (origins + cfg.n - 1 < n_train).any():
        raise StageError("features", None, HistoryTooShort(keep + cfg.n, fit_values.size))
    slabs = _stage("rolling", None, edge_slabs, fit_values, origins, rolling_config(cfg, imfset.n_imfs),
                   cfg.window, keep, n_jobs)
    return FitData(fit_values, n_train, imfset, origins, slabs, keep, _fit_key(cfg))


def fit(series, cfg: PipelineConfig = PipelineConfig(), n_jobs: int = 1, data: FitData | None = None
        ) -> PipelineModel:
    """Decompose, reduce, classify and train one network per component group.

    The fit-time decomposition of the train and validation span fixes the
    mode count, the lag groups, their complexity classes and each group's
    targets. Network inputs come from the decomposition available at each
    origin (the causal re-decomposition used when forecasting), so training
    and forecasting see the same kind of inputs. After per-group training
    the networks are tuned together on the error of their summed output.
    Only the leading ``fractions[0] + fractions[1]`` share of ``series`` is
    touched; the tail is left for testing. ``data`` from :func:`prepare_fit`
    with matching settings skips the decompositions.
    """
    if data is None:
        data = prepare_fit(series, cfg, n_jobs)
    elif data.key != _fit_key(cfg):
        raise ConfigError("prepared fit data was built with different decomposition settings")
    n = cfg.n
    n_train, origins, slabs = data.n_train, data.origins, data.slabs
    red = reduce_components(data.imfset.components(), cfg)
    signals, members, profiles, lags = red.signals, red.members, red.profiles, red.component_lags
    specs = network_specs(profiles, cfg)
    norms = [_stage("normalize", gi, NormalizationParams.fit, sig[:n_train]) for gi, sig in enumerate(signals)]

    is_train = origins + n - 1 < n_train
    is_val = origins >= n_train
    ahead = origins[:, None] + np.arange(n)[None, :]
    jobs, parts = [], []
    for gi, (sig, spec, norm, mem) in enumerate(zip(signals, specs, norms, members)):
        rows = _stage("features", gi, group_rows, slabs, origins, mem, norm, spec, n, cfg.day_stride)
        rows = FeatureBatch(rows.forward_in, rows.backward_in, norm.apply(sig[ahead]), rows.index)
        parts.append((rows.take(is_train), rows.take(is_val)))
        jobs.append((gi, spec, parts[-1][0], parts[-1][1]))

    started = time.perf_counter()
    if n_jobs == 1:
        trained = [_train_group(*job) for job in jobs]
    else:
        trained = Parallel(n_jobs=n_jobs)(delayed(_train_group)(*job) for job in jobs)
    nets = [net for net, _ in trained]
    joint_history = None
    if cfg.joint.epochs > 0:
        target = data.values[ahead]
        has_val = bool(is_val.any())
        joint_history = _stage(
            "joint", None, train_joint, nets, [tr for tr, _ in parts], target[is_train],
            [nm.max - nm.min for nm in norms], [nm.min for nm in norms],
            replace(cfg.joint, seed=derive_seed(cfg.seed, len(nets))),
            [va for _, va in parts] if has_val else None, target[is_val] if has_val else None)
    train_seconds = time.perf_counter() - started

    return PipelineModel(
        cfg=cfg,
        n_imfs=data.imfset.n_imfs,
        members=[list(map(int, m)) for m in members],
        profiles=profiles,
        models=nets,
        norm_params=norms,
        component_lags=[int(v) for v in lags],
        fit_len=data.values.size,
        train_seconds=train_seconds,
        histories=[hist for _, hist in trained],
        joint_history=joint_history,
    )


def _train_group(gi: int, spec: NetworkSpec, train_rows, val_rows):
    net = LstmNetwork(spec)
    return _stage("train", gi, train, net, train_rows, val_rows if len(val_rows) else None)


def _chain_targets(net: LstmNetwork, t: int, first: int) -> list[int]:
    # the forecast origin plus the earlier origins its state warm-up replays
    depth = net.spec.warmup if net.spec.stateful else 0
    return [t - j * net.spec.batch_size for j in range(depth, -1, -1) if t - j * net.spec.batch_size >= first]


def _needed_origins(model: PipelineModel, origins: Sequence[int]) -> list[int]:
    first = model.required_history()
    need = set()
    for t in origins:
        for net in model.models:
            need.update(_chain_targets(net, int(t), first))
    return sorted(need)


def _contributions(model: PipelineModel, slabs: dict[int, np.ndarray], t: int, n: int) -> np.ndarray:
    first = model.required_history()
    out = np.empty((model.n_groups, n))
    for gi, (members, net, norm) in enumerate(zip(model.members, model.models, model.norm_params)):
        rows = group_rows(slabs, _chain_targets(net, t, first), members, norm, net.spec, model.output_len,
                          model.cfg.day_stride)
        pred = warm_predict(net, rows, rows.take(slice(-1, None)))[0]
        out[gi] = norm.invert(pred[:n])
    return out


def _check_history(model: PipelineModel, length: int, n: int) -> None:
    if not 1 <= n <= model.output_len:
        raise ConfigError(f"horizon must lie in [1, {model.output_len}]")
    need = model.required_history()
    if model.cfg.window is not None and model.cfg.window < need:
        raise ConfigError(f"rolling window {model.cfg.window} is shorter than the {need} samples needed")
    if length < need:
        raise HistoryTooShort(need, length)


def forecast(model: PipelineModel, history, n: int | None = None) -> ForecastResult:
    """Forecast the next ``n`` values after ``history``.

    The most recent observation is appended to the rest of the history and
    the updated series is decomposed afresh with the fit-time mode count;
    each group's network then predicts from its own component signal and the
    de-normalised group predictions are summed. Stateful networks first
    replay their warm-up origins, each from its own re-decomposition.
    """
    n = model.output_len if n is None else int(n)
    if isinstance(history, TimeSeries):
        values, ts = history.values, history.timestamps
        step = history.step
    else:
        values = np.asarray(history, dtype=float)
        ts, step = np.arange(values.size, dtype=np.int64), 1
    _check_history(model, values.size, n)
    t = values.size
    slabs = edge_slabs(values, _needed_origins(model, [t]), rolling_config(model.cfg, model.n_imfs),
                       model.cfg.window, model.required_history())
    contributions = _contributions(model, slabs, t, n)
    point = contributions.sum(axis=0)
    horizon_ts = ts[-1] + step * np.arange(1, n + 1, dtype=np.int64)
    return ForecastResult(point, contributions, horizon_ts)


def forecast_many(model: PipelineModel, series, origins: Sequence[int], n: int | None = None,
                  n_jobs: int = 1) -> np.ndarray:
    """Point forecasts issued at each origin ``t`` from ``series[:t]``, shape (origins, n).

    Row ``i`` equals ``forecast(model, series[:origins[i]], n).point``; the
    re-decompositions shared between origins are computed once.
    """
    values = np.asarray(getattr(series, "values", series), dtype=float)
    n = model.output_len if n is None else int(n)
    origins = [int(t) for t in origins]
    if not origins:
        return np.empty((0, n))
    _check_history(model, min(origins), n)
    if max(origins) > values.size:
        raise ConfigError("forecast origins lie beyond the series")
    slabs = edge_slabs(values, _needed_origins(model, origins), rolling_config(model.cfg, model.n_imfs),
                       model.cfg.window, model.required_history(), n_jobs)
    return np.array([_contributions(model, slabs, t, n).sum(axis=0) for t in origins])


class PersistenceModel:
    """Baseline with the same call signature as a fitted pipeline."""

    def __init__(self, output_len: int = 4):
        self.output_len = output_len

    def required_history(self) -> int:
        return 1

    def __call__(self, history, n: int | None = None) -> np.ndarray:
        return persistence(history, self.output_len if n is None else n)


@dataclass
class HorizonTable:
    horizons: list[int]
    mae: list[float]
    rmse: list[float]
    nrmse: list[float]
    origins: np.ndarray      # epoch seconds of the last observation for each forecast
    forecasts: np.ndarray    # (origins, n)
    actuals: np.ndarray      # (origins, n)

    def row(self, horizon: int) -> dict:
        j = self.horizons.index(horizon)
        return {"horizon": horizon, "mae": self.mae[j], "rmse": self.rmse[j], "nrmse": self.nrmse[j]}


def _point(out) -> np.ndarray:
    return np.asarray(getattr(out, "point", out), dtype=float)


def _forecast_origin(model, series: TimeSeries, t: int, n: int) -> np.ndarray:
    return _point(model(series[:t], n))


def multi_step_eval(model, series: TimeSeries, horizons: Sequence[int] = (1, 2, 3, 4),
                    start: int | None = None, stop: int | None = None, n_jobs: int = 1) -> HorizonTable:
    """Walk-forward evaluation over origins ``start..stop``.

    At origin ``t`` the model sees ``series[:t]`` only and issues a
    ``max(horizons)``-step forecast that is scored against
    ``series[t:t + max(horizons)]``. ``model`` may be a fitted
    :class:`PipelineModel` or any callable ``(history, n) -> values``.
    ``start`` defaults to the beginning of the test partition.
    """
    horizons = sorted(int(h) for h in horizons)
    n = horizons[-1]
    if start is None:
        fractions = model.cfg.fractions if isinstance(model, PipelineModel) else (0.7, 0.1, 0.2)
        tr, va, _ = split_sizes(len(series), fractions)
        start = tr + va
    stop = len(series) - n + 1 if stop is None else min(stop, len(series) - n + 1)
    if stop <= start:
        raise HistoryTooShort(start + n, len(series))
    origins = list(range(start, stop))
    if isinstance(model, PipelineModel):
        preds = forecast_many(model, series, origins, n, n_jobs)
    elif n_jobs == 1:
        preds = [_forecast_origin(model, series, t, n) for t in origins]
    else:
        preds = Parallel(n_jobs=n_jobs)(delayed(_forecast_origin)(model, series, t, n) for t in origins)
    forecasts = np.array(preds)
    actuals = np.array([series.values[t:t + n] for t in origins])
    table = HorizonTable(horizons, [], [], [], series.timestamps[np.array(origins) - 1], forecasts, actuals)
    for h in horizons:
        table.mae.append(mae(forecasts[:, h - 1], actuals[:, h - 1]))
        table.rmse.append(rmse(forecasts[:, h - 1], actuals[:, h - 1]))
        table.nrmse.append(nrmse(forecasts[:, h - 1], actuals[:, h - 1]))
    return table
