import csv
import hashlib
import json

import numpy as np
import pytest

from windcast.cli import RunConfig, build_parser, main, worker_count
from windcast.errors import ConfigError
from windcast.metrics import forecast_deviation
from windcast.series import TimeSeries, format_timestamp, generate_synthetic, parse_csv, parse_timestamp

TINY = {
    "synthetic": {"seed": 7, "length": 600},
    "pipeline": {
        "eemd": {"ensemble_size": 4},
        "max_lag": 6,
        "window": 200,
        "rolling_ensemble_size": 2,
        "joint": {"epochs": 2},
        "networks": {
            "standard": {"layers": [6], "epochs": 2, "batch_size": 32, "warmup": 2},
            "bifeature": {"layers": [5], "epochs": 2, "batch_size": 32, "warmup": 2},
        },
    },
}


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_json(root / "run.json", TINY)
    assert main(["train", "--config", cfg, "--seed", "11", "--out", str(root / "a")]) == 0
    return root, cfg


def test_synth_and_seed_in_manifest(tmp_path):
    assert main(["synth", "--seed", "5", "--out", str(tmp_path)]) == 0
    s = parse_csv(tmp_path / "series.csv")
    assert len(s) == 4380
    assert np.array_equal(s.values, generate_synthetic(5, 4380).values)
    manifest = json.loads((tmp_path / "synth.manifest.json").read_text())
    assert manifest["seed"] == 5


def test_decompose_outputs_and_determinism(tmp_path, capsys):
    cfg = write_json(tmp_path / "run.json", TINY)
    for d in ("a", "b"):
        assert main(["decompose", "--config", cfg, "--seed", "3", "--out", str(tmp_path / d)]) == 0
    assert digest(tmp_path / "a" / "imfs.csv") == digest(tmp_path / "b" / "imfs.csv")
    text = capsys.readouterr().out
    assert "imfs:" in text and "groups after reduction:" in text and "reconstruction max error" in text
    groups = json.loads((tmp_path / "a" / "groups.json").read_text())
    assert groups["seed"] == 3 and all("lag" in g and "sampen" in g for g in groups["groups"])
    header = (tmp_path / "a" / "imfs.csv").read_text().splitlines()[0]
    assert header.startswith("t,imf_1") and header.endswith("residual")


def test_decompose_tolerance_exceeded_exits_3(tmp_path):
    doc = dict(TINY, synthetic={"seed": 7, "length": 300})
    cfg = write_json(tmp_path / "run.json", doc)
    assert main(["decompose", "--config", cfg, "--tolerance", "-1", "--out", str(tmp_path)]) == 3


def test_missing_input_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["decompose", "--input", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_dropout_one_rejected(tmp_path, capsys):
    doc = json.loads(json.dumps(TINY))
    doc["pipeline"]["networks"]["standard"]["dropout"] = 1.0
    cfg = write_json(tmp_path / "run.json", doc)
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "dropout" in capsys.readouterr().err
    assert not (tmp_path / "model.json").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_exit_3(tmp_path):
    doc = json.loads(json.dumps(TINY))
    for kind in ("standard", "bifeature"):
        doc["pipeline"]["networks"][kind]["learning_rate"] = 1e308
    cfg = write_json(tmp_path / "run.json", doc)
    assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_train_outputs_and_determinism(trained):
    root, cfg = trained
    assert main(["train", "--config", cfg, "--seed", "11", "--out", str(root / "b")]) == 0
    assert digest(root / "a" / "model.json") == digest(root / "b" / "model.json")
    assert digest(root / "a" / "losses.csv") == digest(root / "b" / "losses.csv")
    model = json.loads((root / "a" / "model.json").read_text())
    assert model["seed"] == 11
    with open(root / "a" / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"group", "kind", "epoch", "train_loss", "val_loss"}
    assert len(rows) == 2 * len(model["groups"]) + 2
    assert [r["kind"] for r in rows[-2:]] == ["ensemble", "ensemble"]


def test_forecast_columns_clamp_and_determinism(trained):
    root, cfg = trained
    model = str(root / "a" / "model.json")
    for d in ("f1", "f2"):
        assert main(["forecast", "--config", cfg, "--seed", "11", "--model", model, "--origins", "test",
                     "--clamp", "--out", str(root / d)]) == 0
    path = root / "f1" / "forecast.csv"
    assert digest(path) == digest(root / "f2" / "forecast.csv")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["timestamp", "h1", "h2", "h3", "h4"]
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert len(vals) == 600 - 480 - 3
    assert np.all(np.isfinite(vals)) and np.all(vals >= 0)
    series = generate_synthetic(7, 600)
    assert parse_timestamp(rows[1][0]) == series.timestamps[479]


def test_forecast_short_history_exit_2(trained, tmp_path, capsys):
    root, _ = trained
    short = TimeSeries.from_values(generate_synthetic(1, 60).values[:20])
    short.to_csv(tmp_path / "short.csv")
    code = main(["forecast", "--input", str(tmp_path / "short.csv"), "--model", str(root / "a" / "model.json"),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "at least" in capsys.readouterr().err


def write_forecasts(path, series, origins, fn):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "h1", "h2", "h3", "h4"])
        for t in origins:
            w.writerow([format_timestamp(series.timestamps[t - 1])] + [repr(float(v)) for v in fn(t)])


def test_evaluate_oracle_and_persistence(tmp_path):
    series = generate_synthetic(2, 24 * 200)
    series.to_csv(tmp_path / "actual.csv")
    origins = range(100, len(series) - 4)
    write_forecasts(tmp_path / "oracle.csv", series, origins, lambda t: series.values[t:t + 4])
    write_forecasts(tmp_path / "noisy.csv", series, origins, lambda t: series.values[t:t + 4] + 0.5)
    code = main(["evaluate", "--forecasts", str(tmp_path / "oracle.csv"), str(tmp_path / "noisy.csv"),
                 "--actuals", str(tmp_path / "actual.csv"), "--station", "s1", "s2",
                 "--terrain", "simple", "complex", "--seed", "4", "--out", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert doc["seed"] == 4
    rows = doc["rows"]
    oracle = [r for r in rows if r["station"] == "s1" and r["model"] == "proposed"]
    assert oracle and all(r["mae"] == 0 and r["rmse"] == 0 and r["nrmse"] == 0 for r in oracle)
    assert {r["model"] for r in rows} == {"proposed", "persistence"}
    assert {r["horizon"] for r in rows} == {1, 2, 3, 4}
    assert {r["season"] for r in rows} >= {"all", "winter", "summer"}
    pers = [r for r in rows if r["station"] == "s1" and r["model"] == "persistence" and r["season"] == "all"]
    for r in pers:
        h = r["horizon"]
        err = series.values[np.array(origins) + h - 1] - series.values[np.array(origins) - 1]
        assert abs(r["rmse"] - np.sqrt(np.mean(err ** 2))) < 1e-9
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("station,terrain,season,horizon,model,mae,rmse,nrmse")
    assert doc["mean_rank"]["proposed"] < doc["mean_rank"]["persistence"]


def test_evaluate_fd_reproduces_reference(tmp_path):
    assert 9.01 <= forecast_deviation([0.1222], [0.2014]) <= 9.03


def test_run_config_rules(monkeypatch):
    with pytest.raises(ConfigError):
        RunConfig(input="a.csv", synthetic={})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"inputs": "x"})
    monkeypatch.setenv("WINDCAST_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("WINDCAST_THREADS", "zero")
    with pytest.raises(ConfigError):
        worker_count()
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--input", "a", "--synthetic", "b"])


def test_bad_seed_exit_2(tmp_path):
    assert main(["synth", "--seed", "-1", "--out", str(tmp_path)]) == 2
