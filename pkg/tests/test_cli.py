import csv
import subprocess
import sys

import pytest

from smartrul.cli import EXIT_CHECK, EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from smartrul.synth import read_truth

EVAL_DAY = "2017-11-27"


@pytest.fixture(scope="module")
def fleet_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fleet")
    assert main(["synth", "--devices", "40", "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def model_file(fleet_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--data", str(fleet_dir), "--hidden", "8", "--epochs", "2",
                 "--failed-before", EVAL_DAY, "--out", str(out)])
    assert code == EXIT_OK
    return out / "model.txt"


def test_synth_writes_day_files_and_truth(fleet_dir):
    days = sorted(p.name for p in fleet_dir.glob("2017-*.csv"))
    assert days[0] == "2017-01-01.csv"
    truth = read_truth(fleet_dir / "truth.csv")
    assert len(truth) == 40


def test_synth_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--devices", "3", "--seed", "2", "--out", str(tmp_path / d)]) == EXIT_OK
    a = {p.name: p.read_bytes() for p in (tmp_path / "a").iterdir()}
    b = {p.name: p.read_bytes() for p in (tmp_path / "b").iterdir()}
    assert a == b


def test_ingest_then_cache_input(fleet_dir, tmp_path):
    assert main(["ingest", "--data", str(fleet_dir), "--out", str(tmp_path)]) == EXIT_OK
    assert "devices" in (tmp_path / "ingest_summary.txt").read_text()
    cache = tmp_path / "histories.csv"
    assert main(["ingest", "--data", str(cache), "--out", str(tmp_path / "again")]) == EXIT_OK


def test_features(fleet_dir, tmp_path):
    assert main(["features", "--data", str(fleet_dir), "--k", "3", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "feature_scores.csv")))
    assert len(rows) == 5


def test_train_outputs_are_reproducible(fleet_dir, model_file, tmp_path):
    code = main(["train", "--data", str(fleet_dir), "--hidden", "8", "--epochs", "2",
                 "--failed-before", EVAL_DAY, "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "model.txt").read_bytes() == model_file.read_bytes()
    assert (model_file.parent / "train_log.csv").is_file()


def test_simulate_and_evaluate_preds(fleet_dir, model_file, tmp_path):
    code = main(["simulate", "--data", str(fleet_dir), "--model-file", str(model_file),
                 "--offsets", "5,20", "--strategy", "1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    preds = tmp_path / "predictions.csv"
    assert len(preds.read_text().splitlines()) == 1 + 80
    code = main(["evaluate", "--preds", str(preds), "--horizon", "10", "--out", str(tmp_path / "ev")])
    assert code == EXIT_OK
    assert "precision" in (tmp_path / "ev" / "metrics_summary.txt").read_text()


def test_evaluate_over_days_is_reproducible(fleet_dir, model_file, tmp_path):
    args = ["evaluate", "--data", str(fleet_dir), "--model-file", str(model_file),
            "--start", EVAL_DAY, "--days", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("metrics.csv", "metrics_summary.txt", "predictions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len((tmp_path / "a" / "metrics.csv").read_text().splitlines()) == 4


def test_transfer(fleet_dir, model_file, tmp_path):
    other = tmp_path / "b"
    assert main(["synth", "--devices", "20", "--seed", "8", "--scale", "1,30",
                 "--drive-model", "ST8000DM002", "--out", str(other)]) == EXIT_OK
    code = main(["transfer", "--data", str(other), "--model-file", str(model_file),
                 "--source-model", "ST4000DM000", "--start", EVAL_DAY, "--days", "2",
                 "--quantile", "0.8", "--out", str(tmp_path)])
    assert code == EXIT_OK
    text = (tmp_path / "transfer.txt").read_text()
    assert "ST8000DM002" in text and "0.8" in text


def test_gradcheck_exit_codes(tmp_path, capsys):
    assert main(["gradcheck", "--hidden", "4", "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    assert "pass" in capsys.readouterr().out
    assert main(["gradcheck", "--tolerance", "0", "--out", str(tmp_path)]) == EXIT_CHECK


def test_sweep(fleet_dir, tmp_path):
    code = main(["sweep", "--data", str(fleet_dir), "--axis", "dropout", "--values", "0,0.3",
                 "--hidden", "4", "--epochs", "1", "--failed-before", EVAL_DAY, "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert len((tmp_path / "sweep_dropout.csv").read_text().splitlines()) == 3


def test_config_file_sets_defaults(fleet_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("devices = 2\nmissing-rate = 0.1\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "f")]) == EXIT_OK
    assert len(read_truth(tmp_path / "f" / "truth.csv")) == 2
    assert main(["synth", "--config", str(cfg), "--devices", "3", "--out", str(tmp_path / "g")]) == EXIT_OK
    assert len(read_truth(tmp_path / "g" / "truth.csv")) == 3
    cfg.write_text("colour = red\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["synth", "--no-such-flag"],
    ["simulate", "--data", "x", "--model-file", "m"],
    ["evaluate"],
    ["gradcheck", "--hidden", "0"],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv and argv[0] in ("evaluate", "gradcheck") else [])) == EXIT_USAGE


@pytest.mark.parametrize("make_input", [
    lambda p: p / "missing-dir",
    lambda p: (p / "bad.csv").write_text("date,serial_number\n") and p / "bad.csv",
    lambda p: (p / "empty").mkdir() or p / "empty",
])
def test_data_errors(make_input, tmp_path):
    path = make_input(tmp_path)
    assert main(["ingest", "--data", str(path), "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_synth_rejects_bad_config_as_data_error(tmp_path):
    assert main(["synth", "--devices", "0", "--out", str(tmp_path)]) == EXIT_DATA


def test_console_script_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "smartrul.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("smartrul ")
