import json

import numpy as np
import pytest

from deeppce import circuit, data
from deeppce.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Dataset + trained model produced through the CLI itself, reused below."""
    root = tmp_path_factory.mktemp("cli")
    rc = main([
        "gen-data", "--problem", "quadratic", "--n", "150", "--d-in", "4",
        "--d-out", "2", "--seed", "3", "--out", str(root / "data"),
    ])
    assert rc == 0
    cfg = {
        "num_sums": 2, "scope_size": 2, "max_order": 2, "learning_rate": 5e-3,
        "batch_size": 16, "max_epochs": 3, "patience": 3, "seed": 1, "restarts": 1,
    }
    (root / "train.json").write_text(json.dumps(cfg))
    rc = main([
        "train", "--config", str(root / "train.json"),
        "--data", str(root / "data" / "dataset.dpt"), "--out", str(root / "run"),
    ])
    assert rc == 0
    return root


def test_gen_data_writes_loadable_tensor_and_manifest(tmp_path, capsys):
    out = tmp_path / "d1"
    rc = main(["gen-data", "--problem", "quadratic", "--n", "20", "--d-in", "3",
               "--d-out", "1", "--seed", "5", "--out", str(out)])
    assert rc == 0
    assert "wrote" in capsys.readouterr().out
    ds = data.load_tensor(out / "dataset.dpt")
    assert len(ds) == 20 and ds.d_in == 3 and ds.d_out == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert manifest["settings"]["seed"] == 5
    assert manifest["outputs"] == ["dataset.dpt"]
    assert "deeppce" in manifest["versions"]

    again = tmp_path / "d2"
    main(["gen-data", "--problem", "quadratic", "--n", "20", "--d-in", "3",
          "--d-out", "1", "--seed", "5", "--out", str(again)])
    assert (out / "dataset.dpt").read_bytes() == (again / "dataset.dpt").read_bytes()


def test_gen_data_csv_format(tmp_path):
    out = tmp_path / "csv"
    rc = main(["gen-data", "--problem", "100d", "--n", "5", "--seed", "2",
               "--out", str(out), "--format", "csv"])
    assert rc == 0
    ds = data.load_csv(out / "dataset.csv")
    assert ds.d_in == 100 and len(ds) == 5
    assert ds.marginals[19] == {"dist": "uniform", "low": 1.0, "high": 3.0}


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--problem", "100d"])  # missing --n/--out
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("usage-error:")
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"max_epoch": 5}))
    rc = main(["train", "--config", str(tmp_path / "bad.json"),
               "--data", "whatever.dpt", "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("config-error:") and "max_epoch" in err


def test_not_json_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{nope")
    rc = main(["train", "--config", str(tmp_path / "bad.json"),
               "--data", "x.dpt", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("config-error:")


def test_missing_dataset_is_data_error(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text("{}")
    rc = main(["train", "--config", str(tmp_path / "cfg.json"),
               "--data", str(tmp_path / "absent.dpt"), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("data-error:")


def test_missing_model_is_io_error(workdir, capsys):
    rc = main(["predict", "--model", str(workdir / "nope.dpc"),
               "--data", str(workdir / "data" / "dataset.dpt"),
               "--out", str(workdir / "p0")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("io-error:")


def test_train_artifacts(workdir):
    run = workdir / "run"
    model = circuit.load(run / "model.dpc")
    assert model.d_in == 4 and model.d_out == 2
    report = json.loads((run / "train_report.json").read_text())
    assert report["best_restart"] == 0
    assert len(report["restarts"][0]["val_curve"]) >= 1
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert set(manifest["outputs"]) == {"model.dpc", "train_report.json"}


def test_predict_writes_metrics(workdir, capsys):
    out = workdir / "pred"
    rc = main(["predict", "--model", str(workdir / "run" / "model.dpc"),
               "--data", str(workdir / "data" / "dataset.dpt"), "--out", str(out)])
    assert rc == 0
    assert "relative MSE" in capsys.readouterr().out
    lines = (out / "predictions.csv").read_text().strip().split("\n")
    assert lines[0] == "yhat_1,yhat_2"
    assert len(lines) == 151
    first = [float(c) for c in lines[1].split(",")]  # parseable numbers
    assert all(np.isfinite(first))
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["relative_mse"]
    assert metrics["mse"] >= 0.0


def test_predict_rejects_dimension_mismatch(workdir, tmp_path, capsys):
    main(["gen-data", "--problem", "quadratic", "--n", "10", "--d-in", "3",
          "--d-out", "1", "--seed", "0", "--out", str(tmp_path)])
    rc = main(["predict", "--model", str(workdir / "run" / "model.dpc"),
               "--data", str(tmp_path / "dataset.dpt"), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("data-error:")


def test_moments_queries(workdir, capsys):
    model_path = str(workdir / "run" / "model.dpc")
    rc = main(["moments", "--model", model_path, "--query", "mean"])
    assert rc == 0
    result = json.loads(capsys.readouterr().out)
    assert result["query"] == "mean" and len(result["value"]) == 2

    rc = main(["moments", "--model", model_path, "--query", "cond-mean",
               "--condition", "1=0.5,3=-1.2"])
    assert rc == 0
    result = json.loads(capsys.readouterr().out)
    assert result["condition"] == {"1": 0.5, "3": -1.2}

    out = workdir / "mom"
    rc = main(["moments", "--model", model_path, "--query", "cov-cond-exp",
               "--set", "1,2", "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    saved = json.loads((out / "moments.json").read_text())
    assert saved["set"] == [1, 2]
    arr = np.asarray(saved["value"])
    assert arr.shape == (2, 2)
    assert (out / "manifest.json").exists()


def test_moments_argument_errors(workdir, capsys):
    model_path = str(workdir / "run" / "model.dpc")
    rc = main(["moments", "--model", model_path, "--query", "cond-mean"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("argument-error:")
    rc = main(["moments", "--model", model_path, "--query", "cov-cond-exp",
               "--set", "0,2"])
    assert rc == 1
    assert "outside 1..4" in capsys.readouterr().err
    rc = main(["moments", "--model", model_path, "--query", "cond-mean",
               "--condition", "1:0.5"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("argument-error:")


def test_sobol_command(workdir, capsys):
    model_path = str(workdir / "run" / "model.dpc")
    rc = main(["sobol", "--model", model_path])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    indices = np.asarray(payload["indices"])
    assert indices.shape == (2, 4)
    assert "mc_baseline" not in payload
    assert payload["analytic_seconds"] > 0.0

    out = workdir / "sob"
    rc = main(["sobol", "--model", model_path, "--normalize-sum",
               "--mc-baseline", "6000", "--seed", "4", "--out", str(out)])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    sums = np.asarray(payload["indices"]).sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    base = payload["mc_baseline"]
    assert base["n_evals"] == 6000 // 6 * 6
    assert base["wall_seconds"] > 0.0 and base["speedup"] > 0.0
    assert (out / "sobol.json").exists() and (out / "manifest.json").exists()


def test_mc_check_command(workdir, capsys):
    model_path = str(workdir / "run" / "model.dpc")
    out = workdir / "mc"
    rc = main(["mc-check", "--model", model_path, "--runs", "3",
               "--sizes", "400,800", "--set", "1,2", "--out", str(out)])
    assert rc == 0
    lines = [l for l in capsys.readouterr().out.strip().split("\n") if "min p" in l]
    assert len(lines) == 10  # five queries at two sizes
    report = json.loads((out / "mc_report.json").read_text())
    assert report["subset"] == [0, 1]
    assert len(report["queries"]) == 5

    rc = main(["mc-check", "--model", model_path, "--runs", "1"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("argument-error:")
    rc = main(["mc-check", "--model", model_path, "--sizes", "abc"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("argument-error:")
