import json

import numpy as np
import pytest

import main
import modules.core.gppca_core as gppca_core
from modules.data.matrix_io import read_matrix, write_matrix
from modules.utils.errors import GPPCANumericError


def _simulate(tmp_path):
    out = tmp_path / "sim"
    code = main.main(["simulate", "--scenario", "demo", "--replicates", "1", "--seed", "2", "--out", str(out)])
    assert code == 0
    return out / "r000"


def test_simulate_writes_one_folder_per_replicate(tmp_path):
    folder = _simulate(tmp_path)

    Y, _ = read_matrix(str(folder / "Y.csv"))
    X, header = read_matrix(str(folder / "inputs.csv"))
    assert Y.shape == (2, 100)
    assert header == ["x1"]
    assert X.shape == (100, 1)
    assert (tmp_path / "sim" / "scenario.json").exists()


def test_fit_then_predict(tmp_path):
    folder = _simulate(tmp_path)
    model_path = tmp_path / "model.json"
    code = main.main([
        "fit", "--data", str(folder / "Y.csv"), "--inputs", str(folder / "inputs.csv"),
        "--factors", "1", "--out", str(model_path),
    ])
    assert code == 0
    assert len(json.loads(model_path.read_text(encoding="utf-8"))["loadings"]) == 2

    xstar = tmp_path / "xstar.csv"
    write_matrix(str(xstar), np.array([[10.5], [101.0]]), header=["x1"])
    pred_path = tmp_path / "pred.csv"
    assert main.main(["predict", "--model", str(model_path), "--inputs", str(xstar), "--out", str(pred_path)]) == 0

    table, header = read_matrix(str(pred_path))
    assert header == ["mean_0", "mean_1", "sd_0", "sd_1", "lower_0", "lower_1", "upper_0", "upper_1"]
    assert table.shape == (2, 8)
    np.testing.assert_allclose(table[:, 4], table[:, 0] - 1.96 * table[:, 2])

    observed = tmp_path / "obs.csv"
    observed.write_text("1\n0.5\n-0.25\n", encoding="utf-8")
    cond_path = tmp_path / "cond.csv"
    assert main.main([
        "predict", "--model", str(model_path), "--inputs", str(xstar),
        "--observed", str(observed), "--out", str(cond_path),
    ]) == 0
    _, cond_header = read_matrix(str(cond_path))
    assert cond_header == ["mean_0", "sd_0", "lower_0", "upper_0"]


def test_predict_to_stdout(tmp_path, capsys):
    folder = _simulate(tmp_path)
    model_path = tmp_path / "model.json"
    main.main(["fit", "--data", str(folder / "Y.csv"), "--out", str(model_path)])
    xstar = tmp_path / "x.csv"
    xstar.write_text("3.0\n", encoding="utf-8")
    capsys.readouterr()

    assert main.main(["predict", "--model", str(model_path), "--inputs", str(xstar)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("mean_0,mean_1,sd_0")
    assert len(lines) == 2


def test_benchmark_writes_three_reports(tmp_path):
    out = tmp_path / "report.csv"
    code = main.main([
        "benchmark", "--scenario", "demo", "--methods", "pca,ly1", "--replicates", "2",
        "--seed", "1", "--out", str(out),
    ])

    assert code == 0
    assert out.exists()
    assert (tmp_path / "report_summary.csv").exists()
    assert (tmp_path / "report_timing.csv").exists()


def test_argument_errors_exit_with_2(tmp_path):
    assert main.main(["benchmark", "--scenario", "nope", "--out", str(tmp_path / "r.csv")]) == 2
    assert main.main(["predict", "--model", str(tmp_path / "missing.json"), "--inputs", "x.csv"]) == 2

    bad = tmp_path / "Y.csv"
    bad.write_text("1,2\n3\n", encoding="utf-8")
    assert main.main(["fit", "--data", str(bad), "--out", str(tmp_path / "m.json")]) == 2

    with pytest.raises(SystemExit) as info:
        main.main(["fit", "--out", "m.json"])
    assert info.value.code == 2


def test_numeric_failures_exit_with_3(tmp_path, monkeypatch):
    folder = _simulate(tmp_path)

    def broken_fit(Y, config):
        raise GPPCANumericError("Cholesky factorization failed", params={"tau": 1e10})

    monkeypatch.setattr(gppca_core, "fit", broken_fit)

    assert main.main(["fit", "--data", str(folder / "Y.csv"), "--out", str(tmp_path / "m.json")]) == 3


def test_runtime_requirement_check_reports_python_packages(monkeypatch):
    monkeypatch.setattr(main, "find_spec", lambda module_name: None)

    missing = main._check_runtime_requirements()

    assert "Python package: numpy" in missing
    assert "Python package: scipy" in missing
    assert main.main(["simulate", "--scenario", "demo", "--out", "unused"]) == 1


def test_runtime_requirement_check_passes_when_installed(monkeypatch):
    monkeypatch.setattr(main, "find_spec", lambda module_name: object())

    assert main._check_runtime_requirements() == []


def test_global_exception_handler_exits_with_1(capsys):
    with pytest.raises(SystemExit) as info:
        main.global_exception_handler(RuntimeError, RuntimeError("boom"), None)

    assert info.value.code == 1
    assert "boom" in capsys.readouterr().err
