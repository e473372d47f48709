import csv
import json

import numpy as np
import pytest
import yaml

from srdvi import cli


def write_cfg(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def report(out_dir):
    return json.loads((out_dir / "report.json").read_text())


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def test_bundled_normal_gamma_fit(tmp_path):
    out = tmp_path / "ng"
    assert cli.run(["fit", "--config", "normal_gamma", "--out", str(out), "--emit-grids"]) == 0
    r = report(out)
    assert r["schema_version"] == 1 and r["command"] == "fit" and r["exit_code"] == 0
    res = r["result"]
    b, truth = res["bounds"], res["exact_log_marginal"]
    assert b["kld_lb"] < b["lb"] <= truth <= b["ub"]
    assert res["scaled"]["lb"] > res["scaled"]["kld_lb"]
    assert res["converged"]
    grids = sorted(p.name for p in out.glob("psi_*.csv"))
    assert len(grids) == 6
    with open(out / grids[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "value"] and len(rows) == 1024


def test_same_seed_gives_identical_reports(tmp_path):
    args = ["fit", "--config", "normal_gamma", "--deterministic", "--seed", "5"]
    assert cli.run(args + ["--out", "a"]) == 0
    assert cli.run(args + ["--out", "b"]) == 0
    ra, rb = report(tmp_path / "a"), report(tmp_path / "b")
    assert ra["config"]["output"].pop("dir") == "a"
    assert rb["config"]["output"].pop("dir") == "b"
    assert ra == rb


def test_flags_override_config(tmp_path):
    assert cli.run(["fit", "--config", "normal_gamma", "--alpha", "0.5", "--seed", "9", "--out", "o"]) == 0
    r = report(tmp_path / "o")
    assert r["seed"] == 9 and r["config"]["engine"]["alpha"] == 0.5


def test_missing_data_file_names_path(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", {"model": {"type": "logreg", "data": "nope.csv"}})
    assert cli.run(["classify", "--config", cfg, "--out", "o"]) == 1
    err = capsys.readouterr().err
    assert "data file not found" in err and "nope.csv" in err
    assert not (tmp_path / "o" / "report.json").exists()


def test_missing_config_names_path(capsys):
    assert cli.run(["fit", "--config", "missing/run.yaml"]) == 1
    assert "missing/run.yaml" in capsys.readouterr().err


@pytest.mark.parametrize("engine, where", [({"alhpa": 0.5}, "engine.alhpa"), ({"alpha": 1.0}, "engine.alpha"),
                                           ({"n_basis": 4}, "engine.n_basis")])
def test_config_errors_name_the_field(tmp_path, capsys, engine, where):
    cfg = write_cfg(tmp_path / "c.yaml", {"model": {"type": "normal_gamma", "synth": {"n": 10}}, "engine": engine})
    assert cli.run(["fit", "--config", cfg]) == 1
    assert f"config error at {where}" in capsys.readouterr().err


def test_type_errors_name_the_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", {"seed": "abc"})
    assert cli.run(["fit", "--config", cfg]) == 1
    assert "config error at seed" in capsys.readouterr().err


@pytest.mark.parametrize("suite", ["", "nonsense"])
def test_bad_suite_is_usage_error(tmp_path, capsys, suite):
    assert cli.run(["benchmark", "--suite", suite, "--out", "o"]) == 1
    assert "benchmark.suite" in capsys.readouterr().err
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").iterdir())


def test_small_benchmark(tmp_path):
    cfg = write_cfg(tmp_path / "b.yaml", {"seed": 3, "benchmark": {"suite": "linreg-mse", "cells": [[3, 20]], "reps": 2}})
    assert cli.run(["benchmark", "--config", cfg, "--out", "o", "--deterministic"]) == 0
    with open(tmp_path / "o" / "benchmark_linreg-mse.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["rep"] for r in rows] == ["0", "1"]
    assert all(float(r["mse_or_bound"]) < 1e-6 for r in rows)
    assert all(float(r["wall_seconds"]) == 0.0 for r in rows)


def test_bounds_benchmark(tmp_path):
    cfg = write_cfg(tmp_path / "b.yaml", {"seed": 4, "benchmark": {"suite": "bounds-ordering", "cells": [[2, 10]],
                                                                      "reps": 2}})
    assert cli.run(["benchmark", "--config", cfg, "--out", "o"]) == 0
    with open(tmp_path / "o" / "benchmark_bounds-ordering.csv") as fh:
        assert all(float(r["mse_or_bound"]) == 1.0 for r in csv.DictReader(fh))


def test_geometry_check(tmp_path):
    assert cli.run(["geometry-check", "--out", "g"]) == 0
    res = report(tmp_path / "g")["result"]
    assert res["passed"] and all(c["passed"] for c in res["checks"].values())


def test_classify_from_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 2))
    y = (X[:, 0] - X[:, 1] > 0).astype(int)
    lines = ["x1,x2,label"] + [f"{a},{b},{c}" for (a, b), c in zip(X, y)]
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "train.idx").write_text("\n".join(str(i) for i in range(40)) + "\n")
    cfg = write_cfg(tmp_path / "c.yaml", {"model": {"type": "logreg", "data": "d.csv", "train_index": "train.idx",
                                                    "options": {"s0_sq": 10.0}},
                                          "engine": {"max_iter": 100}})
    assert cli.run(["classify", "--config", cfg, "--out", "o"]) in (0, 2)
    scores = report(tmp_path / "o")["result"]["classification"]["scores"]
    assert set(scores) == {"MAP", "PMEA", "PMED", "PPRED"}
    assert scores["PMEA"]["accuracy"] >= 85.0


def test_density_estimate_writes_csv(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"seed": 2, "model": {"type": "lgp", "synth": {"n": 80, "kind": "normal"},
                                                               "options": {"n_coef": 6, "support": [-4, 4]}},
                                          "engine": {"max_iter": 20}})
    code = cli.run(["density-estimate", "--config", cfg, "--out", "o"])
    assert code in (0, 2)
    r = report(tmp_path / "o")
    assert r["exit_code"] == code
    with open(tmp_path / "o" / "density.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1024
    assert 0.0 <= r["result"]["hellinger"] < 0.3


def test_unknown_command_is_an_error():
    assert cli.run(["frobnicate"]) == 1
