import json
import subprocess
import sys

import numpy as np
import pytest

from augmatch.cli import main
from augmatch.data import write_csv
from augmatch.simulate import gen_scenario

SUMMARY_KEYS = {"reps", "mean_psi", "bias", "emp_var_scaled", "mean_theor_var", "coverage", "mc_se"}


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


@pytest.fixture(scope="module")
def scenario_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.csv"
    write_csv(gen_scenario(2, 2000, 11), path)
    return str(path)


def test_estimate_example(capsys, scenario_csv):
    argv = ["estimate", "--input", scenario_csv, "--matches", "1", "--augment", "--split", "0.05", "--seed", "7"]
    code, out = run(capsys, *argv)
    assert code == 0
    res = json.loads(out)
    assert res["schema_version"] == 1
    assert np.isfinite(res["psi"]) and res["gain"] >= 0
    assert res["split"]["n_eff"] == 1900
    assert res["ci"][0] < res["psi"] < res["ci"][1]
    assert run(capsys, *argv)[1] == out


def test_estimate_unaugmented_csv(capsys, scenario_csv):
    code, out = run(capsys, "estimate", "--input", scenario_csv, "--no-augment", "--format", "csv")
    assert code == 0
    header, row = out.splitlines()
    assert header.startswith("psi,se,ci_lo,ci_hi,gain")
    assert len(row.split(",")) == len(header.split(","))


@pytest.mark.parametrize(
    "argv",
    [
        ["estimate", "--input", "DATA", "--matches", "0"],
        ["estimate", "--input", "DATA", "--split", "0.7"],
        ["estimate", "--input", "DATA", "--level", "1.5"],
        ["estimate", "--input", "/nonexistent.csv"],
        ["estimate", "--input", "DATA", "--covariates", "nope"],
        ["simulate", "--scenario", "9"],
        ["simulate", "--scenario", "2", "--theta1", "2"],
        ["simulate", "--scenario", "2", "--reps", "1"],
        ["releff", "--m", "0"],
        ["releff", "--theta1-grid", "3:-3:1"],
        ["bogus"],
        [],
    ],
)
def test_validation_errors_exit_2(capsys, scenario_csv, argv):
    argv = [scenario_csv if a == "DATA" else a for a in argv]
    code, out = run(capsys, *argv)
    assert code == 2
    err = json.loads(out)
    assert err["error"]["kind"] == "validation"


def test_numerical_failure_exits_3(capsys, tmp_path):
    # treatment perfectly separated by the covariate
    path = tmp_path / "sep.csv"
    x = np.linspace(-1, 1, 40).tolist()
    rows = ["x,a,y"] + [f"{v!r},{int(v > 0)},{v!r}" for v in x]
    path.write_text("\n".join(rows) + "\n")
    code, out = run(capsys, "estimate", "--input", str(path), "--no-augment")
    assert code == 3
    assert json.loads(out)["error"]["kind"] == "numerical"


def test_simulate_summary_schema(capsys, tmp_path):
    outdir = tmp_path / "sim"
    code, _ = run(capsys, "simulate", "--scenario", "2", "--n", "400", "--reps", "4", "--seed", "1",
                  "--output", str(outdir))
    assert code == 0
    summary = json.loads((outdir / "summary.json").read_text())
    assert "emp_var_change" in summary
    for name in ("unaugmented", "augmented"):
        assert set(summary[name]) == SUMMARY_KEYS
    lines = (outdir / "replications.csv").read_text().splitlines()
    assert len(lines) == 5


def test_simulate_analytic_override(capsys):
    code, out = run(capsys, "simulate", "--scenario", "analytic", "--theta1", "0.5", "--n", "300", "--reps", "3")
    assert code == 0
    assert json.loads(out)["true_ate"] == 1.0


def test_simulate_threads_env(capsys, monkeypatch):
    argv = ["simulate", "--scenario", "4", "--n", "300", "--reps", "4", "--format", "csv"]
    _, one = run(capsys, *argv, "--threads", "1")
    monkeypatch.setenv("AUGMATCH_THREADS", "2")
    _, two = run(capsys, *argv)
    assert one == two


def test_releff_examples(capsys):
    for argv in (
        ["--theta1", "0", "--beta2", "1", "--beta1", "1", "--gamma1", "1", "--m", "1"],
        ["--beta2", "0"],
    ):
        code, out = run(capsys, "releff", *argv)
        assert code == 0 and json.loads(out)["re"] == 1.0


def test_releff_sweep_monotone_in_abs_theta1(capsys):
    code, out = run(capsys, "releff", "--theta1-grid", "-3:3:0.1", "--beta2", "1", "--m", "1", "--format", "csv")
    assert code == 0
    rows = np.array([list(map(float, r.split(","))) for r in out.splitlines()[1:]])
    assert len(rows) == 61
    t, re = rows[:, 0], rows[:, 2]
    order = np.argsort(np.abs(t), kind="stable")
    assert np.all(np.diff(re[order]) >= -1e-12)
    np.testing.assert_allclose(re, re[::-1], rtol=1e-12)


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "augmatch", "releff", "--beta2", "0"], capture_output=True, text=True, check=True
    )
    assert json.loads(out.stdout)["re"] == 1.0
