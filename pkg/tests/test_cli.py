import json
import subprocess
import warnings

import numpy as np
import pandas as pd
import pytest

from mpcmr.cli import main
from mpcmr.longdata import load_individual_data
from mpcmr.pipeline import fit_frame, fit_mpcmr


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    rc = main(["simulate", "--scenario", "B3", "--n", "220",
               "--obs-per-subject", "6", "--seed", "9", "--out", str(out)])
    assert rc == 0
    return out


def _input_args(cohort):
    return ["--exposure", str(cohort / "exposure.csv"),
            "--genotype", str(cohort / "genotype.csv"),
            "--outcome", str(cohort / "outcome.csv")]


@pytest.fixture(scope="module")
def inproc_fit(cohort_dir):
    exposure, genotype, outcome = load_individual_data(
        str(cohort_dir / "exposure.csv"),
        str(cohort_dir / "genotype.csv"),
        str(cohort_dir / "outcome.csv"),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit_mpcmr(exposure, genotype, outcome, basis="poly", lm_m=13)


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["fit"]) == 1
    assert main(["study", "--out", "x"]) == 1
    capsys.readouterr()


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert main(["simulate", "--help"]) == 0
    out = capsys.readouterr().out
    assert "--scenario" in out


def test_console_script_installed():
    proc = subprocess.run(["mpcmr", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout


def test_simulate_writes_cohort(cohort_dir):
    exposure = pd.read_csv(cohort_dir / "exposure.csv")
    assert list(exposure.columns) == ["subject_id", "time", "value"]
    assert len(exposure) == 220 * 6
    genotype = pd.read_csv(cohort_dir / "genotype.csv")
    assert genotype.shape == (220, 31)
    outcome = pd.read_csv(cohort_dir / "outcome.csv")
    assert list(outcome.columns) == ["subject_id", "outcome"]
    assert len(outcome) == 220
    truth = pd.read_csv(cohort_dir / "truth.csv")
    assert len(truth) == 501
    assert list(truth.columns[:2]) == ["t", "beta_true"]
    assert truth.columns[-1] == "alpha_30"
    # scenario 3 truth is the increasing ramp
    assert truth["beta_true"].iloc[-1] == pytest.approx(1.0)


def test_simulate_bad_scenario_exits_2(tmp_path, capsys):
    for label in ("Z9", "A33", "A0"):
        rc = main(["simulate", "--scenario", label, "--n", "10",
                   "--out", str(tmp_path)])
        assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_fit_missing_input_exits_2(tmp_path, cohort_dir, capsys):
    args = _input_args(cohort_dir)
    args[1] = str(tmp_path / "nope.csv")
    rc = main(["fit", *args, "--out", str(tmp_path / "fit.csv")])
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_fit_writes_curve_table(tmp_path, cohort_dir, inproc_fit, capsys):
    out = tmp_path / "fit.csv"
    model_out = tmp_path / "model.json"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rc = main(["fit", *_input_args(cohort_dir), "--basis", "poly",
                   "--lm-m", "13", "--out", str(out),
                   "--model-out", str(model_out)])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "gamma:" in stdout and "overidentification" in stdout

    frame = pd.read_csv(out, float_precision="round_trip")
    assert list(frame.columns) == [
        "t", "beta_hat", "se", "gmm_lo", "gmm_hi",
        "lm_lo", "lm_hi", "lm_unbounded_lo", "lm_unbounded_hi",
    ]
    assert len(frame) == 51
    assert (frame["gmm_lo"] <= frame["beta_hat"]).all()
    assert (frame["beta_hat"] <= frame["gmm_hi"]).all()

    expect = fit_frame(inproc_fit)
    for col in expect.columns:
        assert np.array_equal(frame[col].to_numpy(), expect[col].to_numpy()), col

    saved = json.loads(model_out.read_text())
    assert saved["n_points"] == 51


def test_fit_frame_truth_column_round_trip(tmp_path, cohort_dir, inproc_fit):
    truth = pd.read_csv(cohort_dir / "truth.csv")
    beta_true = np.interp(inproc_fit.t, truth["t"], truth["beta_true"])
    with_truth = fit_frame(inproc_fit, beta_true=beta_true)
    assert with_truth.columns[-1] == "beta_true"
    assert len(with_truth) == 51
    bare = fit_frame(inproc_fit)
    assert "beta_true" not in bare.columns

    path = tmp_path / "frame.csv"
    with_truth.to_csv(path, index=False)
    back = pd.read_csv(path, float_precision="round_trip")
    for col in with_truth.columns:
        assert np.array_equal(back[col].to_numpy(), with_truth[col].to_numpy())


def test_diagnose_writes_json(tmp_path, cohort_dir):
    out = tmp_path / "diag.json"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rc = main(["diagnose", *_input_args(cohort_dir), "--basis", "poly",
                   "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["n"] == 220
    assert payload["n_variants"] == 30
    k = payload["n_components"]
    assert len(payload["conditional_f"]) == k
    assert 0.0 <= payload["cochran_q"]["pvalue"] <= 1.0
    assert payload["cochran_q"]["df"] == 30 - payload["L"]
    assert len(payload["q_strength"]) == (k if k >= 2 else 0)
    assert payload["sargan"]["df"] == 30 - payload["L"]
    assert len(payload["ivw"]["gamma"]) == payload["L"]
    assert len(payload["gamma"]) == payload["L"]


def test_study_end_to_end(tmp_path, capsys):
    spec = tmp_path / "study.toml"
    spec.write_text(
        'scenarios = ["B3"]\n'
        "R = 2\n"
        "n = 250\n"
        "obs_per_subject = 8\n"
        "checkpoints = [20.0, 30.0]\n"
        "lm_grid_points = 13\n"
        "seed = 4\n"
    )
    outdir = tmp_path / "results"
    rc = main(["study", "--spec", str(spec), "--jobs", "1", "--out", str(outdir)])
    assert rc == 0
    assert "wrote records.csv" in capsys.readouterr().out
    records = pd.read_csv(outdir / "records.csv")
    assert len(records) == 2 * 3 * 2
    summary = pd.read_csv(outdir / "summary.csv")
    assert len(summary) == 3 * 2
    assert summary["coverage"].between(0.0, 100.0).all()
    strength = pd.read_csv(outdir / "strength.csv")
    assert strength.shape == (1, 3)


def test_study_bad_spec_exits_2(tmp_path, capsys):
    spec = tmp_path / "study.toml"
    spec.write_text('scenarios = ["B3"]\nreps = 1\nwhatever = true\n')
    rc = main(["study", "--spec", str(spec), "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "whatever" in capsys.readouterr().err


def test_degenerate_exposure_exits_3(tmp_path, capsys):
    rng = np.random.default_rng(12)
    n = 40
    ids = [f"s{i}" for i in range(n)]
    rows = []
    for i in ids:
        for t in np.linspace(2.0, 48.0, 4):
            rows.append({"subject_id": i, "time": t, "value": 1.0})
    pd.DataFrame(rows).to_csv(tmp_path / "e.csv", index=False)
    geno = pd.DataFrame(rng.integers(0, 3, size=(n, 3)), columns=["g1", "g2", "g3"])
    geno.insert(0, "subject_id", ids)
    geno.to_csv(tmp_path / "g.csv", index=False)
    pd.DataFrame({"subject_id": ids, "outcome": rng.normal(size=n)}).to_csv(
        tmp_path / "y.csv", index=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rc = main(["fit", "--exposure", str(tmp_path / "e.csv"),
                   "--genotype", str(tmp_path / "g.csv"),
                   "--outcome", str(tmp_path / "y.csv"),
                   "--out", str(tmp_path / "fit.csv")])
    assert rc == 3
    assert "numerical failure" in capsys.readouterr().err
