import os

import numpy as np
import pytest

from lcrisk.cli import main
from lcrisk.artifacts import FitArtifact
from lcrisk.cohort import load_cohort


def run(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def sim_files(tmp_path_factory):
    base = tmp_path_factory.mktemp("sim")
    out = str(base / "cohort")
    code = run("simulate", "--preset", "A", "--n", "250", "--seed", "7",
               "--out", out)
    assert code == 0
    return out + ".csv", out + ".truth.csv"


@pytest.fixture(scope="module")
def fit_dir(sim_files, tmp_path_factory):
    data, _ = sim_files
    out = str(tmp_path_factory.mktemp("fit"))
    code = run("fit", "--data", data, "--out", out, "--grid-k", "1",
               "--grid-l", "1..2", "--grid-m", "2", "--restarts", "2",
               "--seed", "3")
    assert code == 0
    return out


class TestSimulate:
    def test_writes_cohort_and_truth(self, sim_files):
        data, truth = sim_files
        cohort = load_cohort(data)
        assert cohort.n == 250
        assert cohort.n_risks == 1
        assert os.path.exists(truth)

    def test_preset_b_has_two_risks(self, tmp_path):
        out = str(tmp_path / "b")
        assert run("simulate", "--preset", "B", "--n", "120", "--seed", "1",
                   "--out", out) == 0
        cohort = load_cohort(out + ".csv")
        assert cohort.n_risks == 2

    def test_missing_seed_is_usage_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run("simulate", "--preset", "A", "--n", "10",
                "--out", str(tmp_path / "x"))
        assert exc.value.code == 2

    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = str(tmp_path / "r1"), str(tmp_path / "r2")
        run("simulate", "--preset", "C", "--n", "60", "--seed", "9",
            "--out", out1)
        run("simulate", "--preset", "C", "--n", "60", "--seed", "9",
            "--out", out2)
        assert open(out1 + ".csv").read() == open(out2 + ".csv").read()
        assert (open(out1 + ".truth.csv").read()
                == open(out2 + ".truth.csv").read())

    def test_spec_file(self, tmp_path):
        spec_path = tmp_path / "spec.txt"
        spec_path.write_text(
            "classes = 2\nrisks = 1\ncovariates = 1\n"
            "weights = 0.5 0.5\n"
            "frailty.r1 = 0 0\n"
            "assoc.r1.c1 = 1.0\nassoc.r1.c2 = -1.0\n"
            "rate.r1.c1 = constant 0.2\nrate.r1.c2 = exponential 0.01 0.3\n"
            "trial_end = 12\n")
        out = str(tmp_path / "custom")
        assert run("simulate", "--spec", str(spec_path), "--n", "40",
                   "--seed", "2", "--out", out) == 0
        cohort = load_cohort(out + ".csv")
        assert cohort.n == 40
        assert cohort.n_covariates == 1


class TestFit:
    def test_outputs_exist(self, fit_dir):
        for name in ("selection.txt", "fit.txt", "preprocess.txt"):
            assert os.path.exists(os.path.join(fit_dir, name))

    def test_artifact_is_self_contained(self, fit_dir):
        artifact = FitArtifact.load(os.path.join(fit_dir, "fit.txt"))
        assert artifact.params.n_covariates == 3
        assert artifact.quartiles.shape == (3, 3)
        assert np.all(artifact.report.scale > 0)

    def test_selection_lists_all_models(self, fit_dir):
        text = open(os.path.join(fit_dir, "selection.txt")).read()
        assert "n_models = 2" in text
        assert "winner.model" in text

    def test_unreadable_path_fails(self, tmp_path):
        code = run("fit", "--data", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "o"), "--seed", "1")
        assert code == 1


class TestCurves:
    def test_curves_at_zero_vector(self, fit_dir, tmp_path):
        out = str(tmp_path / "curves.csv")
        code = run("curves", "--fit", os.path.join(fit_dir, "fit.txt"),
                   "--out", out, "--z", "vector:0,0,0",
                   "--curve-points", "64")
        assert code == 0
        lines = open(out).read().splitlines()
        header = lines[0].split(",")
        assert header[0] == "time"
        first = dict(zip(header, lines[1].split(",")))
        assert float(first["decon_survival_r1"]) == 1.0
        assert float(first["crude_survival_r1"]) == 1.0
        assert len(lines) == 65

    def test_quartile_preset(self, fit_dir, tmp_path):
        out = str(tmp_path / "curves_uq.csv")
        assert run("curves", "--fit", os.path.join(fit_dir, "fit.txt"),
                   "--out", out, "--z", "uq", "--curve-points", "32") == 0

    def test_wrong_z_length(self, fit_dir, tmp_path):
        code = run("curves", "--fit", os.path.join(fit_dir, "fit.txt"),
                   "--out", str(tmp_path / "c.csv"), "--z", "vector:1,2")
        assert code == 1

    def test_deterministic(self, fit_dir, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        for out in (a, b):
            run("curves", "--fit", os.path.join(fit_dir, "fit.txt"),
                "--out", out, "--z", "median", "--curve-points", "16")
        assert open(a).read() == open(b).read()


class TestAssign:
    def test_posterior_file(self, sim_files, fit_dir, tmp_path):
        data, _ = sim_files
        out = str(tmp_path / "post.csv")
        code = run("assign", "--fit", os.path.join(fit_dir, "fit.txt"),
                   "--data", data, "--out", out)
        assert code == 0
        lines = open(out).read().splitlines()
        assert lines[0].startswith("id,p_class1")
        assert len(lines) == 251
        probs = np.array([[float(v) for v in ln.split(",")[1:-1]]
                          for ln in lines[1:]])
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_score_prints_quality(self, sim_files, fit_dir, tmp_path, capsys):
        data, truth = sim_files
        out = str(tmp_path / "post.csv")
        code = run("assign", "--fit", os.path.join(fit_dir, "fit.txt"),
                   "--data", data, "--out", out, "--truth", truth, "--score")
        assert code == 0
        captured = capsys.readouterr()
        assert "q =" in captured.out

    def test_score_without_truth_fails(self, sim_files, fit_dir, tmp_path):
        data, _ = sim_files
        code = run("assign", "--fit", os.path.join(fit_dir, "fit.txt"),
                   "--data", data, "--out", str(tmp_path / "p.csv"),
                   "--score")
        assert code == 1


class TestKm:
    def test_basic_table(self, sim_files, tmp_path):
        data, _ = sim_files
        out = str(tmp_path / "km.csv")
        assert run("km", "--data", data, "--risk", "1", "--out", out) == 0
        lines = open(out).read().splitlines()
        assert lines[0] == "time,survival,at_risk,events"
        assert lines[1].startswith("0,1,")

    def test_quartile_band(self, sim_files, tmp_path):
        data, _ = sim_files
        out = str(tmp_path / "km_lq.csv")
        assert run("km", "--data", data, "--risk", "1", "--covariate", "1",
                   "--band", "lq", "--out", out) == 0

    def test_bad_risk_fails(self, sim_files, tmp_path):
        data, _ = sim_files
        code = run("km", "--data", data, "--risk", "4",
                   "--out", str(tmp_path / "km.csv"))
        assert code == 1
