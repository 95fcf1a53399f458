"""Command-line workflows: file schemas, exit codes and determinism."""

import csv
import json

import numpy as np
import pytest

from panelsieve import DgpSpec, gen_panel, halton_design
from panelsieve.cli import main


def _write_stimuli(path, X):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_id"] + [f"x{k + 1}" for k in range(X.shape[1])])
        for t in range(X.shape[0]):
            w.writerow([f"t{t}"] + [repr(float(v)) for v in X[t]])


def _write_panel(path, Y, drop_last_cell=False):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "task_id", "response"])
        for i in range(Y.shape[0]):
            for t in range(Y.shape[1]):
                if drop_last_cell and i == Y.shape[0] - 1 and t == Y.shape[1] - 1:
                    continue
                w.writerow([f"s{i}", f"t{t}", repr(float(Y[i, t]))])


@pytest.fixture
def stevens_files(tmp_path):
    """Synthetic power-law panel: f = x1 - x2 plus small iid noise."""
    dgp = DgpSpec("stevens_linear", {"kappa": 1.0},
                  error_params={"sigma2": 0.01})
    design = halton_design(10, 2, [(-1, 1)] * 2)
    data = gen_panel(dgp, design, 50, 7)
    spath = tmp_path / "stimuli.csv"
    dpath = tmp_path / "responses.csv"
    _write_stimuli(spath, design.points)
    _write_panel(dpath, data.responses)
    return str(dpath), str(spath), tmp_path


class TestCmdFit:
    def test_exit_zero_and_report(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out = tmp / "fit"
        code = main(["fit", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,2", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["P"] == 6
        assert len(report["beta_hat"]) == 6
        assert report["sigma_bar"]["source"] == "plug_in"
        assert (out / "surface.csv").exists()

    def test_missing_cell_exit_2(self, tmp_path):
        X = halton_design(5, 1, [(-1, 1)]).points
        Y = np.zeros((2, 5))
        _write_stimuli(tmp_path / "s.csv", X)
        _write_panel(tmp_path / "r.csv", Y, drop_last_cell=True)
        code = main(["fit", "--data", str(tmp_path / "r.csv"),
                     "--stimuli", str(tmp_path / "s.csv"),
                     "--orders", "1", "--out", str(tmp_path)])
        assert code == 2

    def test_underdetermined_exit_2(self, stevens_files):
        data, stimuli, tmp = stevens_files
        code = main(["fit", "--data", data, "--stimuli", stimuli,
                     "--orders", "3,3", "--out", str(tmp)])
        assert code == 2

    def test_derivative_column(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out = tmp / "fitd"
        code = main(["fit", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,1", "--out", str(out),
                     "--derivative", "1,0", "--grid-resolution", "5"])
        assert code == 0
        with open(out / "surface.csv") as fh:
            header = fh.readline().strip().split(",")
        assert header == ["x1", "x2", "f_hat", "d1_0"]


class TestCmdTest:
    def test_stevens_recipe_accepts_true_null(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out = tmp / "test"
        code = main(["test", "--data", data, "--stimuli", stimuli,
                     "--orders", "2,2", "--constraint", "stevens",
                     "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["df"] == 8
        assert report["p_chi2"] > 0.001  # H0 holds by construction

    def test_matrix_file_identity_at_beta_hat(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out1 = tmp / "m1"
        main(["fit", "--data", data, "--stimuli", stimuli,
              "--orders", "1,1", "--out", str(out1)])
        beta = json.loads((out1 / "report.json").read_text())["beta_hat"]
        M = np.hstack([np.eye(4), np.array(beta)[:, None]])
        np.savetxt(tmp / "constraint.csv", M, delimiter=",")
        out2 = tmp / "m2"
        code = main(["test", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,1", "--constraint", "matrix_file",
                     "--matrix", str(tmp / "constraint.csv"),
                     "--out", str(out2)])
        assert code == 0
        report = json.loads((out2 / "report.json").read_text())
        assert abs(report["statistic"]) < 1e-12

    def test_point_recipe(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out = tmp / "pt"
        code = main(["test", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,1", "--constraint", "point",
                     "--point", "0.0,0.0,0.0", "--out", str(out)])
        assert code == 0
        assert json.loads((out / "report.json").read_text())["df"] == 1

    def test_unknown_recipe_exit_2(self, stevens_files):
        data, stimuli, tmp = stevens_files
        code = main(["test", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,1", "--constraint", "point",
                     "--out", str(tmp)])  # point recipe without --point
        assert code == 2


class TestCmdCv:
    def test_single_candidate(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out = tmp / "cv1"
        code = main(["cv", "--data", data, "--stimuli", stimuli,
                     "--degrees", "1,1", "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["selected_degree"] == 1

    def test_all_candidates_too_large_exit_2(self, stevens_files):
        data, stimuli, tmp = stevens_files
        code = main(["cv", "--data", data, "--stimuli", stimuli,
                     "--degrees", "4,6", "--out", str(tmp)])
        assert code == 2

    def test_selects_true_degree(self, tmp_path):
        X = halton_design(40, 1, [(-1, 1)]).points
        rng = np.random.default_rng(0)
        f = X[:, 0] ** 3 - 0.5 * X[:, 0]
        Y = f[None, :] + 0.03 * rng.standard_normal((300, 40))
        _write_stimuli(tmp_path / "s.csv", X)
        _write_panel(tmp_path / "r.csv", Y)
        out = tmp_path / "cv"
        code = main(["cv", "--data", str(tmp_path / "r.csv"),
                     "--stimuli", str(tmp_path / "s.csv"),
                     "--degrees", "1,6", "--out", str(out)])
        assert code == 0
        assert json.loads((out / "report.json").read_text())["selected_degree"] == 3


class TestCmdDesign:
    def test_halton_gram_deviation_decays(self, tmp_path):
        devs = []
        for T in (64, 256):
            out = tmp_path / f"d{T}"
            code = main(["design", "--generator", "halton", "--T", str(T),
                         "--orders", "4", "--out", str(out)])
            assert code == 0
            devs.append(
                json.loads((out / "report.json").read_text())["gram_deviation"]
            )
        assert devs[1] < devs[0]

    def test_grid_three_points(self, tmp_path):
        out = tmp_path / "g"
        code = main(["design", "--generator", "grid", "--T", "3",
                     "--orders", "1", "--out", str(out)])
        assert code == 0
        with open(out / "stimuli.csv") as fh:
            rows = list(csv.DictReader(fh))
        xs = sorted(float(r["x1"]) for r in rows)
        assert xs == [-1.0, 0.0, 1.0]

    def test_unsupported_dimension_exit_2(self, tmp_path):
        code = main(["design", "--generator", "halton", "--T", "10",
                     "--orders", ",".join(["1"] * 9), "--out", str(tmp_path)])
        assert code == 2


class TestCmdSimulate:
    def test_schema_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        argv = ["simulate", "--degree", "2", "--T", "10",
                "--n-grid", "50,200", "--reps", "5", "--seed", "3"]
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        assert (out1 / "cells.csv").read_bytes() == (out2 / "cells.csv").read_bytes()
        with open(out1 / "cells.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["n"] for r in rows} == {"50", "200"}

    def test_zero_reps_exit_2(self, tmp_path):
        assert main(["simulate", "--reps", "0", "--out", str(tmp_path)]) == 2


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, stevens_files, tmp_path):
        data, stimuli, tmp = stevens_files
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"orders": "2,2", "grid_resolution": 4}))
        out = tmp / "cfgout"
        code = main(["fit", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,1", "--config", str(cfg),
                     "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        # explicit flag wins over config file
        assert report["P"] == 4
        assert report["config"]["grid_resolution"] == 4

    def test_unknown_config_key_exit_2(self, stevens_files, tmp_path):
        data, stimuli, tmp = stevens_files
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"wat": 1}))
        code = main(["fit", "--data", data, "--stimuli", stimuli,
                     "--orders", "1,1", "--config", str(cfg),
                     "--out", str(tmp)])
        assert code == 2


class TestDeterminism:
    def test_byte_identical_reports(self, stevens_files):
        data, stimuli, tmp = stevens_files
        out1, out2 = tmp / "r1", tmp / "r2"
        argv = ["fit", "--data", data, "--stimuli", stimuli, "--orders", "1,2"]
        assert main(argv + ["--out", str(out1)]) == 0
        assert main(argv + ["--out", str(out2)]) == 0
        r1 = (out1 / "report.json").read_text()
        r2 = (out2 / "report.json").read_text()
        # reports embed the resolved config incl. the out dir; compare the rest
        d1, d2 = json.loads(r1), json.loads(r2)
        d1["config"].pop("out"), d2["config"].pop("out")
        assert d1 == d2
        assert (out1 / "surface.csv").read_bytes() == (
            out2 / "surface.csv"
        ).read_bytes()
