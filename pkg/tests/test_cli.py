"""End-to-end CLI tests driving ``main`` with temporary files."""

import json

import numpy as np
import pytest

from mixcop.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGENCE, main
from mixcop.dependence import DiscreteMargin, PairMixture, tau_discrete

STUDY_CONFIG = {
    "copula": {
        "family": "gaussian",
        "weights": [0.25, 0.75],
        "structures": [
            {"kind": "ar1", "decay": 0.3},
            {"kind": "ex", "decay": 0.7},
        ],
    },
    "margin": {"family": "poisson", "beta": [1.0, 0.5, 0.5, -0.5]},
    "m": 50,
    "n_visits": 4,
    "n_replicates": 2,
    "seed": 424242,
}

FIT_CONFIG = {
    "margin": {"family": "poisson"},
    "copula": {
        "family": "gaussian",
        "structures": ["ar1", "ex"],
        "compute_se": False,
    },
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Simulated dataset plus the two config files, shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    study = root / "study.json"
    study.write_text(json.dumps(STUDY_CONFIG))
    fitcfg = root / "fit_config.json"
    fitcfg.write_text(json.dumps(FIT_CONFIG))
    data = root / "data.csv"
    assert main(["simulate", str(study), "-o", str(data)]) == 0
    return root


def _read(path):
    return path.read_text()


class TestSimulate:
    def test_output_shape(self, workdir):
        lines = _read(workdir / "data.csv").strip().splitlines()
        assert lines[0] == "# schema_version: 1"
        assert lines[1].startswith("subject,time,y")
        assert len(lines) == 2 + 50 * 4

    def test_rerun_byte_identical(self, workdir, tmp_path):
        out = tmp_path / "again.csv"
        assert main(["simulate", str(workdir / "study.json"), "-o", str(out)]) == 0
        assert _read(out) == _read(workdir / "data.csv")

    def test_replicate_changes_output(self, workdir, tmp_path):
        out = tmp_path / "rep1.csv"
        assert main(
            ["simulate", str(workdir / "study.json"), "-o", str(out), "--replicate", "1"]
        ) == 0
        assert _read(out) != _read(workdir / "data.csv")


@pytest.fixture(scope="module")
def fit_json(workdir):
    out = workdir / "fit.json"
    rc = main(
        ["fit", str(workdir / "data.csv"), str(workdir / "fit_config.json"),
         "-o", str(out)]
    )
    assert rc == 0
    return out


class TestFit:
    def test_result_schema(self, fit_json):
        payload = json.loads(_read(fit_json))
        assert payload["schema_version"] == 1
        assert payload["copula"]["family"] == "gaussian"
        assert len(payload["param_names"]) == 7
        assert payload["converged"] is True

    def test_summary_on_stdout(self, workdir, capsys, tmp_path):
        main(
            ["fit", str(workdir / "data.csv"), str(workdir / "fit_config.json"),
             "-o", str(tmp_path / "f.json")]
        )
        out = capsys.readouterr().out
        assert "Parameter" in out and "Estimate" in out
        assert "comp-loglik" in out

    def test_missing_data_file(self, workdir, tmp_path):
        rc = main(
            ["fit", str(tmp_path / "absent.csv"), str(workdir / "fit_config.json")]
        )
        assert rc == EXIT_DATA

    def test_malformed_csv(self, workdir, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("subject,time,y\n0,1.0,three\n")
        rc = main(["fit", str(bad), str(workdir / "fit_config.json")])
        assert rc == EXIT_DATA

    def test_bad_config(self, workdir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"copula": {"family": "vine"}}))
        rc = main(["fit", str(workdir / "data.csv"), str(cfg)])
        assert rc == EXIT_CONFIG

    def test_invalid_json_config(self, workdir, tmp_path):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json")
        rc = main(["fit", str(workdir / "data.csv"), str(cfg)])
        assert rc == EXIT_CONFIG

    def test_nonconvergence_exit_code(self, workdir, tmp_path):
        cfg = dict(FIT_CONFIG)
        cfg["copula"] = dict(FIT_CONFIG["copula"], maxiter=3)
        cfg_path = tmp_path / "starved.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "f.json"
        rc = main(["fit", str(workdir / "data.csv"), str(cfg_path), "-o", str(out)])
        assert rc == EXIT_NONCONVERGENCE
        # the partial result is still written for inspection
        assert json.loads(_read(out))["converged"] is False

    def test_threads_flag_validated(self, workdir):
        rc = main(
            ["--threads", "0", "fit", str(workdir / "data.csv"),
             str(workdir / "fit_config.json")]
        )
        assert rc == EXIT_CONFIG


class TestStudy:
    def test_summary_csv(self, workdir, tmp_path, capsys):
        out = tmp_path / "study.csv"
        rc = main(["study", str(workdir / "study.json"), "-o", str(out)])
        assert rc == 0
        assert "Parameter" in capsys.readouterr().out
        lines = _read(out).strip().splitlines()
        assert lines[0] == "# schema_version: 1"
        assert lines[1] == "parameter,true,mean,bias,sd,se,rmse"
        assert len(lines) == 2 + 7


class TestDependence:
    def test_matrices_from_fit(self, workdir, fit_json, tmp_path):
        out = tmp_path / "dep.csv"
        rc = main(
            ["dependence", str(workdir / "data.csv"), "--fit", str(fit_json),
             "-o", str(out)]
        )
        assert rc == 0
        lines = _read(out).strip().splitlines()
        assert lines[1] == "measure,kind,time_a,time_b,value"
        # 4x4 grid, model+empirical, tau+rho, plus 16 tail rows
        assert len(lines) == 2 + 2 * 2 * 16 + 16

    def test_rerun_byte_identical(self, workdir, fit_json, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["dependence", str(workdir / "data.csv"), "--fit", str(fit_json)]
        assert main(args + ["-o", str(a)]) == 0
        assert main(args + ["-o", str(b)]) == 0
        assert _read(a) == _read(b)

    def test_truth_config_duck_fit(self, workdir, tmp_path):
        out = tmp_path / "dep.csv"
        rc = main(
            ["dependence", str(workdir / "data.csv"),
             "--config", str(workdir / "study.json"), "-o", str(out)]
        )
        assert rc == 0

    def test_requires_fit_or_config(self, workdir):
        rc = main(["dependence", str(workdir / "data.csv")])
        assert rc == EXIT_CONFIG


class TestCurves:
    def test_endpoints_match_oracle(self, tmp_path):
        out = tmp_path / "curves.csv"
        rc = main(
            ["curves", "--family", "gaussian", "--margin", "poisson",
             "--params", "1.0", "--weights", "0.5", "--measures", "tau",
             "--grid", "3", "-o", str(out)]
        )
        assert rc == 0
        rows = [
            line.split(",") for line in _read(out).strip().splitlines()[2:]
        ]
        values = {float(r[4]): float(r[5]) for r in rows}
        margin = DiscreteMargin.from_params("poisson", 1.0)
        for rho2 in (-1.0, 0.0, 1.0):
            pm = PairMixture(
                weights=np.array([0.5, 0.5]),
                rhos=np.array([0.0, rho2]),
                family="gaussian",
            )
            assert values[rho2] == pytest.approx(
                tau_discrete(margin, margin, pm), abs=1e-12
            )


class TestGof:
    def test_qq_and_svg(self, workdir, fit_json, tmp_path, capsys):
        qq = tmp_path / "qq.csv"
        svg = tmp_path / "qq.svg"
        rc = main(
            ["gof", str(workdir / "data.csv"), "--fit", str(fit_json),
             "-o", str(qq), "--svg", str(svg)]
        )
        assert rc == 0
        assert "KS=" in capsys.readouterr().out
        lines = _read(qq).strip().splitlines()
        assert lines[1] == "theoretical,sample"
        assert len(lines) == 2 + 50
        text = _read(svg)
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
        assert text.count("<circle") == 50
