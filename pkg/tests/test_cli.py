import csv
import json
from pathlib import Path

import numpy as np
import pytest

from gbv.cli import REPORT_COLUMNS, main
from gbv.config import ConfigError, parse_config
from gbv.models.expfam import GLMDataset, build_glm, family
from gbv.numerics import find_minimizer
from gbv.simulate import gen_glm

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


SMALL = """\
experiment.name = small
model.kind = iid-bernoulli
data.n = 60
data.theta_true = -0.5
prior.sd = 2
sampler.steps = 3000
sampler.burn_in = 1000
diagnostics.grid_resolution = 512
"""


class TestConfig:
    def test_defaults_filled(self):
        cfg = parse_config("model.kind = cox\ndata.theta_true = 1.0\n")
        assert cfg["sampler.steps"] == 20000
        assert cfg["data.theta_true"] == [1.0]

    def test_unknown_key_line(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("model.kind = cox\n# note\nsamplr.steps = 10\n")
        assert exc.value.line == 3
        assert "samplr.steps" in str(exc.value)

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="sampler.steps"):
            parse_config("model.kind = cox\nsampler.steps = many\n")

    def test_missing_kind(self):
        with pytest.raises(ConfigError, match="model.kind"):
            parse_config("seed = 3\n")

    def test_hash_changes(self):
        a = parse_config("model.kind = cox\nseed = 1\n")
        b = parse_config("model.kind = cox\nseed = 2\n")
        assert a.hash != b.hash


class TestCLI:
    def test_unknown_key_exit2(self, tmp_path, capsys):
        p = _write(tmp_path, "model.kind = iid-bernoulli\nsamplr.steps = 5\n")
        assert main(["run", "--config", str(p)]) == 2
        err = capsys.readouterr().err.strip()
        assert err.startswith("error:") and "samplr.steps" in err and "\n" not in err

    def test_missing_artifact_exit4(self, tmp_path, capsys):
        p = _write(tmp_path, SMALL)
        assert main(["laplace", "--config", str(p), "--out", str(tmp_path / "o")]) == 4
        assert "fit.json" in capsys.readouterr().err

    def test_numerical_failure_exit3(self, tmp_path, capsys):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        GLMDataset(X, np.array([0.0, 0.0, 1.0, 1.0]), family("bernoulli")).to_csv(tmp_path / "sep.csv")
        p = _write(tmp_path, f"model.kind = glm-logistic\ndata.source = file\ndata.path = {tmp_path / 'sep.csv'}\n"
                             "data.theta_true = 1\noptimizer.max_iter = 40\n")
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
        assert "stage fit" in capsys.readouterr().err

    def test_fit_matches_library(self, tmp_path, capsys):
        d = gen_glm("logistic", [0.5, -1.0], 300, seed=2)
        d.to_csv(tmp_path / "glm.csv")
        p = _write(tmp_path, "model.kind = glm-logistic\ndata.theta_true = 0.5, -1.0\n")
        assert main(["fit", "--config", str(p), "--data", str(tmp_path / "glm.csv"), "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        lib = find_minimizer(build_glm(GLMDataset.from_csv(tmp_path / "glm.csv", "bernoulli")), np.zeros(2), 1e-10)
        printed = [float(v) for v in out.splitlines()[0].split("=")[1].split()]
        np.testing.assert_allclose(printed, lib.theta_n, rtol=1e-9)
        assert "|grad|" in out
        saved = json.loads((tmp_path / "fit.json").read_text())
        np.testing.assert_array_equal(saved["theta_n"], lib.theta_n)

    def test_run_deterministic_draws(self, tmp_path):
        p = _write(tmp_path, SMALL)
        for k in ("a", "b"):
            assert main(["run", "--config", str(p), "--seed", "5", "--out", str(tmp_path / k)]) == 0
        assert (tmp_path / "a" / "draws.csv").read_bytes() == (tmp_path / "b" / "draws.csv").read_bytes()
        assert (tmp_path / "a" / "grid.csv").exists()
        res = json.loads((tmp_path / "a" / "result.json").read_text())
        assert res["provenance"]["seed"] == 5 and res["provenance"]["config_hash"]

    def test_result_independent_of_threads(self, tmp_path):
        text = SMALL + "coverage.enabled = true\ncoverage.reps = 100\ncoverage.steps = 1500\ncoverage.burn_in = 500\ncoverage.calibrate = raw\n"
        p = _write(tmp_path, text)
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "t1"), "--threads", "1"]) == 0
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "t2"), "--threads", "2"]) == 0
        a = json.loads((tmp_path / "t1" / "result.json").read_text())
        b = json.loads((tmp_path / "t2" / "result.json").read_text())
        assert a == b

    def test_stage_chain(self, tmp_path):
        p = _write(tmp_path, SMALL)
        o = str(tmp_path / "s")
        for cmd in ("simulate", "fit", "laplace", "audit", "tv", "sample"):
            assert main([cmd, "--config", str(p), "--out", o]) == 0, cmd
        for f in ("values.csv", "fit.json", "laplace.json", "audit.json", "tv.json", "draws.csv"):
            assert (tmp_path / "s" / f).exists()

    def test_report_three_runs(self, tmp_path, capsys):
        paths = []
        for k, seed in enumerate((1, 2, 3)):
            p = _write(tmp_path, SMALL.replace("small", f"run{k}"), f"c{k}.cfg")
            o = tmp_path / f"r{k}"
            assert main(["run", "--config", str(p), "--seed", str(seed), "--out", str(o)]) == 0
            paths.append(str(o / "result.json"))
        capsys.readouterr()
        assert main(["report", *paths, "-o", str(tmp_path / "report.csv")]) == 0
        rows = list(csv.reader(open(tmp_path / "report.csv")))
        assert rows[0] == REPORT_COLUMNS
        assert len(rows) == 4
        assert [r[0] for r in rows[1:]] == ["run0", "run1", "run2"]

    def test_bundled_bernoulli_config(self, tmp_path):
        assert main(["run", "--config", str(CONFIGS / "bernoulli_bvm.cfg"), "--out", str(tmp_path)]) == 0
        res = json.loads((tmp_path / "result.json").read_text())
        tvs = [r["tv"] for r in res["runs"]]
        assert [r["n"] for r in res["runs"]] == [50, 200, 800]
        assert tvs[0] > tvs[1] > tvs[2]
