import csv
import json
import re

import pytest

from cli import main


def run(tmp_path, *args):
    return main(["--out", str(tmp_path / "out"), *args])


class TestEval:
    def test_reference_spectrum(self, tmp_path, capsys):
        assert run(tmp_path, "eval", "--lambda", "3,2,1", "--n", "3", "--p", "2") == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "F=60"
        assert "grad=27,32,35" in lines
        assert lines[-1] == "in_cone=true"

    def test_symmetric_spectrum(self, tmp_path, capsys):
        assert run(tmp_path, "eval", "--lambda", "1,1,1", "--n", "3", "--p", "2") == 0
        out = capsys.readouterr().out
        assert "F=8\n" in out
        assert "Ftilde=2\n" in out

    def test_outside_the_cone(self, tmp_path, capsys):
        assert run(tmp_path, "eval", "--lambda", "1,1,-3", "--n", "3", "--p", "2") == 0
        out = capsys.readouterr().out
        assert "F=8\n" in out
        assert "in_cone=false" in out
        assert "Ftilde" not in out

    def test_expression(self, tmp_path, capsys):
        assert run(tmp_path, "eval", "--f", "1+r2", "--x", "0.3,0.4,0") == 0
        assert capsys.readouterr().out.strip() == "f=1.25"

    def test_expression_with_normal(self, tmp_path, capsys):
        assert run(tmp_path, "eval", "--f", "w*exp(z)", "--x", "0,0", "--z", "0", "--nu", "0,0.6,0.8") == 0
        assert capsys.readouterr().out.strip() == "f=1.25"

    @pytest.mark.parametrize("args", [
        ["eval"],
        ["eval", "--lambda", "3,2"],
        ["eval", "--lambda", "3,2", "--n", "3", "--p", "2"],
        ["eval", "--f", "1+"],
        ["eval", "--f", "x4", "--x", "0,0"],
        ["eval", "--lambda", "a,b", "--n", "2", "--p", "1"],
    ])
    def test_usage_errors(self, tmp_path, args):
        assert run(tmp_path, *args) == 1


class TestVerify:
    def test_key1_below_half_dimension(self, tmp_path):
        assert run(tmp_path, "verify", "--suite", "key1", "--n", "4", "--p", "1", "--count", "10") == 1

    def test_unknown_suite(self, tmp_path):
        assert run(tmp_path, "verify", "--suite", "nope", "--n", "3", "--p", "2") == 1

    def test_report_is_reproducible(self, tmp_path):
        args = ["verify", "--suite", "dinew", "--n", "3", "--p", "2", "--count", "50", "--seed", "9"]
        assert main(["--out", str(tmp_path / "a"), *args]) == 0
        assert main(["--out", str(tmp_path / "b"), *args]) == 0
        first = (tmp_path / "a" / "verify_dinew.json").read_bytes()
        assert first == (tmp_path / "b" / "verify_dinew.json").read_bytes()
        data = json.loads(first)
        assert data["passed"] is True
        assert data["seed"] == 9
        assert "worstSlack" in data

    def test_all_skips_key1_for_small_p(self, tmp_path):
        assert run(tmp_path, "verify", "--suite", "all", "--n", "4", "--p", "1", "--count", "20") == 0
        out = tmp_path / "out"
        assert not (out / "verify_key1.json").exists()
        assert (out / "verify_ellipticity.json").exists()


class TestSolve:
    def test_rejects_non_positive_f(self, tmp_path, disk_config, write_config):
        path = write_config({**disk_config, "f": "-1"})
        assert run(tmp_path, "solve", "--config", path) == 1

    def test_rejects_unknown_keys(self, tmp_path, disk_config, write_config):
        path = write_config({**disk_config, "colour": "blue"})
        assert run(tmp_path, "solve", "--config", path) == 1

    def test_rejects_missing_config(self, tmp_path):
        assert run(tmp_path, "solve", "--config", str(tmp_path / "missing.json")) == 1

    def test_writes_solution_and_report(self, tmp_path, disk_config, write_config, capsys):
        path = write_config(disk_config)
        assert run(tmp_path, "solve", "--config", path, "--h", "0.2") == 0
        assert "CONVERGED" in capsys.readouterr().out

        out = tmp_path / "out"
        report = json.loads((out / "report.json").read_text())
        assert report["report_metadata"]["status"] == "CONVERGED"
        assert report["summary"]["converged"] is True
        assert report["homotopy"]["final_t"] == 1.0

        with open(out / "solution.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["i1", "i2", "x1", "x2", "u"]
        assert len(rows) - 1 == report["summary"]["node_count"]
        assert all(float(row[-1]) <= 0 for row in rows[1:])

    @pytest.mark.slow
    def test_stall_is_a_solver_failure(self, tmp_path, disk_config, write_config):
        data = {**disk_config, "f": "100", "grid": {"h": 0.2},
                "solver": {"max_step_halvings": 4, "max_newton": 20}}
        assert run(tmp_path, "solve", "--config", write_config(data)) == 2
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["report_metadata"]["status"] == "STALLED"
        assert "after 4 consecutive failed steps" in report["summary"]["stall_message"]


class TestRadialAndConverge:
    def test_radial(self, tmp_path, capsys):
        assert run(tmp_path, "radial", "--n", "2", "--p", "1", "--r", "0.8", "--f", "1", "--points", "21") == 0
        out = capsys.readouterr().out
        u0 = float(re.search(r"u\(0\) = (\S+)", out).group(1))
        assert u0 == pytest.approx(-0.4, abs=1e-8)
        with open(tmp_path / "out" / "radial_profile.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["rho", "u"]
        assert len(rows) == 22

    def test_radial_rejects_non_radial_f(self, tmp_path):
        assert run(tmp_path, "radial", "--n", "2", "--p", "1", "--r", "0.8", "--f", "1+x1") == 1

    def test_converge(self, tmp_path, disk_config, write_config):
        path = write_config(disk_config)
        assert run(tmp_path, "converge", "--config", path, "--h-list", "0.2,0.1") == 0
        with open(tmp_path / "out" / "convergence.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["h", "nodes", "linf_error", "order"]
        assert len(rows) == 3
        assert rows[1][3] == ""
        assert float(rows[2][2]) < float(rows[1][2])

    def test_converge_needs_an_oracle(self, tmp_path, disk_config, write_config):
        path = write_config({**disk_config, "f": "1 + x1^2"})
        assert run(tmp_path, "converge", "--config", path, "--h-list", "0.2") == 1
