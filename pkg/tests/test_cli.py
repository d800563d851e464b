import json
import os

import pytest

from czbench import cli
from czbench.bench import ConfigurationError
from czbench.cli import apply_overrides

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "benchmark.json")
SCHEMA_PATH = os.path.join(os.path.dirname(__file__), "..", "docs",
                           "report_schema.json")


def run_cli(*argv):
    return cli.main(list(argv))


class TestOverrides:
    def test_dotted_path_and_json_values(self, fresh_config):
        out = apply_overrides(fresh_config, ["solver.tol=1e-8", "run.method=picard"])
        assert out["solver"]["tol"] == 1e-8
        assert out["run"]["method"] == "picard"
        # The input is untouched.
        assert fresh_config["solver"]["tol"] == 1e-06

    def test_bare_aliases(self, fresh_config):
        out = apply_overrides(fresh_config, ["method=dogleg", "case=itc", "mesh=fine"])
        assert out["run"] == {"method": "dogleg", "case": "itc", "mesh": "fine"}

    def test_unknown_key_rejected(self, fresh_config):
        with pytest.raises(ConfigurationError):
            apply_overrides(fresh_config, ["solver.bogus=1"])
        with pytest.raises(ConfigurationError):
            apply_overrides(fresh_config, ["nonsense"])


class TestSolveCommand:
    def test_converged_solve_exits_zero(self, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = run_cli("solve", "--config", CONFIG,
                       "--set", "method=newton", "--set", "case=itp",
                       "--out", str(out))
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["status"] == "converged"
        assert doc["method"] == "newton"

    def test_non_converged_solve_exits_two(self, tmp_path):
        out = tmp_path / "report.json"
        code = run_cli("solve", "--config", CONFIG,
                       "--set", "method=picard", "--set", "case=itc",
                       "--out", str(out))
        assert code == 2
        doc = json.loads(out.read_text())
        assert doc["status"] != "converged"

    def test_solve_report_matches_schema(self, tmp_path):
        import jsonschema
        out = tmp_path / "report.json"
        run_cli("solve", "--config", CONFIG, "--set", "method=lbfgs",
                "--set", "case=itc", "--out", str(out))
        with open(SCHEMA_PATH, encoding="utf-8") as fh:
            schema = json.load(fh)
        jsonschema.validate(json.loads(out.read_text()), schema)

    def test_override_equals_editing_config(self, tmp_path):
        # --set must behave exactly like editing the file.
        edited = json.loads(open(CONFIG, encoding="utf-8").read())
        edited["run"] = {"method": "broyden", "case": "ItP", "mesh": "coarse"}
        edited_path = tmp_path / "edited.json"
        edited_path.write_text(json.dumps(edited))
        out_a = tmp_path / "a.json"
        out_b = tmp_path / "b.json"
        assert run_cli("solve", "--config", CONFIG, "--set", "method=broyden",
                       "--set", "case=ItP", "--out", str(out_a)) == 0
        assert run_cli("solve", "--config", str(edited_path), "--out", str(out_b)) == 0
        assert out_a.read_text() == out_b.read_text()


class TestBenchCommand:
    def test_writes_all_outputs(self, tmp_path, fresh_config, capsys):
        small = fresh_config
        small["bench"]["methods"] = ["newton", "picard"]
        small["bench"]["meshes"] = ["coarse"]
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(small))
        out_dir = tmp_path / "results"
        code = run_cli("bench", "--config", str(cfg_path), "--out", str(out_dir))
        assert code == 0
        assert (out_dir / "report.json").exists()
        assert (out_dir / "table.txt").exists()
        assert (out_dir / "residuals" / "newton_ItP_coarse.csv").exists()
        table = (out_dir / "table.txt").read_text()
        assert "inf" in table  # picard fails the full-opening case

    def test_bench_requires_out(self, capsys):
        assert run_cli("bench", "--config", CONFIG) == 1


class TestDiagnosticsCommands:
    def test_surface_csv(self, tmp_path, fresh_config):
        fresh_config["surface"]["resolution"] = 11
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(fresh_config))
        out = tmp_path / "surface.csv"
        code = run_cli("surface", "--config", str(cfg_path),
                       "--set", "case=itc", "--out", str(out))
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "u1,u2,residual_norm"
        assert len(lines) == 1 + 11 * 11

    def test_cond_trace_csv(self, tmp_path):
        out = tmp_path / "trace.csv"
        code = run_cli("cond-trace", "--config", CONFIG,
                       "--set", "case=itc", "--set", "method=broyden",
                       "--out", str(out))
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "iteration,kappa_exact,kappa_estimate"
        assert len(lines) > 3


class TestCalibrateCommand:
    def test_round_trips_existing_values(self, tmp_path):
        out = tmp_path / "calibrated.json"
        code = run_cli("calibrate", "--config", CONFIG, "--out", str(out))
        assert code == 0
        doc = json.loads(out.read_text())
        ref = json.loads(open(CONFIG, encoding="utf-8").read())
        assert doc["cases"] == ref["cases"]


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        assert run_cli("frobnicate", "--config", CONFIG) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert run_cli("solve", "--config", CONFIG, "--frob") == 1

    def test_missing_config_file(self, capsys):
        assert run_cli("solve", "--config", "/nonexistent.json") == 1

    def test_invalid_json_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run_cli("solve", "--config", str(bad)) == 1

    def test_unknown_override_key(self, capsys):
        assert run_cli("solve", "--config", CONFIG, "--set", "solver.frob=1") == 1

    def test_unknown_case_value(self, capsys):
        assert run_cli("solve", "--config", CONFIG, "--set", "case=itx") == 1
