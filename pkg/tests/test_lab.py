import json
import subprocess
import sys
from pathlib import Path

import pytest

from torusflow import ConfigInvalid, MismatchedScenarios
from torusflow.lab import SCENARIOS, compare_runs, load_config, main, run_scenario

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def small_smooth_config():
    return {
        "scenario": {"name": "smooth_consistency"},
        "grid": {"dimension": 2, "derivative_order": 2, "resolutions": [16, 32, 64]},
        "metric": {"kind": "conformal", "expression": "0.1*sin(2*pi*x1)*sin(2*pi*x2)"},
        "background": {"kind": "flat"},
        "tolerances": {"min_order": 1.8, "max_rel_error": 1e-2, "gauss_bonnet_abs": 1e-6},
    }


class TestConfig:
    def test_all_shipped_configs_parse(self):
        names = set(SCENARIOS)
        for path in sorted(CONFIG_DIR.glob("*.toml")):
            cfg = load_config(path)
            assert cfg["scenario"]["name"] in names

    def test_unknown_scenario_rejected(self, tmp_path):
        cfg = {"scenario": {"name": "nope"}}
        with pytest.raises(ConfigInvalid):
            run_scenario(cfg, tmp_path)

    def test_missing_tolerance_rejected(self, tmp_path):
        cfg = small_smooth_config()
        del cfg["tolerances"]["max_rel_error"]
        with pytest.raises(ConfigInvalid):
            run_scenario(cfg, tmp_path)

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigInvalid):
            load_config("/nonexistent/config.toml")


class TestRunScenario:
    def test_small_run_passes_and_writes_artifacts(self, tmp_path):
        summary = run_scenario(small_smooth_config(), tmp_path)
        assert summary["passed"] and summary["exit_code"] == 0
        base = tmp_path / "smooth_consistency"
        assert (base / "summary.json").exists()
        assert (base / "table.csv").exists()
        for n in (16, 32, 64):
            assert (base / str(n) / "diagnostics.csv").exists()
            assert (base / str(n) / "summary.json").exists()
        first = (base / "table.csv").read_text().splitlines()[0]
        assert first.startswith("# schema:")

    def test_tolerance_failure_exit_code(self, tmp_path):
        cfg = small_smooth_config()
        cfg["tolerances"]["max_rel_error"] = 1e-12
        summary = run_scenario(cfg, tmp_path)
        assert not summary["passed"]
        assert summary["exit_code"] == 2

    def test_aborted_flow_exit_code(self, tmp_path):
        cfg = {
            "scenario": {"name": "flow_smooth"},
            "grid": {"dimension": 2, "derivative_order": 2, "resolutions": [16]},
            "metric": {"kind": "conformal", "expression": "0.05*sin(2*pi*x1)*sin(2*pi*x2)"},
            "background": {"kind": "flat"},
            "flow": {"T0": 0.05, "p": 3.0, "dt_policy": "fixed", "dt_fixed": 0.003,
                     "fairness_eps": 1e9, "rhs_cross_check": False},
            "tolerances": {"min_R_step_eps_factor": 1e-6},
        }
        summary = run_scenario(cfg, tmp_path)
        assert summary["exit_code"] == 4
        # the streamed per-step series survives the abort
        diag = (tmp_path / "flow_smooth" / "16" / "diagnostics.csv").read_text()
        assert diag.startswith("# schema: torusflow.diagnostics.v1")

    def test_serial_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_scenario(small_smooth_config(), a)
        run_scenario(small_smooth_config(), b)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_thread_count_invariance(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_scenario(small_smooth_config(), a, threads=1)
        run_scenario(small_smooth_config(), b, threads=3)
        rep = compare_runs(a / "smooth_consistency", b / "smooth_consistency")
        assert rep["identical_within_tol"]


class TestCompareRuns:
    def test_identical_runs_compare_clean(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_scenario(small_smooth_config(), a)
        run_scenario(small_smooth_config(), b)
        rep = compare_runs(a / "smooth_consistency", b / "smooth_consistency")
        assert rep["identical_within_tol"]
        assert rep["keys_compared"] > 5

    def test_drift_flagged(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_scenario(small_smooth_config(), a)
        run_scenario(small_smooth_config(), b)
        summary_path = b / "smooth_consistency" / "summary.json"
        payload = json.loads(summary_path.read_text())
        payload["checks"]["finest_rel_error"] *= 1.001
        summary_path.write_text(json.dumps(payload, sort_keys=True))
        rep = compare_runs(a / "smooth_consistency", b / "smooth_consistency")
        assert not rep["identical_within_tol"]
        assert any("finest_rel_error" in k for k in rep["drift"])

    def test_mismatched_scenarios_rejected(self, tmp_path):
        a = tmp_path / "a"
        run_scenario(small_smooth_config(), a)
        cfg = small_smooth_config()
        cfg["grid"]["resolutions"] = [16, 32]
        b = tmp_path / "b"
        run_scenario(cfg, b)
        with pytest.raises(MismatchedScenarios):
            compare_runs(a / "smooth_consistency", b / "smooth_consistency")


class TestCli:
    def test_list_scenarios(self, capsys):
        assert main(["list-scenarios"]) == 0
        out = capsys.readouterr().out
        assert "smooth_consistency" in out
        assert "flow_singular_floor" in out

    def test_run_and_compare_roundtrip(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(
            '[scenario]\nname = "cutoff_decay"\n'
            "[grid]\ndimension = 2\nderivative_order = 2\nresolution = 64\n"
            '[metric]\nkind = "cone_point"\nalpha = 0.5\namplitude = 0.2\ncenter = [0.31, 0.47]\n'
            "[cutoff]\nq = 1.5\neps_sequence = [0.2, 0.141, 0.1]\n"
            "[tolerances]\nmax_exponent_gap = 0.3\n"
        )
        assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
        assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
        code = main(["compare", str(tmp_path / "a" / "cutoff_decay"),
                     str(tmp_path / "b" / "cutoff_decay")])
        assert code == 0

    def test_bad_config_exit_code(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.toml"
        cfg_path.write_text('[scenario]\nname = "unknown_thing"\n')
        assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 3

    def test_console_script_subprocess(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "torusflow.lab", "list-scenarios"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "barrier_10A" in proc.stdout
