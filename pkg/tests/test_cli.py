import json
import os
import subprocess
import sys

import pytest
import tomli

from nmvsde import cli, schemas

SMALL_CONVERGENCE = """\
seed = 2

[convergence]
n_particles = 8
n_mc = 8
fine_steps = 64
factors = [2, 4, 8]
block_size = 4
"""


def run(tmp_path, *argv):
    return cli.main([*argv, "--out", str(tmp_path)])


def load(path):
    return json.loads(path.read_text())


class TestUsage:
    def test_no_subcommand(self):
        assert cli.main([]) == 1

    def test_unknown_flag(self, tmp_path):
        assert run(tmp_path, "simulate", "--bogus", "1") == 1

    def test_hurst_out_of_range(self, tmp_path, capsys):
        assert run(tmp_path, "fbm-check", "--hurst", "1.2") == 1
        assert "(0, 1)" in capsys.readouterr().err

    def test_small_hurst_needs_override(self, tmp_path):
        assert run(tmp_path, "simulate", "--hurst", "0.3", "--n-particles", "4") == 1
        code = run(tmp_path, "simulate", "--hurst", "0.3", "--n-particles", "4", "--set", "allow_small_hurst=true")
        assert code == 0
        assert load(tmp_path / "summary.json")["warnings"]

    @pytest.mark.parametrize("name", ["", "example62"])
    def test_bad_model_name(self, tmp_path, name):
        assert run(tmp_path, "simulate", "--model", name) == 1

    def test_unknown_parameter(self, tmp_path):
        assert run(tmp_path, "simulate", "--set", "nonsense=3") == 1

    def test_bad_type(self, tmp_path):
        assert run(tmp_path, "simulate", "--n-particles", "many") == 1

    def test_missing_config(self, tmp_path):
        assert run(tmp_path, "simulate", "--config", str(tmp_path / "absent.toml")) == 1

    def test_invalid_toml(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("n_mc = = 3")
        assert run(tmp_path, "convergence", "--config", str(cfg)) == 1

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable_out(self, tmp_path):
        locked = tmp_path / "locked"
        locked.mkdir(mode=0o500)
        assert cli.main(["validate-model", "--n-probes", "5", "--out", str(locked)]) == 1

    def test_out_is_a_file(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["validate-model", "--n-probes", "5", "--out", str(blocker / "sub")]) == 1


class TestConfig:
    def test_flags_beat_file(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("seed = 4\n[simulate]\nn_particles = 6\nn_steps = 8\nhurst = 0.7\n")
        assert run(tmp_path, "simulate", "--config", str(cfg), "--hurst", "0.9", "--seed", "5") == 0
        echo = load(tmp_path / "summary.json")["config"]
        assert echo["hurst"] == 0.9 and echo["seed"] == 5 and echo["n_particles"] == 6

    def test_echo_round_trips(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL_CONVERGENCE)
        assert run(tmp_path / "a", "convergence", "--config", str(cfg)) == 0
        echo = load(tmp_path / "a" / "convergence.json")["config"]
        # write the echo back as a config file and run again
        lines = ["[convergence]"]
        for key, value in echo.items():
            if value is not None:
                lines.append(f"{key} = {json.dumps(value)}")
        again = tmp_path / "again.toml"
        again.write_text("\n".join(lines) + "\n")
        assert tomli.loads(again.read_text())["convergence"]["factors"] == [2, 4, 8]
        assert run(tmp_path / "b", "convergence", "--config", str(again)) == 0
        assert (tmp_path / "a" / "convergence.json").read_bytes() == (tmp_path / "b" / "convergence.json").read_bytes()


class TestCommands:
    def test_fbm_check_brownian(self, tmp_path):
        assert run(tmp_path, "fbm-check", "--hurst", "0.5", "--n-paths", "2000") == 0
        doc = load(tmp_path / "fbm_check.json")
        schemas.validate("fbm-check", doc)
        assert doc["passed"] and len(doc["checks"]) == 4

    def test_fbm_check_dump_and_read(self, tmp_path):
        assert run(tmp_path / "a", "fbm-check", "--n-paths", "3000", "--dump") == 0
        dump = tmp_path / "a" / "paths.fbmp"
        assert dump.exists() and load(tmp_path / "a" / "fbm_check.json")["dump"] == "paths.fbmp"
        assert run(tmp_path / "b", "fbm-check", "--input", str(dump)) == 0
        doc = load(tmp_path / "b" / "fbm_check.json")
        assert doc["checks"][0]["details"]["n_paths"] == 3000

    def test_simulate_additive_exact(self, tmp_path):
        assert run(tmp_path, "simulate", "--model", "additive", "--n-steps", "128", "--seed", "17") == 0
        doc = load(tmp_path / "summary.json")
        schemas.validate("simulate", doc)
        assert doc["exact_check"]["passed"]
        rows = (tmp_path / "trajectory.csv").read_bytes().split(b"\r\n")
        assert rows[0] == b"time,particle,component,value"
        assert len(rows) == 1 + (128 + 128 + 1) * 256 + 1  # m = M since the delay equals the horizon

    def test_simulate_example(self, tmp_path):
        assert run(tmp_path, "simulate", "--n-steps", "32") == 0
        doc = load(tmp_path / "summary.json")
        assert doc["status"] == "pass" and doc["exact_check"] is None
        assert doc["terminal"]["time"] == 1.0

    def test_simulate_divergence(self, tmp_path):
        # four steps of size 1 with a squared delay term push the example past overflow
        code = run(tmp_path, "simulate", "--n-steps", "64", "--set", "horizon=64.0", "--set", "n_particles=4", "--seed", "1")
        doc = load(tmp_path / "summary.json")
        assert code == 3
        assert doc["status"] == "diverged" and doc["divergence"]["step"] >= 1

    def test_validate_model(self, tmp_path):
        assert run(tmp_path, "validate-model", "--n-probes", "50") == 0
        doc = load(tmp_path / "validate_model.json")
        assert doc["report"]["contraction_ratio"] == 0.5 and doc["report"]["diffusion_x_dependent"]

    def test_convergence_outputs(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL_CONVERGENCE)
        assert run(tmp_path, "convergence", "--config", str(cfg)) == 0
        doc = load(tmp_path / "convergence.json")
        schemas.validate("convergence", doc)
        for key in ("slope", "slope_stderr", "mse_slope", "r_squared"):
            assert doc["report"][key] is not None
        assert (tmp_path / "convergence_levels.csv").exists()
        svg = (tmp_path / "convergence.svg").read_text()
        assert svg.lstrip().startswith("<?xml") and "<svg" in svg

    def test_convergence_additive_exact(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SMALL_CONVERGENCE)
        assert run(tmp_path, "convergence", "--config", str(cfg), "--model", "additive") == 0
        assert load(tmp_path / "convergence.json")["report"]["exact"]
        assert not (tmp_path / "convergence.svg").exists()

    @pytest.mark.parametrize("command,slope", [("convergence", 0.8), ("chaos", -0.5)])
    def test_synthetic_slope(self, tmp_path, command, slope):
        assert run(tmp_path, command, "--synthetic-slope", str(slope)) == 0
        doc = load(tmp_path / f"{command}.json")
        schemas.validate(command, doc)
        assert abs(doc["report"]["slope"] - slope) <= 1e-12

    def test_chaos_small(self, tmp_path):
        argv = ["chaos", "--n-steps", "16", "--n-mc", "6", "--reference-count", "64", "--set", "particle_counts=[4, 8, 16]"]
        assert run(tmp_path, *argv) == 0
        doc = load(tmp_path / "chaos.json")
        schemas.validate("chaos", doc)
        assert doc["report"]["particle_counts"] == [4, 8, 16]

    def test_study_failure_exit_two(self, tmp_path):
        argv = ["convergence", "--set", "horizon=128.0", "--set", "delay=16.0", "--fine-steps", "512", "--set", "factors=[4, 8, 16]"]
        argv += ["--n-particles", "4", "--n-mc", "4"]
        assert run(tmp_path, *argv) == 2
        doc = load(tmp_path / "convergence.json")
        schemas.validate("convergence", doc)
        assert doc["report"] is None and "levels" in doc["error"]


def test_threads_do_not_change_outputs(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL_CONVERGENCE)
    for t in (1, 3):
        assert run(tmp_path / str(t), "convergence", "--config", str(cfg), "--threads", str(t)) == 0
    for name in ("convergence.json", "convergence_levels.csv", "convergence.svg"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "3" / name).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "nmvsde", "validate-model", "--n-probes", "5", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
