import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from umpc.cli import (
    EXIT_COLLISION,
    EXIT_CONFIG,
    EXIT_OK,
    LOG_COLUMNS,
    ConfigError,
    load_scenario,
    main,
    write_distances_csv,
    write_log_csv,
    write_timing_csv,
)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

SOLO_TOML = """\
name = "solo"
duration_s = 8.0

[[robots]]
id = "r1"
radius_m = 0.75
path = [[0.0, 0.0], [3.0, 0.0]]
"""


@pytest.fixture
def solo_toml(tmp_path):
    p = tmp_path / "solo.toml"
    p.write_text(SOLO_TOML)
    return p


class TestLoadScenario:
    def test_bundled_chicken(self):
        cfg = load_scenario(SCENARIOS / "chicken.toml")
        assert [r.robot_id for r in cfg.robots] == ["left", "right"]
        assert cfg.duration == 60.0
        assert cfg.mpc.r_robot == 0.9
        assert cfg.robots[0].radius == 0.75
        assert cfg.chance_p == 0.95

    def test_defaults_initial_state_to_first_waypoint(self, solo_toml):
        cfg = load_scenario(solo_toml)
        r = cfg.robots[0]
        assert (r.initial.x, r.initial.y) == (0.0, 0.0)
        assert r.initial.v == 0.0

    def test_overrides(self, solo_toml):
        cfg = load_scenario(solo_toml, seed_override=7, noise_std=0.05,
                            disable_obstacle_constraints=True)
        assert cfg.rng_seed == 7
        assert cfg.noise_std == 0.05
        assert cfg.disable_obstacle_constraints

    def test_malformed_toml_reports_line(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("name = \"x\"\nduration_s ==== 5\n")
        with pytest.raises(ConfigError, match=r"line 2"):
            load_scenario(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_scenario(tmp_path / "nope.toml")

    def test_unknown_mpc_key(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text(SOLO_TOML + "\n[mpc]\nbogus_key = 1.0\n")
        with pytest.raises(ConfigError, match="unknown \\[mpc\\] keys"):
            load_scenario(p)

    def test_robot_entry_error_names_index(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("[[robots]]\nid = \"a\"\npath = [[0.0, 0.0]]\n")
        with pytest.raises(ConfigError, match=r"\[\[robots\]\] entry 0"):
            load_scenario(p)


class TestRunCommand:
    def test_solo_end_to_end(self, solo_toml, tmp_path):
        out = tmp_path / "out"
        rc = main(["run", "--config", str(solo_toml), "--out", str(out)])
        assert rc == EXIT_OK
        assert (out / "log.csv").exists()
        assert (out / "distances.csv").exists()
        assert (out / "timing.csv").exists()
        assert (out / "trajectory_r1.svg").exists()
        assert not (out / "summary.json").exists()  # needs >= 2 robots
        with (out / "log.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == LOG_COLUMNS
        assert len(rows) > 1
        assert rows[1][1] == "r1"

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("duration_s ==== 5\n")
        rc = main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == EXIT_CONFIG

    def test_negative_control_collides_with_exit_2(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main([
            "run", "--config", str(SCENARIOS / "chicken.toml"),
            "--out", str(out), "--disable-obstacle-constraints",
        ])
        assert rc == EXIT_COLLISION
        assert "collision" in capsys.readouterr().err
        summary = json.loads((out / "summary.json").read_text())
        assert summary["collision"] is not None
        assert summary["min_distance_m"] < 1.5


class TestEmitters:
    def test_log_csv_is_deterministic_text(self, tmp_path, chicken_run):
        log, _ = chicken_run
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_log_csv(log, a)
        write_log_csv(log, b)
        assert a.read_bytes() == b.read_bytes()
        # wall time is quarantined to timing.csv
        assert "wall_time" not in a.read_text().splitlines()[0]

    def test_distances_csv_schema(self, tmp_path, chicken_run):
        log, _ = chicken_run
        p = tmp_path / "d.csv"
        write_distances_csv(log, p)
        with p.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time_s", "robot_i", "robot_j", "distance_m"]
        ds = [float(r[3]) for r in rows[1:]]
        assert min(ds) == pytest.approx(
            min(d for _, _, _, d in log.distances), rel=1e-12)

    def test_timing_csv_schema(self, tmp_path, chicken_run):
        log, _ = chicken_run
        p = tmp_path / "t.csv"
        write_timing_csv(log, p)
        with p.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["time_s", "robot_id", "wall_time_s"]
        assert len(rows) == len(log.records) + 1

    def test_log_csv_roundtrips_floats_exactly(self, tmp_path, chicken_run):
        log, _ = chicken_run
        p = tmp_path / "log.csv"
        write_log_csv(log, p)
        with p.open() as fh:
            rows = list(csv.DictReader(fh))
        rec = log.records[0]
        assert float(rows[0]["x_m"]) == rec.state.x
        assert float(rows[0]["s_opt"]) == rec.s_opt


class TestRegionsCommand:
    def test_prints_areas_and_writes_svg(self, tmp_path, capsys):
        rc = main(["regions", "--p", "0.9", "--sigma", "2", "0.8", "1",
                   "--r-sum", "1.5", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "ellipse area" in out and "rectangle area" in out
        lines = {l.split(":")[0]: float(l.split(":")[1].split()[0])
                 for l in out.strip().splitlines()}
        assert lines["rectangle/ellipse ratio"] > 1.0
        svg = (tmp_path / "regions.svg").read_text()
        assert svg.startswith("<svg") or "<svg" in svg

    def test_rejects_indefinite_sigma(self, tmp_path):
        rc = main(["regions", "--sigma", "1", "2", "1", "--out", str(tmp_path)])
        assert rc == EXIT_CONFIG


class TestErrorMapCommand:
    def test_writes_csv_and_svg(self, tmp_path, capsys):
        rc = main(["error-map", "--sigma", "25", "0", "1", "--r-sum", "1.5",
                   "--resolution", "64", "--out", str(tmp_path)])
        assert rc == EXIT_OK
        assert "max |error|" in capsys.readouterr().out
        with (tmp_path / "error_map.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["theta_rad", "error_m"]
        assert len(rows) == 65
        thetas = [float(r[0]) for r in rows[1:]]
        assert thetas[0] == 0.0
        assert thetas[-1] < 2 * math.pi
        errs = np.array([float(r[1]) for r in rows[1:]])
        # zero on axes, non-zero off-axis for this elongated covariance
        assert abs(errs[0]) < 1e-6
        assert abs(errs[16]) < 1e-6  # theta = pi/2
        assert np.max(np.abs(errs)) > 1e-3
        assert (tmp_path / "error_map.svg").exists()

    def test_low_resolution_rejected(self, tmp_path, capsys):
        rc = main(["error-map", "--sigma", "1", "0", "1",
                   "--resolution", "8", "--out", str(tmp_path)])
        assert rc == EXIT_CONFIG
        assert "resolution" in capsys.readouterr().err


class TestSubprocessEntry:
    def test_module_invocation(self, solo_toml, tmp_path):
        import subprocess
        import sys
        out = tmp_path / "out"
        proc = subprocess.run(
            [sys.executable, "-m", "umpc.cli", "run",
             "--config", str(solo_toml), "--out", str(out)],
            capture_output=True, text=True, env={"PATH": "/usr/bin:/bin",
                                                 "UMPC_LOG": "info"},
        )
        assert proc.returncode == 0, proc.stderr
        assert "running scenario" in proc.stderr
        assert (out / "log.csv").exists()
