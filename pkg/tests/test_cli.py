import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from msgate import cli
from msgate.config import canonical_json
from msgate.controls import DriveWaveform, uniform_grid
from msgate.io import load_drive, read_csv, save_drive
from msgate.optimize import OptimizationFailure

SMALL = {
    "trap": {"n_ions": 2, "com_frequencies_mhz": [1.6, 1.5, 0.3]},
    "laser": {"detuning_mode": "offset_from_x_com_khz", "value": 4.7},
    "gates": [{"ions": [0, 1]}],
    "drive": {"scheme": "ampm", "segments": 16, "duration_us": 150, "max_rabi_khz": 100,
              "shared_groups": [[0, 1]]},
    "optimizer": {"instances": 2, "budget": 2000, "seed": 3, "max_infidelity": 1e-6, "tolerance": 1e-24},
    "simulate": {"samples": 11},
}


def write_config(tmp_path, name="cfg.json", **changes):
    raw = copy.deepcopy(SMALL)
    raw["outputs"] = {"directory": str(tmp_path / "out")}
    for path, value in changes.items():
        node = raw
        *parents, leaf = path.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    path = tmp_path / name
    path.write_text(json.dumps(raw, indent=1))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def optimized(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("opt")
    cfg = write_config(tmp)
    assert run("optimize", "--config", cfg, "--threads", 1) == 0
    return cfg, tmp / "out"


# --- modes ------------------------------------------------------------------------

def test_modes_five_ions(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"trap.n_ions": 5, "gates": [{"ions": [0, 1]}]})
    assert run("modes", "--config", cfg) == 0
    header, rows = read_csv(tmp_path / "out" / "modes.csv")
    assert header[:4] == ["mode", "axis", "frequency_mhz", "relative_detuning_khz"]
    assert header[4:] == [f"eta_ion{j}" for j in range(5)] + [f"b_ion{j}" for j in range(5)]
    assert len(rows) == 10
    assert rows[0][0] == "x0" and float(rows[0][2]) == pytest.approx(1.6, rel=1e-12)
    assert float(rows[0][3]) == pytest.approx(-4.7, rel=1e-9)
    assert "10 coupled modes" in capsys.readouterr().out


def test_modes_single_ion(tmp_path):
    cfg = write_config(tmp_path, **{"trap.n_ions": 1})
    raw = json.loads(cfg.read_text())
    del raw["gates"]
    raw["drive"]["shared_groups"] = []
    cfg.write_text(json.dumps(raw))
    assert run("modes", "--config", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "modes.csv")
    assert [r[1] for r in rows] == ["x", "y"]
    # every other command needs a gate
    assert run("optimize", "--config", cfg) == 2


# --- optimize ---------------------------------------------------------------------

def test_optimize_outputs(optimized):
    cfg, out = optimized
    report = json.loads((out / "report.json").read_text())
    assert report["infidelity"] < 1e-6
    assert report["constraints"]["passed"]
    assert report["seed"] == 3 and report["threads"] == 1
    # the echoed config is byte-identical after canonicalization
    assert canonical_json(report["config"]) == canonical_json(json.loads(cfg.read_text()))
    header, rows = read_csv(out / "drive.csv")
    assert header == ["ion", "segment", "t_start_s", "t_end_s", "omega_rad_s", "phi_rad"]
    assert len(rows) == 2 * 16
    drive = load_drive(out / "drive.json")
    assert drive.ions == (0, 1) and drive.n_segments == 16
    header, rows = read_csv(out / "cost_history.csv")
    assert header == ["instance", "iteration", "cost"]
    assert {r[0] for r in rows} == {"0", "1"}
    best = [float(r[2]) for r in rows if int(r[0]) == report["best"]["best_instance"]]
    assert best[-1] == pytest.approx(report["best"]["cost"]["total"], rel=1e-12, abs=1e-30)


def test_optimize_is_reproducible(optimized, tmp_path):
    cfg, out = optimized
    first = json.loads((out / "report.json").read_text())
    assert run("optimize", "--config", cfg, "--out", tmp_path / "again", "--threads", 1) == 0
    second = json.loads((tmp_path / "again" / "report.json").read_text())
    assert abs(first["infidelity"] - second["infidelity"]) <= 1e-10
    np.testing.assert_allclose(load_drive(tmp_path / "again" / "drive.json").values,
                               load_drive(out / "drive.json").values, rtol=0, atol=1e-10)
    assert second["overrides"] == {"directory": str(tmp_path / "again")}


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path)
    assert run("optimize", "--config", cfg, "--seed", 11, "--threads", 1) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["seed"] == 11 and report["overrides"]["seed"] == 11
    assert report["config"]["optimizer"]["seed"] == 3


def test_multiple_runs_use_consecutive_seeds(tmp_path):
    cfg = write_config(tmp_path, **{"optimizer.runs": 2})
    assert run("optimize", "--config", cfg, "--threads", 1) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert [r["seed"] for r in report["runs"]] == [3, 4]
    assert report["infidelity_mean"] == pytest.approx(np.mean([r["infidelity"] for r in report["runs"]]))


def test_thread_environment(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert run("optimize", "--config", cfg) == 0
    assert json.loads((tmp_path / "out" / "report.json").read_text())["threads"] == 2
    assert run("optimize", "--config", cfg, "--threads", 1) == 0
    assert json.loads((tmp_path / "out" / "report.json").read_text())["threads"] == 1
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert run("optimize", "--config", cfg) == 2
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli.resolve_threads(None) >= 1
    with pytest.raises(Exception):
        cli.resolve_threads(0)


# --- exit codes ----------------------------------------------------------------------

@pytest.mark.parametrize("changes", [
    {"trap.wavevector": {"direction": [0, 0, 0]}},
    {"gates": [{"ions": [0, 2]}]},
    {"trap.n_ions": 20},
    {"gates": [{"ions": [0, 1]}, {"ions": [0, 1], "phases": {"0,1": 0.1}}]},
    {"drive.scheme": "fm"},
])
def test_invalid_input_exits_2(tmp_path, changes, capsys):
    cfg = write_config(tmp_path, **changes)
    command = "modes" if "trap.n_ions" in changes else "optimize"
    assert run(command, "--config", cfg, "--threads", 1) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_config_exits_2(tmp_path):
    assert run("optimize", "--config", tmp_path / "none.json") == 2


def test_grid_mismatch_exits_2(optimized, tmp_path):
    cfg, out = optimized
    other = write_config(tmp_path, **{"drive.segments": 8})
    assert run("simulate", "--config", other, "--drive", out / "drive.json") == 2
    assert run("simulate", "--config", other) == 2  # no drive given


def test_drive_outside_chain_exits_2(tmp_path):
    cfg = write_config(tmp_path)
    grid = uniform_grid(150e-6, 16)
    save_drive(DriveWaveform.zeros(grid, (0, 5)), tmp_path / "d.json")
    assert run("simulate", "--config", cfg, "--drive", tmp_path / "d.json") == 2


def test_quality_threshold_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, **{"optimizer.budget": 1, "optimizer.instances": 1,
                                    "optimizer.max_infidelity": 1e-30})
    assert run("optimize", "--config", cfg, "--threads", 1) == 3
    assert "above threshold" in capsys.readouterr().err
    # the artifacts are still written
    assert (tmp_path / "out" / "report.json").exists()


def test_solver_failure_exits_4(tmp_path, monkeypatch):
    def fail(problem):
        raise OptimizationFailure("all instances diverged")

    monkeypatch.setattr(cli, "optimize", fail)
    assert run("optimize", "--config", write_config(tmp_path), "--threads", 1) == 4


# --- simulate ---------------------------------------------------------------------------

def test_simulate_zero_drive_is_flat(tmp_path):
    cfg = write_config(tmp_path)
    save_drive(DriveWaveform.zeros(uniform_grid(150e-6, 16), (0, 1)), tmp_path / "zero.json")
    assert run("simulate", "--config", cfg, "--drive", tmp_path / "zero.json") == 0
    out = tmp_path / "out"
    header, rows = read_csv(out / "trajectories.csv")
    assert header == ["time_s", "ion", "mode", "alpha_re", "alpha_im"]
    assert len(rows) == 11 * 2 * 4
    assert all(float(r[3]) == 0 and float(r[4]) == 0 for r in rows)
    header, rows = read_csv(out / "phases.csv")
    assert header == ["time_s", "ion_j", "ion_k", "phase_rad", "target_rad"]
    assert all(float(r[3]) == 0 for r in rows)
    header, _ = read_csv(out / "mode_trajectories.csv")
    assert header == ["time_s", "mode", "eta_alpha_re", "eta_alpha_im"]
    report = json.loads((out / "simulate_report.json").read_text())
    assert report["max_final_phase_error_rad"] == pytest.approx(np.pi / 4)


def test_simulate_optimized_drive_closes(optimized, tmp_path):
    cfg, out = optimized
    assert run("simulate", "--config", cfg, "--drive", out / "drive.json", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "simulate_report.json").read_text())
    assert report["max_final_displacement"] < 1e-8
    assert report["max_final_phase_error_rad"] < 1e-6
    assert not report["lamb_dicke_warning"]
    _, rows = read_csv(tmp_path / "phases.csv")
    assert float(rows[-1][3]) == pytest.approx(np.pi / 4, abs=1e-6)
    assert float(rows[0][0]) == 0.0 and float(rows[-1][0]) == pytest.approx(150e-6)


# --- scans ------------------------------------------------------------------------------------

def test_detuning_scan_at_zero_matches_optimize(optimized, tmp_path):
    cfg, out = optimized
    raw = json.loads(cfg.read_text())
    raw["scan"] = {"kind": "detuning", "offset_hz": [-100, 0, 100]}
    path = tmp_path / "scan.json"
    path.write_text(json.dumps(raw))
    assert run("scan", "--config", path, "--drive", out / "drive.json", "--out", tmp_path) == 0
    header, rows = read_csv(tmp_path / "scan_detuning.csv")
    assert header == ["offset_hz", "infidelity", "motional_term", "phase_term"]
    report = json.loads((out / "report.json").read_text())
    assert float(rows[1][1]) == pytest.approx(report["infidelity"], abs=1e-15)
    assert float(rows[0][1]) > float(rows[1][1])


@pytest.mark.parametrize("scan,header", [
    ({"kind": "timing", "error": [-0.01, 0.0, 0.01]}, ["timing_error", "infidelity", "motional_term"]),
    ({"kind": "amplitude", "scale": [0.99, 1.0, 1.01]}, ["amplitude_scale", "infidelity", "max_phase_error_rad"]),
    ({"kind": "filter", "frequency_hz": {"start": 1, "stop": 1000, "num": 4, "log": True}},
     ["frequency_hz", "filter_s2"]),
])
def test_fixed_drive_scans(optimized, tmp_path, scan, header):
    cfg, out = optimized
    path = write_config(tmp_path, scan=scan)
    assert run("scan", "--config", path, "--drive", out / "drive.json") == 0
    got, rows = read_csv(tmp_path / "out" / f"scan_{scan['kind']}.csv")
    assert got == header and len(rows) in (3, 4)


def test_scan_without_drive_optimizes_first(tmp_path):
    path = write_config(tmp_path, scan={"kind": "amplitude", "scale": [1.0]})
    assert run("scan", "--config", path, "--threads", 1) == 0
    summary = json.loads((tmp_path / "out" / "scan_amplitude.json").read_text())
    _, rows = read_csv(tmp_path / "out" / "scan_amplitude.csv")
    assert float(rows[0][1]) == pytest.approx(summary["optimized_infidelity"], abs=1e-15)


def test_scan_needs_scan_section(tmp_path):
    assert run("scan", "--config", write_config(tmp_path)) == 2


def test_domain_scan_resumes(tmp_path, monkeypatch):
    scan = {"kind": "domain", "detuning_mhz": [1.6045, 1.605, 1.6055], "duration_us": [100, 150, 200]}
    path = write_config(tmp_path, scan=scan, **{"optimizer.budget": 100})
    assert run("scan", "--config", path, "--threads", 1) == 0
    out = tmp_path / "out"
    header, rows = read_csv(out / "scan_domain.csv")
    assert header == ["detuning_mhz", "duration_us", "infidelity_mean", "infidelity_std",
                      "infidelity_min", "wall_time_s"]
    assert len(rows) == 9
    assert len(list((out / "domain_cells").glob("*.json"))) == 9

    # a second run reads every cell back instead of optimizing
    def refuse(*args, **kwargs):
        raise AssertionError("cell recomputed")

    monkeypatch.setattr(cli, "run_optimization", refuse)
    assert run("scan", "--config", path, "--threads", 1) == 0
    assert read_csv(out / "scan_domain.csv")[1] == rows

    # a changed seed invalidates the cache
    with pytest.raises(AssertionError, match="recomputed"):
        run("scan", "--config", path, "--threads", 1, "--seed", 4)


def test_power_scan(tmp_path):
    scan = {"kind": "power", "max_rabi_khz": [5, 100], "threshold": 1e-5}
    path = write_config(tmp_path, scan=scan)
    assert run("scan", "--config", path, "--threads", 1) == 0
    out = tmp_path / "out"
    header, rows = read_csv(out / "scan_power.csv")
    assert header[0] == "max_rabi_khz" and len(rows) == 2
    summary = json.loads((out / "scan_power.json").read_text())
    assert summary["min_max_rabi_khz_to_threshold"] == 100
    assert float(rows[0][1]) > 1e-5


# --- benchmark -----------------------------------------------------------------------------------

def test_benchmark(tmp_path):
    path = write_config(tmp_path, **{"optimizer.instances": 1, "optimizer.budget": 50})
    assert run("benchmark", "--config", path, "--lengths", 4, 5, "--repeats", 2, "--threads", 1) == 0
    header, rows = read_csv(tmp_path / "out" / "benchmark.csv")
    assert header == ["n_ions", "repeats", "wall_time_mean_s", "wall_time_std_s", "infidelity_mean",
                      "infidelity_std", "threads"]
    assert [r[0] for r in rows] == ["4", "5"]
    details = json.loads((tmp_path / "out" / "benchmark.json").read_text())
    assert len(details["runs"]["4"]["wall_time_s"]) == 2
    assert run("benchmark", "--config", path, "--lengths", 3) == 2


def test_console_script_entry_point(tmp_path):
    cfg = write_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "msgate.cli", "modes", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "4 coupled modes" in proc.stdout
