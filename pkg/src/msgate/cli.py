"""Command-line entry point: ``msgate {modes,optimize,simulate,scan,benchmark}``.

Exit codes: 0 success, 2 invalid input, 3 quality threshold not met,
4 solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .chain import ChainError, SolverFailure, build_mode_data, equilibrium_positions
from .config import ConfigError, ExperimentConfig, canonical_json, load_config
from .controls import ConstraintError, DriveWaveform, validate
from .io import load_drive, save_drive, write_csv, write_json
from .kernels import GridMismatch, build_kernels, phase_series, trajectory_series
from .optimize import OptimizationFailure, OptimizationProblem, OptimizationResult, optimize

log = logging.getLogger("msgate")

EXIT_OK, EXIT_INVALID, EXIT_QUALITY, EXIT_SOLVER = 0, 2, 3, 4
THREADS_ENV = "MSGATE_THREADS"
TWO_PI = 2 * np.pi


class QualityError(RuntimeError):
    pass


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        threads = flag
    elif os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    else:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError("thread count must be >= 1")
    return threads


def build_modes(cfg: ExperimentConfig):
    positions = equilibrium_positions(cfg.trap)
    return build_mode_data(cfg.trap, positions, cfg.laser_detuning)


def run_optimization(cfg: ExperimentConfig, workers: int, seed: int, modes=None) -> OptimizationResult:
    modes = build_modes(cfg) if modes is None else modes
    kernels = build_kernels(modes, cfg.boundaries, cfg.target.addressed)
    problem = OptimizationProblem(
        kernels, cfg.target, cfg.scheme,
        instance_count=cfg.optimizer.instances,
        iteration_budget=cfg.optimizer.budget,
        convergence_tolerance=cfg.optimizer.tolerance,
        rng_seed=seed,
        workers=workers,
    )
    log.info("optimizing with seed %d (%d instances, %d workers)", seed,
             cfg.optimizer.instances, workers)
    return optimize(problem)


def _run_seed(cfg: ExperimentConfig, run: int) -> int:
    return (cfg.optimizer.seed + run) % 2 ** 64


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.outputs.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _constraint_summary(report) -> dict:
    return {"passed": report.passed, "checks": report.checks, "violations": report.violations,
            "max_amplitude_rad_s": report.max_amplitude,
            "max_amplitude_step_rad_s": report.max_amplitude_step,
            "max_phase_step_rad": report.max_phase_step,
            "amplitude_symmetry_residual_rad_s": report.amplitude_symmetry_residual,
            "phase_symmetry_residual_rad": report.phase_symmetry_residual}


def _result_summary(result: OptimizationResult, seed: int) -> dict:
    b = result.breakdown
    return {
        "seed": seed,
        "infidelity": result.infidelity,
        "internal_infidelity": result.internal_infidelity,
        "cost": {"total": b.total, "phase": b.phase, "motion": b.motion, "com": b.com},
        "wall_time_s": result.wall_time_s,
        "best_instance": result.best_instance,
        "instances": [{"index": i.index, "cost": i.cost, "iterations": i.iterations,
                       "message": i.message, "wall_time_s": i.wall_time_s}
                      for i in result.instances],
    }


# --- commands -------------------------------------------------------------

def cmd_modes(cfg: ExperimentConfig, args) -> int:
    modes = build_modes(cfg)
    n = modes.n_ions
    header = ["mode", "axis", "frequency_mhz", "relative_detuning_khz"] + \
             [f"eta_ion{j}" for j in range(n)] + [f"b_ion{j}" for j in range(n)]
    rows = []
    for p in range(modes.n_modes):
        rows.append([modes.mode_label(p), modes.axis_labels[p],
                     modes.frequencies[p] / TWO_PI / 1e6, modes.detunings[p] / TWO_PI / 1e3]
                    + list(modes.lamb_dicke[:, p]) + list(modes.eigenvectors[:, p]))
    print(f"{modes.n_modes} coupled modes, laser detuning {modes.laser_detuning / TWO_PI / 1e6:.6f} MHz")
    print(f"{'mode':>6} {'freq (MHz)':>12} {'delta_p (kHz)':>14}  eta")
    for p, row in enumerate(rows):
        etas = " ".join(f"{e:+.4f}" for e in modes.lamb_dicke[:, p])
        print(f"{row[0]:>6} {row[2]:12.6f} {row[3]:14.4f}  {etas}")
    out = _out_dir(cfg)
    write_csv(out / "modes.csv", header, rows)
    return EXIT_OK


def cmd_optimize(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    modes = build_modes(cfg)
    runs = []
    best, best_seed = None, None
    for r in range(cfg.optimizer.runs):
        seed = _run_seed(cfg, r)
        result = run_optimization(cfg, args.workers, seed, modes)
        runs.append(_result_summary(result, seed))
        log.info("run %d: infidelity %.3e in %.1f s", r, result.infidelity, result.wall_time_s)
        if best is None or result.infidelity < best.infidelity:
            best, best_seed = result, seed
    constraints = validate(best.best_drive, cfg.scheme)
    infid = np.array([r["infidelity"] for r in runs])
    times = np.array([r["wall_time_s"] for r in runs])
    report = {
        "command": "optimize",
        "infidelity": best.infidelity,
        "seed": best_seed,
        "threads": args.workers,
        "best": _result_summary(best, best_seed),
        "runs": runs,
        "infidelity_mean": float(infid.mean()), "infidelity_std": float(infid.std()),
        "wall_time_mean_s": float(times.mean()), "wall_time_std_s": float(times.std()),
        "constraints": _constraint_summary(constraints),
        "overrides": cfg.cli_overrides,
        "config": cfg.raw,
    }
    if "drives" in cfg.outputs.emit:
        save_drive(best.best_drive, out / "drive.json")
        write_csv(out / "drive.csv", ["ion", "segment", "t_start_s", "t_end_s", "omega_rad_s", "phi_rad"],
                  _drive_rows(best.best_drive))
    if "report" in cfg.outputs.emit:
        write_json(out / "report.json", report)
        write_csv(out / "cost_history.csv", ["instance", "iteration", "cost"],
                  ([i, n, c] for i, h in enumerate(best.cost_histories) for n, c in enumerate(h)))
    print(f"best infidelity {best.infidelity:.3e} (seed {best_seed}); "
          f"constraints {'pass' if constraints.passed else 'FAIL'}")
    _check_quality(cfg, best.infidelity, constraints.passed)
    return EXIT_OK


def _drive_rows(drive: DriveWaveform):
    b = drive.boundaries
    for r, ion in enumerate(drive.ions):
        for k in range(drive.n_segments):
            yield [ion, k, b[k], b[k + 1], drive.amplitudes[r, k], drive.phases[r, k]]


def _check_quality(cfg: ExperimentConfig, infidelity: float, constraints_ok: bool = True):
    if not constraints_ok:
        raise QualityError("optimized drive violates a hard constraint")
    limit = cfg.optimizer.max_infidelity
    if limit is not None and infidelity > limit:
        raise QualityError(f"infidelity {infidelity:.3e} above threshold {limit:.3e}")


def _full_drive(drive: DriveWaveform, n_ions: int) -> DriveWaveform:
    amps = np.zeros((n_ions, drive.n_segments))
    phases = np.zeros_like(amps)
    for r, ion in enumerate(drive.ions):
        amps[ion], phases[ion] = drive.amplitudes[r], drive.phases[r]
    return DriveWaveform(drive.boundaries, tuple(range(n_ions)), amps, phases, drive.robust)


def _load_checked_drive(cfg: ExperimentConfig, path) -> DriveWaveform:
    if path is None:
        raise ConfigError("this command needs --drive")
    drive = load_drive(path)
    if drive.n_segments != cfg.scheme.segments or not np.allclose(
            drive.boundaries, cfg.boundaries, rtol=1e-12, atol=0):
        raise GridMismatch("drive grid does not match the configured segments and duration")
    if any(i < 0 or i >= cfg.trap.n_ions for i in drive.ions):
        raise ConfigError("drive addresses ions outside the chain")
    return drive


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    drive = _load_checked_drive(cfg, args.drive)
    modes = build_modes(cfg)
    out = _out_dir(cfg)
    n = cfg.trap.n_ions
    times = np.linspace(0.0, drive.duration, cfg.samples)
    full = _full_drive(drive, n)
    alpha = trajectory_series(full, modes, times)  # times x ions x modes
    eta = modes.lamb_dicke
    aggregate = np.einsum("jp,tjp->tp", eta, alpha)
    phases = phase_series(full, modes, times)
    psi = cfg.target.psi
    labels = [modes.mode_label(p) for p in range(modes.n_modes)]
    if "trajectories" in cfg.outputs.emit:
        write_csv(out / "trajectories.csv", ["time_s", "ion", "mode", "alpha_re", "alpha_im"],
                  ([t, j, labels[p], alpha[i, j, p].real, alpha[i, j, p].imag]
                   for i, t in enumerate(times) for j in drive.ions for p in range(modes.n_modes)))
        write_csv(out / "mode_trajectories.csv", ["time_s", "mode", "eta_alpha_re", "eta_alpha_im"],
                  ([t, labels[p], aggregate[i, p].real, aggregate[i, p].imag]
                   for i, t in enumerate(times) for p in range(modes.n_modes)))
    if "phases" in cfg.outputs.emit:
        write_csv(out / "phases.csv", ["time_s", "ion_j", "ion_k", "phase_rad", "target_rad"],
                  ([t, j, k, phases[i, j, k], psi[j, k]]
                   for i, t in enumerate(times) for j, k in itertools.combinations(range(n), 2)))
    kernels = build_kernels(modes, drive.boundaries, tuple(range(n)))
    fid = analysis.operational_infidelity(full, kernels, cfg.target)
    ld = analysis.lamb_dicke_diagnostic(drive, modes, times)
    final_phase_error = float(np.max(np.abs(phases[-1] - psi)))
    report = {
        "command": "simulate",
        "infidelity": fid.infidelity,
        "max_final_displacement": float(np.max(np.abs(alpha[-1]))),
        "max_final_phase_error_rad": final_phase_error,
        "final_phases_rad": {f"{j},{k}": phases[-1, j, k]
                             for j, k in itertools.combinations(range(n), 2)},
        "lamb_dicke_max": ld.maximum,
        "lamb_dicke_warning": ld.warning,
        "constraints": _constraint_summary(validate(drive, cfg.scheme)),
        "config": cfg.raw,
    }
    if "report" in cfg.outputs.emit:
        write_json(out / "simulate_report.json", report)
    print(f"infidelity {fid.infidelity:.3e}; final max |alpha| {report['max_final_displacement']:.3e}; "
          f"max phase error {final_phase_error:.3e} rad")
    return EXIT_OK


def _cell_name(prefix: str, cfg: ExperimentConfig) -> str:
    raw = {k: v for k, v in cfg.raw.items() if k not in ("outputs", "scan")}
    raw["seed"] = cfg.optimizer.seed
    digest = hashlib.sha256(canonical_json(raw).encode()).hexdigest()[:12]
    return f"{prefix}_{digest}"


def _cached_cell(directory: Path, name: str, compute):
    """Per-cell result files make long scans resumable; names carry a hash
    of the cell configuration so edited configs never reuse stale cells."""
    path = directory / f"{name}.json"
    if path.exists():
        log.info("reusing %s", path)
        return json.loads(path.read_text())
    result = compute()
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(result))
    tmp.replace(path)
    return result


def _optimize_cell(cfg: ExperimentConfig, workers: int) -> dict:
    values = []
    for r in range(cfg.optimizer.runs):
        result = run_optimization(cfg, workers, _run_seed(cfg, r))
        values.append((result.infidelity, result.wall_time_s))
    infid = np.array([v[0] for v in values])
    return {"infidelity_mean": float(infid.mean()), "infidelity_std": float(infid.std()),
            "infidelity_min": float(infid.min()),
            "wall_time_s": float(sum(v[1] for v in values))}


def cmd_scan(cfg: ExperimentConfig, args) -> int:
    if cfg.scan is None:
        raise ConfigError("scan command needs a 'scan' section")
    out = _out_dir(cfg)
    kind, axes = cfg.scan.kind, cfg.scan.axes
    summary = {"command": "scan", "kind": kind, "threads": args.workers, "config": cfg.raw}

    if kind in ("domain", "power"):
        cells_dir = out / f"{kind}_cells"
        cells_dir.mkdir(exist_ok=True)
        if kind == "domain":
            header = ["detuning_mhz", "duration_us", "infidelity_mean", "infidelity_std",
                      "infidelity_min", "wall_time_s"]
            rows = []
            for d_mhz, t_us in itertools.product(axes["detuning_mhz"], axes["duration_us"]):
                cell_cfg = cfg.with_overrides(**{
                    "laser.detuning_mode": "absolute_mhz", "laser.value": float(d_mhz),
                    "drive.duration_us": float(t_us)})
                res = _cached_cell(cells_dir, _cell_name(f"d{d_mhz:.9g}_t{t_us:.9g}", cell_cfg),
                                   lambda c=cell_cfg: _optimize_cell(c, args.workers))
                rows.append([d_mhz, t_us, res["infidelity_mean"], res["infidelity_std"],
                             res["infidelity_min"], res["wall_time_s"]])
        else:
            header = ["max_rabi_khz", "infidelity_mean", "infidelity_std", "infidelity_min",
                      "wall_time_s"]
            rows = []
            for om in axes["max_rabi_khz"]:
                cell_cfg = cfg.with_overrides(**{"drive.max_rabi_khz": float(om)})
                res = _cached_cell(cells_dir, _cell_name(f"{cfg.scheme.modulation}_{om:.9g}", cell_cfg),
                                   lambda c=cell_cfg: _optimize_cell(c, args.workers))
                rows.append([om, res["infidelity_mean"], res["infidelity_std"],
                             res["infidelity_min"], res["wall_time_s"]])
            reaching = [r[0] for r in rows if r[1] <= cfg.scan.threshold]
            summary["threshold"] = cfg.scan.threshold
            summary["min_max_rabi_khz_to_threshold"] = min(reaching) if reaching else None
        if "scans" in cfg.outputs.emit:
            write_csv(out / f"scan_{kind}.csv", header, rows)
        summary["rows"] = len(rows)
        write_json(out / f"scan_{kind}.json", summary)
        print(f"{kind} scan: {len(rows)} cells written to {out}")
        return EXIT_OK

    # scans of a fixed drive: use --drive or optimize first
    modes = build_modes(cfg)
    if args.drive is not None:
        drive = _load_checked_drive(cfg, args.drive)
    else:
        result = run_optimization(cfg, args.workers, _run_seed(cfg, 0), modes)
        drive = result.best_drive
        summary["optimized_infidelity"] = result.infidelity
    ions = tuple(sorted(set(cfg.target.addressed) | set(drive.ions)))
    kernels = build_kernels(modes, drive.boundaries, ions)
    if kind == "detuning":
        scan = analysis.quasi_static_detuning_scan(drive, kernels, cfg.target,
                                                   TWO_PI * axes["offset_hz"])
        header = ["offset_hz", "infidelity", "motional_term", "phase_term"]
        rows = zip(axes["offset_hz"], *(scan.values[k] for k in header[1:]))
    elif kind == "timing":
        scan = analysis.timing_scan(drive, kernels, cfg.target, axes["error"])
        header = ["timing_error", "infidelity", "motional_term"]
        rows = zip(axes["error"], scan.values["infidelity"], scan.values["motional_term"])
    elif kind == "amplitude":
        scan = analysis.amplitude_error_scan(drive, kernels, cfg.target, axes["scale"])
        header = ["amplitude_scale", "infidelity", "max_phase_error_rad"]
        rows = zip(axes["scale"], scan.values["infidelity"], scan.values["max_phase_error"])
    else:
        scan = analysis.filter_function(drive, kernels, TWO_PI * axes["frequency_hz"])
        header = ["frequency_hz", "filter_s2"]
        rows = zip(axes["frequency_hz"], scan.values["filter"])
    rows = [list(r) for r in rows]
    if "scans" in cfg.outputs.emit:
        write_csv(out / f"scan_{kind}.csv", header, rows)
    summary["rows"] = len(rows)
    write_json(out / f"scan_{kind}.json", summary)
    print(f"{kind} scan: {len(rows)} rows written to {out}")
    return EXIT_OK


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    lengths = args.lengths or cfg.benchmark.get("lengths") or [4, 6, 8, 10]
    repeats = args.repeats or cfg.benchmark.get("repeats", 10)
    if any(n < 4 for n in lengths):
        raise ConfigError("benchmark lengths must be >= 4")
    out = _out_dir(cfg)
    header = ["n_ions", "repeats", "wall_time_mean_s", "wall_time_std_s", "infidelity_mean",
              "infidelity_std", "threads"]
    rows, details = [], {}
    for n in lengths:
        cell = cfg.with_overrides(**{"trap.n_ions": int(n)})
        modes = build_modes(cell)
        times, infid = [], []
        for r in range(repeats):
            start = time.perf_counter()
            result = run_optimization(cell, args.workers, _run_seed(cfg, r), modes)
            times.append(time.perf_counter() - start)
            infid.append(result.infidelity)
        rows.append([n, repeats, float(np.mean(times)), float(np.std(times)),
                     float(np.mean(infid)), float(np.std(infid)), args.workers])
        details[str(n)] = {"wall_time_s": times, "infidelity": infid}
        print(f"N={n:3d}: time {np.mean(times):8.2f} +/- {np.std(times):6.2f} s, "
              f"infidelity {np.mean(infid):.2e} +/- {np.std(infid):.2e}", flush=True)
    write_csv(out / "benchmark.csv", header, rows)
    write_json(out / "benchmark.json", {"command": "benchmark", "threads": args.workers,
                                        "seed": cfg.optimizer.seed, "runs": details,
                                        "config": cfg.raw})
    return EXIT_OK


COMMANDS = {"modes": cmd_modes, "optimize": cmd_optimize, "simulate": cmd_simulate,
            "scan": cmd_scan, "benchmark": cmd_benchmark}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgate", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int, help="override optimizer.seed")
        p.add_argument("--out", help="override outputs.directory")
        p.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or all cores)")
        if name in ("simulate", "scan"):
            p.add_argument("--drive", help="drive JSON written by 'optimize'")
        if name == "benchmark":
            p.add_argument("--lengths", type=int, nargs="+")
            p.add_argument("--repeats", type=int)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    return cfg.with_cli(seed=args.seed, directory=args.out)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        args.workers = resolve_threads(args.threads)
        if cfg.target is None and args.command != "modes":
            raise ConfigError("missing field config.gates")
        log.info("config %s", canonical_json(cfg.raw))
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ChainError, ConstraintError, GridMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except QualityError as exc:
        print(f"quality: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    except (OptimizationFailure, SolverFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
