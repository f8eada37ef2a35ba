"""JSON experiment configuration.

Units live in the field names (``_mhz``, ``_khz``, ``_us``, ``_nm``) and are
converted to SI angular units on load. Entangling phases in explicit pair
maps are given in units of pi.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import AMU, ChainError, TrapChainConfig
from .controls import (SCHEMES, ConstraintError, GateTarget, SchemeConfig, SlewBounds,
                       uniform_grid)

TWO_PI = 2 * math.pi
EMIT_KINDS = ("drives", "trajectories", "phases", "scans", "report")
SCAN_KINDS = ("detuning", "timing", "amplitude", "filter", "domain", "power")
DETUNING_MODES = ("absolute_mhz", "offset_from_x_com_khz")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def canonical_json(data) -> str:
    """Key-sorted, whitespace-free JSON used for config echoes and hashing."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing field {where}.{key}")
    return section[key]


def _number(value, where: str, positive: bool = False, non_negative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{where} must be a finite number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where} must be positive, got {value}")
    if non_negative and value < 0:
        raise ConfigError(f"{where} must be non-negative, got {value}")
    return float(value)


def _integer(value, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where} must be >= {minimum}, got {value}")
    return value


def _pair_key(key: str) -> tuple[int, int]:
    parts = key.replace("-", ",").split(",")
    try:
        j, k = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"pair key {key!r} must look like 'j,k' or 'j-k'") from None
    return j, k


def axis_values(entry, where: str) -> np.ndarray:
    """Explicit ``[v0, v1, ...]`` or ``{"start", "stop", "num"}`` (linear)
    or ``{"start", "stop", "num", "log": true}``; must be strictly monotone."""
    if isinstance(entry, list):
        values = np.array([_number(v, where) for v in entry])
    elif isinstance(entry, dict):
        start = _number(_require(entry, "start", where), f"{where}.start")
        stop = _number(_require(entry, "stop", where), f"{where}.stop")
        num = _integer(_require(entry, "num", where), f"{where}.num", 1)
        if entry.get("log", False):
            if start <= 0 or stop <= 0:
                raise ConfigError(f"{where}: log axis needs positive bounds")
            values = np.geomspace(start, stop, num)
        else:
            values = np.linspace(start, stop, num)
    else:
        raise ConfigError(f"{where} must be a list or a start/stop/num object")
    if len(values) == 0:
        raise ConfigError(f"{where} is empty")
    steps = np.diff(values)
    if len(values) > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ConfigError(f"{where} must be strictly monotone")
    return values


@dataclass
class OptimizerSettings:
    runs: int = 1
    instances: int = 5
    budget: int = 2000
    tolerance: float = 1e-14
    seed: int = 0
    max_infidelity: float | None = None


@dataclass
class OutputSettings:
    directory: str = "results"
    emit: tuple[str, ...] = EMIT_KINDS


@dataclass
class ScanSettings:
    kind: str
    axes: dict[str, np.ndarray]
    threshold: float = 1e-5


@dataclass
class ExperimentConfig:
    raw: dict
    trap: TrapChainConfig
    laser_detuning: float  # rad/s
    target: GateTarget | None  # None only for mode listings without gates
    scheme: SchemeConfig
    duration: float  # s
    optimizer: OptimizerSettings
    outputs: OutputSettings
    scan: ScanSettings | None = None
    benchmark: dict = field(default_factory=dict)
    samples: int = 201
    cli_overrides: dict = field(default_factory=dict)

    @property
    def boundaries(self) -> np.ndarray:
        return uniform_grid(self.duration, self.scheme.segments)

    @property
    def echo(self) -> str:
        return canonical_json(self.raw)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """Re-parse the raw document with dotted-path overrides, e.g.
        ``{"drive.duration_us": 80}``. Command-line overrides carry over."""
        raw = copy.deepcopy(self.raw)
        for path, value in changes.items():
            node = raw
            *parents, leaf = path.split(".")
            for key in parents:
                node = node.setdefault(key, {})
            node[leaf] = value
        return parse_config(raw).with_cli(**self.cli_overrides)

    def with_cli(self, seed: int | None = None, directory: str | None = None) -> "ExperimentConfig":
        """Apply command-line seed and output overrides without touching
        ``raw``, so the config echo stays identical to the input file."""
        if seed is not None:
            if not 0 <= seed < 2 ** 64:
                raise ConfigError("seed must be a 64-bit unsigned integer")
            self.optimizer.seed = seed
            self.cli_overrides["seed"] = seed
        if directory is not None:
            self.outputs.directory = directory
            self.cli_overrides["directory"] = directory
        return self


def _parse_trap(raw: dict, thermal: dict) -> TrapChainConfig:
    n = _integer(_require(raw, "n_ions", "trap"), "trap.n_ions", 1)
    mass = _number(raw.get("mass_amu", 171.0), "trap.mass_amu", positive=True)
    freqs = _require(raw, "com_frequencies_mhz", "trap")
    if not isinstance(freqs, list) or len(freqs) != 3:
        raise ConfigError("trap.com_frequencies_mhz must be [x, y, z]")
    freqs = [_number(f, "trap.com_frequencies_mhz", positive=True) for f in freqs]
    wave = raw.get("wavevector", {})
    wavelength = _number(wave.get("wavelength_nm", 355.0), "trap.wavevector.wavelength_nm",
                         positive=True)
    direction = wave.get("direction", [1.0, 1.0, 0.0])
    if not isinstance(direction, list) or len(direction) != 3:
        raise ConfigError("trap.wavevector.direction must be a 3-vector")
    direction = np.array([_number(d, "trap.wavevector.direction") for d in direction])
    nbar = thermal.get("nbar", {}) if thermal else {}
    if not isinstance(nbar, dict):
        raise ConfigError("thermal.nbar must map axis -> mean phonon number")
    try:
        return TrapChainConfig(
            n_ions=n,
            mass=mass * AMU,
            com_frequencies=tuple(TWO_PI * 1e6 * np.array(freqs)),
            raman_wavevector=tuple(TWO_PI / (wavelength * 1e-9) * direction),
            mean_phonons={k: _number(v, f"thermal.nbar.{k}", non_negative=True)
                          for k, v in nbar.items()},
        )
    except ChainError as exc:
        raise ConfigError(str(exc)) from None


def _parse_laser(raw: dict, trap: TrapChainConfig) -> float:
    mode = _require(raw, "detuning_mode", "laser")
    value = _number(_require(raw, "value", "laser"), "laser.value")
    if mode == "absolute_mhz":
        return TWO_PI * 1e6 * value
    if mode == "offset_from_x_com_khz":
        return trap.com_frequencies[0] + TWO_PI * 1e3 * value
    raise ConfigError(f"laser.detuning_mode must be one of {DETUNING_MODES}")


def _parse_gates(raw, n_ions: int) -> GateTarget:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("gates must be a non-empty list")
    gates = []
    for i, gate in enumerate(raw):
        ions = _require(gate, "ions", f"gates[{i}]")
        if not isinstance(ions, list) or not all(isinstance(j, int) and not isinstance(j, bool)
                                                 for j in ions):
            raise ConfigError(f"gates[{i}].ions must be a list of integers")
        if any(j < 0 or j >= n_ions for j in ions):
            raise ConfigError(f"gates[{i}].ions {ions} outside chain of {n_ions} ions")
        phases = gate.get("phases", "maximal")
        if isinstance(phases, dict):
            phases = {_pair_key(k): math.pi * _number(v, f"gates[{i}].phases[{k}]")
                      for k, v in phases.items()}
        elif phases != "maximal":
            raise ConfigError(f"gates[{i}].phases must be 'maximal' or a pair map")
        gates.append((ions, phases))
    try:
        return GateTarget.from_gates(n_ions, gates)
    except ConstraintError as exc:
        raise ConfigError(str(exc)) from None


def _parse_drive(raw: dict, target: GateTarget | None) -> tuple[SchemeConfig, float]:
    scheme = _require(raw, "scheme", "drive")
    if scheme not in SCHEMES:
        raise ConfigError(f"drive.scheme must be one of {SCHEMES}")
    segments = _integer(_require(raw, "segments", "drive"), "drive.segments", 1)
    duration = 1e-6 * _number(_require(raw, "duration_us", "drive"), "drive.duration_us",
                              positive=True)
    max_rabi = TWO_PI * 1e3 * _number(_require(raw, "max_rabi_khz", "drive"),
                                      "drive.max_rabi_khz", positive=True)
    shared = raw.get("shared_groups", [])
    for g in shared:
        if not isinstance(g, list) or (target is not None and any(j not in target.addressed for j in g)):
            raise ConfigError(f"drive.shared_groups entry {g} must list addressed ions")
    slew = None
    if raw.get("slew") is not None:
        s = raw["slew"]
        d_omega = s.get("domega_khz")
        d_phi = s.get("dphi_rad")
        slew = SlewBounds(
            None if d_omega is None else TWO_PI * 1e3 * _number(d_omega, "drive.slew.domega_khz"),
            None if d_phi is None else _number(d_phi, "drive.slew.dphi_rad"))
    config = SchemeConfig(scheme, segments, max_rabi, tuple(tuple(g) for g in shared),
                          bool(raw.get("robust", False)), slew, bool(raw.get("pin_endpoints", False)))
    if target is not None:
        config.groups_for(target.addressed)
    return config, duration


def _parse_scan(raw: dict) -> ScanSettings:
    kind = _require(raw, "kind", "scan")
    if kind not in SCAN_KINDS:
        raise ConfigError(f"scan.kind must be one of {SCAN_KINDS}")
    names = {
        "detuning": ("offset_hz",),
        "timing": ("error",),
        "amplitude": ("scale",),
        "filter": ("frequency_hz",),
        "domain": ("detuning_mhz", "duration_us"),
        "power": ("max_rabi_khz",),
    }[kind]
    axes = {name: axis_values(_require(raw, name, "scan"), f"scan.{name}") for name in names}
    if kind == "timing" and np.any(axes["error"] <= -1):
        raise ConfigError("scan.error values must exceed -1")
    if kind in ("amplitude",) and np.any(axes["scale"] <= 0):
        raise ConfigError("scan.scale values must be positive")
    if kind == "filter" and np.any(axes["frequency_hz"] < 0):
        raise ConfigError("scan.frequency_hz values must be non-negative")
    if kind == "power" and np.any(axes["max_rabi_khz"] <= 0):
        raise ConfigError("scan.max_rabi_khz values must be positive")
    if kind == "domain" and np.any(axes["duration_us"] <= 0):
        raise ConfigError("scan.duration_us values must be positive")
    threshold = _number(raw.get("threshold", 1e-5), "scan.threshold", positive=True)
    return ScanSettings(kind, axes, threshold)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    raw = copy.deepcopy(raw)
    trap = _parse_trap(_require(raw, "trap", "config"), raw.get("thermal", {}))
    detuning = _parse_laser(_require(raw, "laser", "config"), trap)
    target = _parse_gates(raw["gates"], trap.n_ions) if "gates" in raw else None
    try:
        scheme, duration = _parse_drive(_require(raw, "drive", "config"), target)
    except ConstraintError as exc:
        raise ConfigError(str(exc)) from None
    opt = raw.get("optimizer", {})
    max_inf = opt.get("max_infidelity")
    optimizer = OptimizerSettings(
        runs=_integer(opt.get("runs", 1), "optimizer.runs", 1),
        instances=_integer(opt.get("instances", 5), "optimizer.instances", 1),
        budget=_integer(opt.get("budget", 2000), "optimizer.budget", 1),
        tolerance=_number(opt.get("tolerance", 1e-14), "optimizer.tolerance", non_negative=True),
        seed=_integer(opt.get("seed", 0), "optimizer.seed", 0),
        max_infidelity=None if max_inf is None else _number(max_inf, "optimizer.max_infidelity",
                                                            non_negative=True),
    )
    if optimizer.seed >= 2 ** 64:
        raise ConfigError("optimizer.seed must fit in 64 bits")
    out = raw.get("outputs", {})
    emit = tuple(out.get("emit", EMIT_KINDS))
    unknown = set(emit) - set(EMIT_KINDS)
    if unknown:
        raise ConfigError(f"outputs.emit has unknown entries {sorted(unknown)}")
    outputs = OutputSettings(str(out.get("directory", "results")), emit)
    scan = _parse_scan(raw["scan"]) if raw.get("scan") is not None else None
    bench = raw.get("benchmark", {})
    if bench:
        lengths = bench.get("lengths", [])
        if not lengths or any(not isinstance(n, int) or n < 4 for n in lengths):
            raise ConfigError("benchmark.lengths must be integers >= 4")
        _integer(bench.get("repeats", 10), "benchmark.repeats", 1)
    samples = _integer(raw.get("simulate", {}).get("samples", 201), "simulate.samples", 2)
    return ExperimentConfig(raw, trap, detuning, target, scheme, duration, optimizer, outputs,
                            scan, bench, samples)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(raw)
