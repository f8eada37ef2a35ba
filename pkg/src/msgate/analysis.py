"""Gate fidelity and error-susceptibility analysis for a fixed drive."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import ModeData
from .controls import DriveWaveform, GateTarget
from .kernels import (KernelSet, build_kernels, dense_phases, scaled_com, scaled_displacements,
                      scaled_phases, segment_exp_integral, segment_moment_integral,
                      trajectory_series)

log = logging.getLogger(__name__)


@dataclass
class FidelityReport:
    infidelity: float
    fidelity: float
    ions: tuple[int, ...]
    phase_errors: np.ndarray
    phase_factor: float
    motional_term: float
    mode_contributions: np.ndarray

    def as_dict(self) -> dict:
        return {
            "infidelity": self.infidelity,
            "fidelity": self.fidelity,
            "ions": list(self.ions),
            "phase_errors_rad": self.phase_errors.tolist(),
            "phase_factor": self.phase_factor,
            "motional_term": self.motional_term,
            "mode_contributions": self.mode_contributions.tolist(),
        }


@dataclass
class ScanResult:
    axis_name: str
    axis: np.ndarray
    values: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        if len(self.axis) > 1:
            steps = np.diff(self.axis)
            if not (np.all(steps > 0) or np.all(steps < 0)):
                raise ValueError("scan axis must be strictly monotone")

    def to_csv(self, path) -> None:
        path = Path(path)
        names = list(self.values)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([self.axis_name] + names)
            for i, x in enumerate(self.axis):
                writer.writerow([repr(float(x))] + [repr(float(self.values[n][i])) for n in names])

    def to_json(self, path) -> None:
        payload = {"axis_name": self.axis_name, "axis": self.axis.tolist(),
                   "values": {k: np.asarray(v).tolist() for k, v in self.values.items()},
                   "metadata": self.metadata}
        Path(path).write_text(json.dumps(payload, indent=2))


def _rows(kernels: KernelSet, drive: DriveWaveform, target: GateTarget):
    ions = tuple(i for i in kernels.ions if i in target.addressed or i in drive.ions)
    return [kernels.ions.index(i) for i in ions], ions


def fidelity_from_terms(alpha, phases, psi, eta, nbar, ions) -> FidelityReport:
    eps = psi - phases
    np.fill_diagonal(eps, 0.0)
    upper = np.triu_indices(len(ions), k=1)
    per_mode = np.sum(np.abs(eta * alpha) ** 2, axis=0) * (np.asarray(nbar) + 0.5)
    motional = float(per_mode.sum())
    phase_factor = float(np.prod(np.cos(eps[upper])))
    fid = abs(phase_factor * (1 - motional)) ** 2
    return FidelityReport(float(np.clip(1 - fid, 0.0, 1.0)), float(fid), ions, eps, phase_factor,
                          motional, per_mode)


def operational_infidelity(drive: DriveWaveform, kernels: KernelSet, target: GateTarget,
                           mean_phonons=None, dense: bool = False) -> FidelityReport:
    """Average operational infidelity for thermal motional states.

    Only addressed ions enter; ``dense`` evaluates the phases through the
    explicit P matrices instead of the cumulative-sum route.
    """
    u = kernels.check(drive)
    rows, ions = _rows(kernels, drive, target)
    u = u[rows]
    sub = kernels if rows == list(range(len(kernels.ions))) else build_kernels(
        kernels.modes, kernels.boundaries, ions)
    alpha = scaled_displacements(sub, u)
    phases = dense_phases(sub, u) if dense else scaled_phases(sub, u)
    nbar = kernels.modes.mean_phonons if mean_phonons is None else np.broadcast_to(
        np.asarray(mean_phonons, dtype=float), kernels.modes.mean_phonons.shape)
    psi = target.psi[np.ix_(ions, ions)]
    return fidelity_from_terms(alpha, phases, psi, sub.eta, nbar, ions)


def _with_detunings(kernels: KernelSet, detunings) -> KernelSet:
    return build_kernels(kernels.modes.with_detunings(detunings), kernels.boundaries, kernels.ions)


def quasi_static_detuning_scan(drive, kernels, target, offsets, mean_phonons=None,
                               per_mode: bool = False) -> ScanResult:
    """Infidelity under fixed detuning errors (rad/s).

    By default one common offset shifts every mode; with ``per_mode`` each
    offset entry is a vector of per-mode shifts and the axis is its index.
    """
    base = kernels.modes.detunings
    infid, motional, phase = [], [], []
    for eps in offsets:
        shifted = _with_detunings(kernels, base + np.asarray(eps, dtype=float))
        rep = operational_infidelity(drive, shifted, target, mean_phonons)
        infid.append(rep.infidelity)
        motional.append(rep.motional_term)
        phase.append(1 - rep.phase_factor ** 2)
    axis = np.arange(len(offsets)) if per_mode else np.asarray(offsets, dtype=float)
    return ScanResult("detuning_offset_rad_s" if not per_mode else "index", axis,
                      {"infidelity": np.array(infid), "motional_term": np.array(motional),
                       "phase_term": np.array(phase)})


def timing_error_infidelity(drive, kernels, target, eps_t, mean_phonons=None) -> FidelityReport:
    """Pulse sequence stretched in time by (1 + eps_t), mode frequencies unchanged."""
    if not 1 + eps_t > 0:
        raise ValueError("1 + eps_t must be positive")
    stretched = drive.stretched(1 + eps_t)
    k2 = build_kernels(kernels.modes, stretched.boundaries, kernels.ions)
    return operational_infidelity(stretched, k2, target, mean_phonons)


def timing_error_as_dephasing(drive, kernels, target, eps_t, mean_phonons=None) -> FidelityReport:
    """Same error expressed on the original grid: delta_p -> (1+eps_t) delta_p
    and drive amplitudes scaled by (1 + eps_t)."""
    shifted = _with_detunings(kernels, kernels.modes.detunings * (1 + eps_t))
    return operational_infidelity(drive.scaled(1 + eps_t), shifted, target, mean_phonons)


def timing_scan(drive, kernels, target, errors, mean_phonons=None) -> ScanResult:
    reports = [timing_error_infidelity(drive, kernels, target, e, mean_phonons) for e in errors]
    return ScanResult("timing_error", errors,
                      {"infidelity": np.array([r.infidelity for r in reports]),
                       "motional_term": np.array([r.motional_term for r in reports])})


def amplitude_error_scan(drive, kernels, target, scales, mean_phonons=None) -> ScanResult:
    """Infidelity with every amplitude multiplied by s."""
    infid, max_phase = [], []
    for s in scales:
        if not s > 0:
            raise ValueError("amplitude scale must be positive")
        rep = operational_infidelity(drive.scaled(s), kernels, target, mean_phonons)
        infid.append(rep.infidelity)
        max_phase.append(float(np.max(np.abs(rep.phase_errors))))
    return ScanResult("amplitude_scale", scales,
                      {"infidelity": np.array(infid), "max_phase_error": np.array(max_phase)})


def _segment_terms(drive: DriveWaveform, kernels: KernelSet):
    u = kernels.check(drive) / kernels.duration
    rows = [kernels.ions.index(i) for i in drive.ions]
    return u[rows], kernels.eta[rows]


def filter_function(drive, kernels, frequencies, mean_phonons=None) -> ScanResult:
    """First-order displacement response to sinusoidal detuning noise.

    For each angular frequency w the detuning modulation integrates to
    Phi(t) = (sin(w t + th) - sin th) / w; the squared response is averaged
    over th, giving 1/2 (|A|^2 + |B|^2) with A and B the sine and
    (cos - 1) quadratures. At w = 0 this is 1/2 |int t f(t) dt|^2.
    Units: s^2.
    """
    gamma, eta = _segment_terms(drive, kernels)
    nbar = kernels.modes.mean_phonons if mean_phonons is None else np.broadcast_to(
        np.asarray(mean_phonons, dtype=float), kernels.modes.mean_phonons.shape)
    b = kernels.boundaries
    start, width = b[:-1][None, :], np.diff(b)[None, :]
    d = kernels.modes.detunings[:, None]
    weight = np.abs(eta) ** 2 * (nbar + 0.5)

    def seg(delta):
        return np.exp(1j * delta * start) * segment_exp_integral(delta, width)

    values = []
    for w in np.asarray(frequencies, dtype=float):
        if w < 0:
            raise ValueError("filter frequencies must be non-negative")
        if w == 0:
            sin_k = segment_moment_integral(d, start, width)
            cos_k = np.zeros_like(sin_k)
        else:
            plus, minus = seg(d + w), seg(d - w)
            sin_k = (plus - minus) / (2j * w)
            cos_k = ((plus + minus) / 2 - seg(d)) / w
        A = 0.5 * gamma @ sin_k.T
        B = 0.5 * gamma @ cos_k.T
        values.append(0.5 * float(np.sum(weight * (np.abs(A) ** 2 + np.abs(B) ** 2))))
    return ScanResult("frequency_rad_s", frequencies, {"filter": np.array(values)})


@dataclass
class AsymmetricDetuningReport:
    ions: tuple[int, ...]
    closure: np.ndarray  # int beta dt = eta * alpha(tau)
    moment: np.ndarray  # int t beta dt, seconds
    scaled_moment: np.ndarray  # int (t/tau) gamma/2 e^{i delta t} dt, no eta
    eps_delta: float

    @property
    def closure_norm(self) -> float:
        return float(np.linalg.norm(self.closure))

    @property
    def moment_norm(self) -> float:
        return float(np.linalg.norm(self.moment))

    @property
    def scaled_moment_norm(self) -> float:
        return float(np.linalg.norm(self.scaled_moment))

    @property
    def first_order_norm(self) -> float:
        """Norm of the sigma_x and sigma_y coefficients of the displacement."""
        return float(np.sqrt(self.closure_norm ** 2 + (0.5 * self.eps_delta * self.moment_norm) ** 2))


def asymmetric_detuning_sensitivity(drive, kernels, eps_delta: float = 0.0) -> AsymmetricDetuningReport:
    """First-order displacement residuals when the two tones are detuned
    asymmetrically by eps_delta (rad/s)."""
    gamma, eta = _segment_terms(drive, kernels)
    b = kernels.boundaries
    d = kernels.modes.detunings[:, None]
    moments = segment_moment_integral(d, b[:-1][None, :], np.diff(b)[None, :])
    seg = np.exp(1j * d * b[:-1][None, :]) * segment_exp_integral(d, np.diff(b)[None, :])
    raw_moment = 0.5 * gamma @ moments.T
    closure = eta * (0.5 * gamma @ seg.T)
    return AsymmetricDetuningReport(drive.ions, closure, eta * raw_moment,
                                    raw_moment / kernels.duration, float(eps_delta))


@dataclass
class LambDickeDiagnostic:
    sample_times: np.ndarray
    metric: np.ndarray  # times x ions
    threshold: float

    @property
    def maximum(self) -> float:
        return float(self.metric.max())

    @property
    def warning(self) -> bool:
        return self.maximum > self.threshold


def lamb_dicke_diagnostic(drive: DriveWaveform, modes: ModeData, sample_times, mean_phonons=None,
                          threshold: float = 0.3) -> LambDickeDiagnostic:
    """sqrt(sum_p eta^2 (2 nbar + 1) + sum_p 4 eta^2 |eta alpha(t)|^2) per ion and time."""
    nbar = modes.mean_phonons if mean_phonons is None else np.broadcast_to(
        np.asarray(mean_phonons, dtype=float), modes.mean_phonons.shape)
    eta = modes.lamb_dicke[list(drive.ions)]
    alpha = trajectory_series(drive, modes, sample_times)
    baseline = np.sum(eta ** 2 * (2 * nbar + 1), axis=1)
    coherent = np.sum(4 * eta[None] ** 2 * np.abs(eta[None] * alpha) ** 2, axis=2)
    diag = LambDickeDiagnostic(np.atleast_1d(sample_times), np.sqrt(baseline[None] + coherent), threshold)
    if diag.warning:
        log.warning("Lamb-Dicke metric %.3f exceeds %.3f", diag.maximum, threshold)
    return diag


def com_residual_norm(drive: DriveWaveform, kernels: KernelSet) -> float:
    u = kernels.check(drive)
    rows = [kernels.ions.index(i) for i in drive.ions]
    return float(np.linalg.norm(scaled_com(kernels, u)[rows]))
