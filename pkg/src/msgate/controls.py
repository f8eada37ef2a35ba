"""Piecewise-constant drives, control schemes and their parametrizations."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

SCHEMES = ("am", "pm", "ampm")


class ConstraintError(ValueError):
    """Invalid scheme or constraint specification."""


def wrap_phase(phi):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(phi) + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


@dataclass(frozen=True)
class DriveWaveform:
    """Per-ion piecewise-constant drive ``Omega * exp(i*phi)`` on a shared grid.

    ``amplitudes`` and ``phases`` are (addressed ions x segments); rows follow
    ``ions``. Phases are stored unwrapped.
    """

    boundaries: np.ndarray
    ions: tuple[int, ...]
    amplitudes: np.ndarray
    phases: np.ndarray
    robust: bool = False

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        amps = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        phases = np.atleast_2d(np.asarray(self.phases, dtype=float))
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "ions", tuple(int(i) for i in self.ions))
        if b.ndim != 1 or len(b) < 2 or b[0] != 0 or np.any(np.diff(b) <= 0):
            raise ConstraintError("segment boundaries must start at 0 and increase strictly")
        shape = (len(self.ions), len(b) - 1)
        if amps.shape != shape or phases.shape != shape:
            raise ConstraintError(f"drive arrays must have shape {shape}")
        if np.any(amps < 0):
            raise ConstraintError("amplitudes must be non-negative")

    @classmethod
    def uniform(cls, duration, ions, amplitudes, phases, robust=False) -> "DriveWaveform":
        amps = np.atleast_2d(amplitudes)
        return cls(uniform_grid(duration, amps.shape[1]), tuple(ions), amps, phases, robust)

    @classmethod
    def zeros(cls, boundaries, ions) -> "DriveWaveform":
        shape = (len(ions), len(boundaries) - 1)
        return cls(boundaries, tuple(ions), np.zeros(shape), np.zeros(shape))

    @property
    def duration(self) -> float:
        return float(self.boundaries[-1])

    @property
    def n_segments(self) -> int:
        return len(self.boundaries) - 1

    @property
    def values(self) -> np.ndarray:
        """Complex segment values gamma_{j,k} in rad/s."""
        return self.amplitudes * np.exp(1j * self.phases)

    def row(self, ion: int) -> int:
        return self.ions.index(ion)

    def scaled(self, factor: float) -> "DriveWaveform":
        return DriveWaveform(self.boundaries, self.ions, self.amplitudes * factor, self.phases,
                             self.robust)

    def phase_shifted(self, offset: float) -> "DriveWaveform":
        return DriveWaveform(self.boundaries, self.ions, self.amplitudes, self.phases + offset,
                             self.robust)

    def stretched(self, factor: float) -> "DriveWaveform":
        return DriveWaveform(self.boundaries * factor, self.ions, self.amplitudes, self.phases,
                             self.robust)


def uniform_grid(duration: float, segments: int) -> np.ndarray:
    grid = np.linspace(0.0, duration, segments + 1)
    grid[-1] = duration
    return grid


@dataclass(frozen=True)
class GateTarget:
    """Symmetric target phase matrix psi (rad) with the gates that define it."""

    n_ions: int
    psi: np.ndarray
    gate_groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "gate_groups", tuple(tuple(int(i) for i in g) for g in self.gate_groups))
        if psi.shape != (self.n_ions, self.n_ions):
            raise ConstraintError("psi must be n_ions x n_ions")
        if not np.allclose(psi, psi.T, rtol=0, atol=0) or np.any(np.diag(psi) != 0):
            raise ConstraintError("psi must be symmetric with zero diagonal")
        for group in self.gate_groups:
            if any(i < 0 or i >= self.n_ions for i in group):
                raise ConstraintError(f"gate ions {group} outside chain of {self.n_ions}")

    @classmethod
    def from_gates(cls, n_ions: int, gates) -> "GateTarget":
        """Build from ``[(ions, phases), ...]``.

        ``phases`` is ``"maximal"`` (pi/4 on every pair) or a mapping
        ``{(j, k): psi}`` in radians. Unlisted pairs inside a gate get zero.
        """
        psi = np.zeros((n_ions, n_ions))
        assigned: dict[tuple[int, int], float] = {}
        groups = []
        for ions, phases in gates:
            ions = tuple(sorted(int(i) for i in ions))
            if len(set(ions)) != len(ions) or len(ions) < 2:
                raise ConstraintError(f"gate needs at least two distinct ions, got {ions}")
            if any(i < 0 or i >= n_ions for i in ions):
                raise ConstraintError(f"gate ions {ions} outside chain of {n_ions}")
            groups.append(ions)
            if isinstance(phases, str):
                if phases != "maximal":
                    raise ConstraintError(f"unknown phase spec {phases!r}")
                pair_phases = {pair: np.pi / 4 for pair in itertools.combinations(ions, 2)}
            else:
                pair_phases = {pair: 0.0 for pair in itertools.combinations(ions, 2)}
                for (j, k), value in phases.items():
                    pair = (min(j, k), max(j, k))
                    if pair not in pair_phases:
                        raise ConstraintError(f"pair {pair} not inside gate {ions}")
                    pair_phases[pair] = float(value)
            for pair, value in pair_phases.items():
                if pair in assigned and assigned[pair] != value:
                    raise ConstraintError(f"conflicting targets for pair {pair}")
                assigned[pair] = value
                psi[pair] = psi[pair[::-1]] = value
        return cls(n_ions, psi, tuple(groups))

    @property
    def addressed(self) -> tuple[int, ...]:
        return tuple(sorted({i for g in self.gate_groups for i in g}))

    def pairs(self) -> list[tuple[int, int]]:
        return list(itertools.combinations(self.addressed, 2))


@dataclass(frozen=True)
class SlewBounds:
    d_omega: float | None = None  # rad/s per segment step
    d_phi: float | None = None  # rad per segment step

    def __post_init__(self):
        for name in ("d_omega", "d_phi"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConstraintError(f"slew bound {name} must be positive, got {value}")


@dataclass(frozen=True)
class SchemeConfig:
    modulation: str
    segments: int
    max_rabi: float
    shared_groups: tuple[tuple[int, ...], ...] = ()
    robust: bool = False
    slew: SlewBounds | None = None
    pin_endpoints: bool = False

    def __post_init__(self):
        if self.modulation not in SCHEMES:
            raise ConstraintError(f"modulation must be one of {SCHEMES}")
        if self.segments < 1:
            raise ConstraintError("need at least one segment")
        if not self.max_rabi > 0:
            raise ConstraintError("max_rabi must be positive")
        object.__setattr__(self, "shared_groups",
                           tuple(tuple(sorted(int(i) for i in g)) for g in self.shared_groups))
        if self.pin_endpoints and not self.amplitude_modulated:
            raise ConstraintError("endpoint pinning needs amplitude modulation")
        if self.pin_endpoints and (self.slew is None or self.slew.d_omega is None):
            raise ConstraintError("endpoint pinning needs an amplitude slew bound")

    @property
    def amplitude_modulated(self) -> bool:
        return self.modulation in ("am", "ampm")

    @property
    def phase_modulated(self) -> bool:
        return self.modulation in ("pm", "ampm")

    def groups_for(self, addressed) -> tuple[tuple[int, ...], ...]:
        """Partition of the addressed ions into drive-sharing groups."""
        addressed = tuple(addressed)
        shared = [g for g in self.shared_groups if g]
        covered = [i for g in shared for i in g]
        if len(set(covered)) != len(covered):
            raise ConstraintError("shared groups overlap")
        if not set(covered) <= set(addressed):
            raise ConstraintError("shared groups contain un-addressed ions")
        singles = [(i,) for i in addressed if i not in covered]
        return tuple(sorted(shared + singles))


def _reflect_index(segments: int) -> np.ndarray:
    half = (segments + 1) // 2
    idx = np.arange(segments)
    return np.where(idx < half, idx, segments - 1 - idx)


def reflect_symmetric(half_amplitudes, first_phase, half_increments, segments: int):
    """Mirror a half specification about the gate midpoint.

    Amplitudes become a palindrome; the S-1 phase increments
    ``phi[n] - phi[n-1]`` satisfy ``d[n] == d[S-n]``. Returns
    ``(amplitudes, phases)`` with trailing axis of length ``segments``.
    """
    half_amplitudes = np.asarray(half_amplitudes, dtype=float)
    first_phase = np.asarray(first_phase, dtype=float)[..., None]
    amps = half_amplitudes[..., _reflect_index(segments)]
    if segments == 1:
        return amps, first_phase + np.zeros(1)
    incs = np.asarray(half_increments, dtype=float)[..., _reflect_index(segments - 1)]
    phases = first_phase + np.concatenate(
        [np.zeros(incs.shape[:-1] + (1,)), np.cumsum(incs, axis=-1)], axis=-1)
    return amps, phases


def symmetry_residuals(amplitudes, phases) -> tuple[float, float]:
    """Max deviation from amplitude palindrome and mirrored phase increments."""
    amplitudes = np.atleast_2d(amplitudes)
    phases = np.atleast_2d(phases)
    amp_res = float(np.max(np.abs(amplitudes - amplitudes[:, ::-1]), initial=0.0))
    incs = np.diff(phases, axis=1)
    inc_res = float(np.max(np.abs(wrap_phase(incs - incs[:, ::-1])), initial=0.0))
    return amp_res, inc_res


@dataclass(frozen=True)
class VariableBlock:
    kind: str  # "amplitude" | "phase" | "phase_offset" | "phase_increment"
    group: int
    start: int
    size: int


class Parametrization:
    """Differentiable map from free real variables to a :class:`DriveWaveform`.

    One variable set per drive-sharing group. Amplitudes are squashed into
    (0, max_rabi) with a logistic map; AM uses a signed amplitude in
    (-max_rabi, max_rabi), emitted as a magnitude with phase 0 or pi. Under
    a slew bound the amplitude is a running sum of ``d_omega * tanh(x)``
    steps from zero, reflected back into range; with endpoint pinning each
    segment is instead squashed into the interval reachable from its
    predecessor. Phase increments under a slew bound are ``d_phi * tanh(x)``.
    Robust schemes carry only the first half and reflect.
    """

    def __init__(self, scheme: SchemeConfig, addressed, boundaries):
        self.scheme = scheme
        self.ions = tuple(addressed)
        self.boundaries = np.asarray(boundaries, dtype=float)
        if len(self.boundaries) - 1 != scheme.segments:
            raise ConstraintError("grid does not match scheme segment count")
        self.groups = scheme.groups_for(self.ions)
        self.group_rows = [[self.ions.index(i) for i in g] for g in self.groups]
        s = scheme.segments
        self.n_amp = (s + 1) // 2 if scheme.robust else s
        slew = scheme.slew or SlewBounds()
        self.d_omega = slew.d_omega if scheme.amplitude_modulated else None
        self.d_phi = slew.d_phi if scheme.phase_modulated else None
        # phase layout: absolute phases, or one offset plus increments
        self.incremental_phase = scheme.phase_modulated and (scheme.robust or self.d_phi is not None)
        if not scheme.phase_modulated:
            self.n_phase = 0
        elif self.incremental_phase:
            self.n_inc = (s // 2) if scheme.robust else s - 1
            self.n_phase = 1 + self.n_inc
        else:
            self.n_phase = s
        self.block = (self.n_amp if scheme.amplitude_modulated else 0) + self.n_phase
        self.blocks = self._layout()

    def _layout(self) -> list[VariableBlock]:
        blocks, start = [], 0
        for g in range(len(self.groups)):
            if self.scheme.amplitude_modulated:
                blocks.append(VariableBlock("amplitude", g, start, self.n_amp))
                start += self.n_amp
            if self.incremental_phase:
                blocks.append(VariableBlock("phase_offset", g, start, 1))
                blocks.append(VariableBlock("phase_increment", g, start + 1, self.n_inc))
                start += self.n_phase
            elif self.scheme.phase_modulated:
                blocks.append(VariableBlock("phase", g, start, self.n_phase))
                start += self.n_phase
        return blocks

    @property
    def size(self) -> int:
        return self.block * len(self.groups)

    def count(self, kind: str) -> int:
        return sum(b.size for b in self.blocks if b.kind == kind)

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(len(self.groups), self.block)
        n_a = self.n_amp if self.scheme.amplitude_modulated else 0
        return theta[:, :n_a], theta[:, n_a:]

    # amplitude maps -----------------------------------------------------
    # AM works with a signed amplitude a in [-max_rabi, max_rabi] (emitted as
    # |a| with phase 0 or pi); AMPM amplitudes live in [0, max_rabi].
    @property
    def _floor(self) -> float:
        return -self.scheme.max_rabi if self.scheme.modulation == "am" else 0.0

    @property
    def _pinned(self) -> bool:
        return self.scheme.pin_endpoints and not self.scheme.robust

    def _amp_bounds(self, prev, k, n):
        d = self.d_omega
        lo = np.maximum(self._floor, prev - d)
        hi = np.minimum(self.scheme.max_rabi, prev + d)
        if self._pinned:
            hi = np.minimum(hi, (n - k) * d)
            lo = np.maximum(lo, -(n - k) * d) if self._floor < 0 else lo
        return lo, hi

    def _fold(self, s):
        """Triangle-wave reflection of s into [floor, max_rabi]; 1-Lipschitz."""
        lo, width = self._floor, self.scheme.max_rabi - self._floor
        r = np.mod(s - lo, 2 * width)
        return lo + width - np.abs(width - r), np.sign(width - r)

    def _amplitudes(self, x):
        lo, hi = self._floor, self.scheme.max_rabi
        if self.d_omega is None:
            return lo + (hi - lo) * expit(x), None
        if not self._pinned:
            # bounded increments from zero, reflected into the amplitude range
            return self._fold(np.cumsum(self.d_omega * np.tanh(x), axis=1))
        n = x.shape[1]
        out = np.empty_like(x)
        sig = expit(x)
        prev = np.zeros(x.shape[0])
        for k in range(n):
            lo, hi = self._amp_bounds(prev, k, n)
            out[:, k] = lo + (hi - lo) * sig[:, k]
            prev = out[:, k]
        return out, sig

    def _amplitudes_vjp(self, x, amps, aux, g):
        if self.d_omega is None:
            s = expit(x)
            return g * (self.scheme.max_rabi - self._floor) * s * (1 - s)
        if not self._pinned:
            gs = np.cumsum((g * aux)[:, ::-1], axis=1)[:, ::-1]
            return gs * self.d_omega * (1 - np.tanh(x) ** 2)
        n = x.shape[1]
        gx = np.empty_like(x)
        carry = np.zeros(x.shape[0])
        for k in range(n - 1, -1, -1):
            prev = amps[:, k - 1] if k > 0 else np.zeros(x.shape[0])
            lo, hi = self._amp_bounds(prev, k, n)
            total = g[:, k] + carry
            gx[:, k] = total * (hi - lo) * aux[:, k] * (1 - aux[:, k])
            if k > 0:
                # lo and hi track prev only where the slew bound is the active one
                dlo = (lo == prev - self.d_omega).astype(float)
                dhi = (hi == prev + self.d_omega).astype(float)
                carry = total * (dlo * (1 - aux[:, k]) + dhi * aux[:, k])
        return gx

    def _amplitudes_inverse(self, amps):
        lo, hi = self._floor, self.scheme.max_rabi
        if self.d_omega is None:
            return logit((amps - lo) / (hi - lo))
        if not self._pinned:
            steps = np.diff(amps, axis=1, prepend=0.0)
            return np.arctanh(steps / self.d_omega)
        n = amps.shape[1]
        x = np.empty_like(amps)
        prev = np.zeros(amps.shape[0])
        for k in range(n):
            lo, hi = self._amp_bounds(prev, k, n)
            x[:, k] = logit((amps[:, k] - lo) / (hi - lo))
            prev = amps[:, k]
        return x

    # phase maps ---------------------------------------------------------
    def _increments(self, x):
        return x if self.d_phi is None else self.d_phi * np.tanh(x)

    def _phases(self, y):
        s = self.scheme.segments
        if not self.incremental_phase:
            return y
        offset, inc = y[:, 0], self._increments(y[:, 1:])
        if self.scheme.robust:
            if s == 1:
                return offset[:, None]
            inc = inc[:, _reflect_index(s - 1)]
        return np.concatenate([offset[:, None], offset[:, None] + np.cumsum(inc, axis=1)], axis=1)

    def _phases_vjp(self, y, g):
        s = self.scheme.segments
        if not self.incremental_phase:
            return g
        g_offset = g.sum(axis=1)
        # d phi_k / d inc_n = 1 for n <= k  -> reverse cumulative sum
        g_inc_full = np.cumsum(g[:, :0:-1], axis=1)[:, ::-1]
        if self.scheme.robust:
            g_inc = np.zeros((g.shape[0], self.n_inc))
            if s > 1:
                np.add.at(g_inc.T, _reflect_index(s - 1), g_inc_full.T)
        else:
            g_inc = g_inc_full
        if self.d_phi is not None:
            g_inc = g_inc * self.d_phi * (1 - np.tanh(y[:, 1:]) ** 2)
        return np.concatenate([g_offset[:, None], g_inc], axis=1)

    def _phases_inverse(self, phases):
        if not self.incremental_phase:
            return phases
        inc = np.diff(phases, axis=1)
        if self.scheme.robust:
            inc = inc[:, : self.n_inc]
        if self.d_phi is not None:
            inc = np.arctanh(inc / self.d_phi)
        return np.concatenate([phases[:, :1], inc], axis=1)

    # public -------------------------------------------------------------
    def group_controls(self, theta):
        """Return (amplitudes, phases, cache) per group, shape (groups x S)."""
        xa, xp = self._split(theta)
        s = self.scheme.segments
        ng = len(self.groups)
        cache = {}
        if self.scheme.amplitude_modulated:
            half, aux = self._amplitudes(xa)
            cache["half_amps"], cache["aux"] = half, aux
            amps = half[:, _reflect_index(s)] if self.scheme.robust else half
        else:
            amps = np.full((ng, s), self.scheme.max_rabi)
        phases = self._phases(xp) if self.scheme.phase_modulated else np.zeros((ng, s))
        if self.scheme.modulation == "am":
            cache["sign"] = np.where(amps < 0, -1.0, 1.0)
            phases = np.where(amps < 0, np.pi, 0.0)
            amps = np.abs(amps)
        return amps, phases, cache

    def to_drive(self, theta) -> DriveWaveform:
        amps, phases, _ = self.group_controls(theta)
        full_a = np.empty((len(self.ions), self.scheme.segments))
        full_p = np.empty_like(full_a)
        for g, rows in enumerate(self.group_rows):
            full_a[rows] = amps[g]
            full_p[rows] = phases[g]
        return DriveWaveform(self.boundaries, self.ions, full_a, full_p, self.scheme.robust)

    def backprop(self, theta, cache, grad_amps, grad_phases):
        """Chain rule from per-ion d/dOmega, d/dphi to d/dtheta."""
        xa, xp = self._split(theta)
        s = self.scheme.segments
        ga = np.array([grad_amps[rows].sum(axis=0) for rows in self.group_rows])
        gp = np.array([grad_phases[rows].sum(axis=0) for rows in self.group_rows])
        parts = []
        if self.scheme.amplitude_modulated:
            if "sign" in cache:
                ga = ga * cache["sign"]
            if self.scheme.robust:
                g_half = np.zeros((len(self.groups), self.n_amp))
                np.add.at(g_half.T, _reflect_index(s), ga.T)
            else:
                g_half = ga
            parts.append(self._amplitudes_vjp(xa, cache["half_amps"], cache["aux"], g_half))
        if self.scheme.phase_modulated:
            parts.append(self._phases_vjp(xp, gp))
        return np.concatenate(parts, axis=1).ravel()

    def from_drive(self, drive: DriveWaveform) -> np.ndarray:
        """Inverse map for drives inside the open feasible set."""
        rows = [r[0] for r in self.group_rows]
        parts = []
        if self.scheme.amplitude_modulated:
            amps = drive.amplitudes[rows]
            if self.scheme.modulation == "am":
                amps = amps * np.where(np.cos(drive.phases[rows]) < 0, -1.0, 1.0)
            if self.scheme.robust:
                amps = amps[:, : self.n_amp]
            parts.append(self._amplitudes_inverse(amps))
        if self.scheme.phase_modulated:
            parts.append(self._phases_inverse(drive.phases[rows]))
        return np.concatenate(parts, axis=1).ravel()

    def initial_guess(self, rng: np.random.Generator) -> np.ndarray:
        """Seeded start: amplitude squash positions uniform in [0.1, 0.9],
        absolute phases uniform in (-pi, pi], bounded increments uniform in
        90% of their range."""
        ng = len(self.groups)
        parts = []
        if self.scheme.amplitude_modulated:
            parts.append(logit(rng.uniform(0.1, 0.9, size=(ng, self.n_amp))))
        if self.scheme.phase_modulated:
            if self.incremental_phase:
                offset = -rng.uniform(-np.pi, np.pi, size=(ng, 1))
                if self.d_phi is None:
                    inc = rng.uniform(-np.pi, np.pi, size=(ng, self.n_inc))
                else:
                    inc = np.arctanh(rng.uniform(-0.9, 0.9, size=(ng, self.n_inc)))
                parts.append(np.concatenate([offset, inc], axis=1))
            else:
                parts.append(-rng.uniform(-np.pi, np.pi, size=(ng, self.n_phase)))
        return np.concatenate(parts, axis=1).ravel() if parts else np.zeros(0)


def build_parametrization(scheme: SchemeConfig, target: GateTarget, boundaries) -> Parametrization:
    return Parametrization(scheme, target.addressed, boundaries)


@dataclass
class ConstraintReport:
    max_amplitude: float
    min_amplitude: float
    max_amplitude_step: float
    max_phase_step: float
    amplitude_symmetry_residual: float
    phase_symmetry_residual: float
    checks: dict[str, bool] = field(default_factory=dict)
    violations: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate(drive: DriveWaveform, scheme: SchemeConfig, rtol: float = 1e-9) -> ConstraintReport:
    """Report amplitude, slew and symmetry figures and pass/fail per constraint."""
    if drive.n_segments != scheme.segments:
        raise ConstraintError("drive and scheme disagree on segment count")
    amps, phases = drive.amplitudes, drive.phases
    steps_a = np.diff(amps, axis=1)
    if scheme.pin_endpoints:
        zeros = np.zeros((amps.shape[0], 1))
        steps_a = np.diff(np.concatenate([zeros, amps, zeros], axis=1), axis=1)
    steps_p = wrap_phase(np.diff(phases, axis=1))
    max_step_a = float(np.max(np.abs(steps_a), initial=0.0))
    max_step_p = float(np.max(np.abs(steps_p), initial=0.0))
    amp_res, inc_res = symmetry_residuals(amps, phases)
    report = ConstraintReport(
        max_amplitude=float(amps.max(initial=0.0)),
        min_amplitude=float(amps.min(initial=0.0)),
        max_amplitude_step=max_step_a,
        max_phase_step=max_step_p,
        amplitude_symmetry_residual=amp_res,
        phase_symmetry_residual=inc_res,
    )
    slack = 1 + rtol

    def check(name, value, bound):
        report.checks[name] = value <= bound * slack
        if not report.checks[name]:
            report.violations[name] = value - bound

    check("max_amplitude", report.max_amplitude, scheme.max_rabi)
    report.checks["non_negative"] = report.min_amplitude >= 0
    if scheme.modulation == "am":
        # signed amplitudes: phase restricted to 0 or pi
        off_axis = float(np.max(np.abs(np.sin(phases)) * (amps > 0), initial=0.0))
        report.checks["phase_fixed"] = off_axis <= 1e-12
        if not report.checks["phase_fixed"]:
            report.violations["phase_fixed"] = off_axis
    if scheme.modulation == "pm":
        check("amplitude_fixed", float(np.max(np.abs(amps - scheme.max_rabi), initial=0.0)),
              rtol * scheme.max_rabi)
    if scheme.slew is not None:
        if scheme.slew.d_omega is not None:
            check("amplitude_slew", max_step_a, scheme.slew.d_omega)
        if scheme.slew.d_phi is not None:
            check("phase_slew", max_step_p, scheme.slew.d_phi)
    if scheme.robust:
        check("amplitude_symmetry", amp_res, 0.0)
        # increments are recovered by differencing, so allow round-off only
        check("phase_symmetry", inc_res, 1e-13 * max(1.0, float(np.max(np.abs(phases)))))
    return report
