"""Closed-form segment kernels for displacement, entangling phase and
trajectory centre of mass.

Everything inside a :class:`KernelSet` is dimensionless: times are in units
of the gate duration tau, detunings in units of 1/tau and drive values
enter as ``gamma * tau``. With that scaling the displacement ``M @ u`` and
the phases ``Im(u^T P u*)`` come out in their natural units directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .chain import ModeData
from .controls import DriveWaveform

SERIES_THRESHOLD = 0.05
_SERIES_TERMS = 12
_E1_COEF = np.array([1 / factorial(n + 1) for n in range(_SERIES_TERMS)])
_J_COEF = np.array([1 / factorial(n + 2) for n in range(_SERIES_TERMS)])


class GridMismatch(ValueError):
    pass


def _series(coef, ix):
    out = np.zeros_like(ix)
    for c in coef[::-1]:
        out = out * ix + c
    return out


def segment_exp_integral(delta, width):
    """``int_0^width exp(i*delta*s) ds``, elementwise with broadcasting."""
    delta, width = np.broadcast_arrays(np.asarray(delta, dtype=float), np.asarray(width, dtype=float))
    x = delta * width
    small = np.abs(x) < SERIES_THRESHOLD
    out = np.empty(x.shape, dtype=complex)
    xs = x[small]
    out[small] = width[small] * _series(_E1_COEF, 1j * xs)
    xl, dl = x[~small], delta[~small]
    out[~small] = (np.expm1(1j * xl)) / (1j * dl)
    return out


def segment_double_integral(delta, width):
    """``int_0^width ds int_0^s exp(i*delta*r) dr`` (time-ordered triangle)."""
    delta, width = np.broadcast_arrays(np.asarray(delta, dtype=float), np.asarray(width, dtype=float))
    x = delta * width
    small = np.abs(x) < SERIES_THRESHOLD
    out = np.empty(x.shape, dtype=complex)
    out[small] = width[small] ** 2 * _series(_J_COEF, 1j * x[small])
    xl, dl, wl = x[~small], delta[~small], width[~small]
    # (e^{ix} - 1 - ix) / (i delta)^2
    num = -2 * np.sin(xl / 2) ** 2 + 1j * (np.sin(xl) - xl)
    out[~small] = num / (1j * dl) ** 2
    return out


def segment_moment_integral(delta, start, width):
    """``int_start^{start+width} t exp(i*delta*t) dt``."""
    e1 = segment_exp_integral(delta, width)
    j = segment_double_integral(delta, width)
    # int_0^w s e^{i d s} ds = w*E1 - J
    return np.exp(1j * np.asarray(delta) * start) * (start * e1 + width * e1 - j)


@dataclass(frozen=True)
class KernelSet:
    """Precomputed kernels on one segment grid.

    ``I[p, k]`` is the segment integral of exp(i delta_p t); ``M = I / 2``.
    ``D[p, k]`` is the within-segment time-ordered double integral (the
    diagonal of the per-mode phase kernel) and ``R`` the centre-of-mass
    kernel. ``ions`` lists the rows of ``eta`` kept.
    """

    modes: ModeData
    boundaries: np.ndarray
    ions: tuple[int, ...]
    I: np.ndarray
    D: np.ndarray
    R: np.ndarray
    eta: np.ndarray
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def duration(self) -> float:
        return float(self.boundaries[-1])

    @property
    def M(self) -> np.ndarray:
        return 0.5 * self.I

    @property
    def grid(self) -> np.ndarray:
        return self.boundaries / self.duration

    @property
    def scaled_detunings(self) -> np.ndarray:
        return self.modes.detunings * self.duration

    @property
    def n_segments(self) -> int:
        return len(self.boundaries) - 1

    def mode_kernel(self, p: int) -> np.ndarray:
        """Dense time-ordered kernel ``Q[k, l] = int_{A_k} e^{i d t1} int_{A_l, t2<t1} e^{-i d t2}``."""
        q = np.tril(np.outer(self.I[p], self.I[p].conj()), k=-1)
        q[np.diag_indices_from(q)] = self.D[p]
        return q

    def P(self, m: int, n: int) -> np.ndarray:
        """Dense phase kernel for ions (m, n); cached per unordered pair."""
        key = (min(m, n), max(m, n))
        if key not in self._dense:
            rm, rn = self.ions.index(m), self.ions.index(n)
            weights = self.eta[rm] * self.eta[rn] / 4
            q = np.zeros((self.n_segments, self.n_segments), dtype=complex)
            for p in np.flatnonzero(weights):
                q += weights[p] * self.mode_kernel(p)
            self._dense[key] = q
        return self._dense[key]

    def check(self, drive: DriveWaveform) -> np.ndarray:
        """Validate the grid and return scaled drive values, rows = self.ions."""
        if drive.n_segments != self.n_segments or not np.allclose(
                drive.boundaries, self.boundaries, rtol=1e-12, atol=0):
            raise GridMismatch("drive grid does not match kernel grid")
        missing = set(drive.ions) - set(self.ions)
        if missing:
            raise GridMismatch(f"kernels do not cover ions {sorted(missing)}")
        u = np.zeros((len(self.ions), self.n_segments), dtype=complex)
        for row, ion in enumerate(drive.ions):
            u[self.ions.index(ion)] = drive.values[row]
        return u * self.duration


def build_kernels(modes: ModeData, boundaries, ions=None) -> KernelSet:
    boundaries = np.asarray(boundaries, dtype=float)
    if boundaries.ndim != 1 or len(boundaries) < 2 or boundaries[0] != 0 or np.any(np.diff(boundaries) <= 0):
        raise GridMismatch("segment boundaries must start at 0 and increase strictly")
    if not np.all(np.isfinite(modes.detunings)):
        raise ValueError("relative detunings must be finite")
    ions = tuple(range(modes.n_ions)) if ions is None else tuple(int(i) for i in ions)
    tau = boundaries[-1]
    t = boundaries / tau
    width = np.diff(t)[None, :]
    start = t[:-1][None, :]
    d = (modes.detunings * tau)[:, None]
    phase0 = np.exp(1j * d * start)
    seg = phase0 * segment_exp_integral(d, width)
    tri = segment_double_integral(d, width)
    com = seg * (1.0 - t[1:][None, :]) + phase0 * tri
    return KernelSet(modes, boundaries, ions, seg, np.broadcast_to(tri, seg.shape).copy(), com,
                     modes.lamb_dicke[list(ions)])


# --- evaluations on scaled controls (rows of u follow kernels.ions) ------

def scaled_displacements(kernels: KernelSet, u: np.ndarray) -> np.ndarray:
    return u @ kernels.M.T


def scaled_com(kernels: KernelSet, u: np.ndarray) -> np.ndarray:
    return u @ kernels.R.T


def antisym_apply(kernels: KernelSet, u: np.ndarray) -> np.ndarray:
    """``conj(Q - Q^H) @ u`` for every mode, via cumulative sums.

    Returns an (ions x modes x segments) array ``V`` with
    ``phi_mn + phi_nm = sum_p eta_m eta_n / 4 * Im(u_m . conj(V_n^p))``.
    """
    I = kernels.I[None, :, :]
    y = I * u[:, None, :]
    before = np.cumsum(y, axis=2) - y
    total = y.sum(axis=2, keepdims=True)
    return I.conj() * (2 * before + y - total) - 2j * kernels.D.imag[None] * u[:, None, :]


def scaled_phases(kernels: KernelSet, u: np.ndarray, V: np.ndarray | None = None) -> np.ndarray:
    """Symmetric matrix of accumulated phases phi_mn + phi_nm (zero diagonal)."""
    if V is None:
        V = antisym_apply(kernels, u)
    W = np.einsum("mk,npk->mnp", u, V.conj()).imag
    eta = kernels.eta
    phases = np.einsum("mnp,mp,np->mn", W, eta, eta) / 4
    np.fill_diagonal(phases, 0.0)
    return phases


def dense_phases(kernels: KernelSet, u: np.ndarray) -> np.ndarray:
    """Same quantity through the dense P^{m,n} matrices (slow route)."""
    n = len(kernels.ions)
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            P = kernels.P(kernels.ions[a], kernels.ions[b])
            out[a, b] = out[b, a] = (u[a] @ P @ u[b].conj()).imag + (u[b] @ P @ u[a].conj()).imag
    return out


# --- public, SI-facing evaluations --------------------------------------

def displacements(kernels: KernelSet, drive: DriveWaveform) -> np.ndarray:
    """alpha_j^p(tau) for the drive's ions (rows follow ``drive.ions``)."""
    u = kernels.check(drive)
    rows = [kernels.ions.index(i) for i in drive.ions]
    return scaled_displacements(kernels, u)[rows]


def entangling_phases(kernels: KernelSet, drive: DriveWaveform, dense: bool = False) -> np.ndarray:
    """phi_mn(tau) + phi_nm(tau) over the drive's ions."""
    u = kernels.check(drive)
    rows = [kernels.ions.index(i) for i in drive.ions]
    phases = dense_phases(kernels, u) if dense else scaled_phases(kernels, u)
    return phases[np.ix_(rows, rows)]


def com_residuals(kernels: KernelSet, drive: DriveWaveform) -> np.ndarray:
    """``R u_n`` in units of tau (equals 2/tau * int_0^tau alpha(t) dt)."""
    u = kernels.check(drive)
    rows = [kernels.ions.index(i) for i in drive.ions]
    return scaled_com(kernels, u)[rows]


def _check_times(drive, sample_times):
    t = np.atleast_1d(np.asarray(sample_times, dtype=float))
    if np.any(t < 0) or np.any(t > drive.duration):
        raise ValueError("sample times must lie within [0, tau]")
    return t


def trajectory_series(drive: DriveWaveform, modes: ModeData, sample_times) -> np.ndarray:
    """alpha_j^p(t) sampled at ``sample_times``; shape (times, ions, modes)."""
    t = _check_times(drive, sample_times)
    b = drive.boundaries
    gamma = drive.values
    d = modes.detunings
    seg_full = np.exp(1j * d[:, None] * b[None, :-1]) * segment_exp_integral(d[:, None], np.diff(b)[None, :])
    # alpha at each boundary: cumulative over completed segments
    at_bounds = np.concatenate(
        [np.zeros((len(drive.ions), len(d), 1), complex),
         np.cumsum(0.5 * gamma[:, None, :] * seg_full[None], axis=2)], axis=2)
    k = np.clip(np.searchsorted(b, t, side="right") - 1, 0, drive.n_segments - 1)
    partial = np.exp(1j * d[None, :] * b[k][:, None]) * segment_exp_integral(d[None, :], (t - b[k])[:, None])
    out = at_bounds[:, :, k].transpose(2, 0, 1) + 0.5 * gamma[:, k].T[:, :, None] * partial[:, None, :]
    return out


def phase_series(drive: DriveWaveform, modes: ModeData, sample_times) -> np.ndarray:
    """phi_jk(t) + phi_kj(t) sampled at ``sample_times``; shape (times, ions, ions)."""
    t = _check_times(drive, sample_times)
    b = drive.boundaries
    out = np.zeros((len(t), len(drive.ions), len(drive.ions)))
    for i, ti in enumerate(t):
        if ti <= 0:
            continue
        k = int(np.searchsorted(b, ti, side="left"))  # segments 0..k-1 touched
        grid = np.concatenate([b[:k], [ti]])
        part = DriveWaveform(grid, drive.ions, drive.amplitudes[:, :k], drive.phases[:, :k])
        kernels = build_kernels(modes, grid, drive.ions)
        out[i] = scaled_phases(kernels, kernels.check(part))
    return out
