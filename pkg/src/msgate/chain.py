"""Linear ion-chain equilibrium, normal modes and Lamb-Dicke couplings.

All frequencies are angular (rad/s). Positions are solved in the usual
dimensionless units where the axial potential is u**2/2 and the Coulomb
term is 1/|u_i - u_j|; the physical length scale is returned alongside.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants

AXES = ("x", "y", "z")
AMU = constants.physical_constants["atomic mass constant"][0]


class ChainError(ValueError):
    """Raised for invalid trap configurations."""


class ChainInstabilityError(ChainError):
    """The linear chain is not a stable configuration for the given trap."""


class SolverFailure(RuntimeError):
    def __init__(self, message: str, gradient_norm: float):
        super().__init__(f"{message} (last gradient max-norm {gradient_norm:.3e})")
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class TrapChainConfig:
    n_ions: int
    mass: float
    com_frequencies: tuple[float, float, float]
    raman_wavevector: tuple[float, float, float]
    mean_phonons: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if int(self.n_ions) != self.n_ions or self.n_ions < 1:
            raise ChainError(f"n_ions must be a positive integer, got {self.n_ions}")
        if self.mass <= 0:
            raise ChainError("mass must be positive")
        if len(self.com_frequencies) != 3 or min(self.com_frequencies) <= 0:
            raise ChainError("com_frequencies must be three positive values [x, y, z]")
        if len(self.raman_wavevector) != 3:
            raise ChainError("raman_wavevector must be a 3-vector")
        for axis, nbar in self.mean_phonons.items():
            if axis not in AXES or nbar < 0:
                raise ChainError(f"invalid mean phonon entry {axis}: {nbar}")

    @classmethod
    def ytterbium(cls, n_ions, frequencies_mhz=(1.6, 1.5, 0.3), wavelength_nm=355.0,
                  direction=(1.0, 1.0, 0.0), **kwargs) -> "TrapChainConfig":
        """171Yb+ chain with trap frequencies in MHz and a Raman wavevector
        ``2*pi/wavelength * direction`` (direction is used as given, not normalised)."""
        k = 2 * np.pi / (wavelength_nm * 1e-9) * np.asarray(direction, dtype=float)
        return cls(
            n_ions=n_ions,
            mass=171 * AMU,
            com_frequencies=tuple(2 * np.pi * 1e6 * np.asarray(frequencies_mhz, dtype=float)),
            raman_wavevector=tuple(k),
            **kwargs,
        )


@dataclass(frozen=True)
class EquilibriumPositions:
    dimensionless: np.ndarray
    length_scale: float

    @property
    def physical(self) -> np.ndarray:
        return self.length_scale * self.dimensionless


@dataclass(frozen=True)
class AxisModes:
    axis: str
    frequencies: np.ndarray  # rad/s, descending (COM first on transverse axes)
    eigenvectors: np.ndarray  # ions x modes, orthonormal columns
    hessian: np.ndarray  # dimensionless, eigenvalues are (nu/nu_z)**2


@dataclass(frozen=True)
class ModeData:
    """Modes that couple to the drive, concatenated over axes.

    ``lamb_dicke[j, p]`` is the coupling of ion ``j`` to mode ``p``;
    ``detunings[p]`` is the relative detuning nu_p - delta in rad/s.
    """

    frequencies: np.ndarray
    eigenvectors: np.ndarray
    lamb_dicke: np.ndarray
    axis_labels: tuple[str, ...]
    mean_phonons: np.ndarray
    detunings: np.ndarray
    laser_detuning: float

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    @property
    def n_ions(self) -> int:
        return self.eigenvectors.shape[0]

    def with_detunings(self, detunings) -> "ModeData":
        detunings = np.broadcast_to(np.asarray(detunings, dtype=float), self.detunings.shape)
        return ModeData(self.frequencies, self.eigenvectors, self.lamb_dicke, self.axis_labels,
                        self.mean_phonons, detunings.copy(), self.laser_detuning)

    def mode_label(self, p: int) -> str:
        axis = self.axis_labels[p]
        index = sum(1 for q in range(p) if self.axis_labels[q] == axis)
        return f"{axis}{index}"


def _pair_terms(u):
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return diff


def potential_gradient(u: np.ndarray) -> np.ndarray:
    """Gradient of sum(u**2)/2 + sum_{i<j} 1/|u_i - u_j|."""
    diff = _pair_terms(u)
    return u - np.sum(np.sign(diff) / diff**2, axis=1)


def axial_hessian(u: np.ndarray) -> np.ndarray:
    inv3 = 1.0 / np.abs(_pair_terms(u)) ** 3
    hess = -2.0 * inv3
    np.fill_diagonal(hess, 1.0 + 2.0 * inv3.sum(axis=1))
    return hess


def transverse_hessian(u: np.ndarray, ratio_sq: float) -> np.ndarray:
    inv3 = 1.0 / np.abs(_pair_terms(u)) ** 3
    hess = inv3.copy()
    np.fill_diagonal(hess, ratio_sq - inv3.sum(axis=1))
    return hess


def equilibrium_positions(config: TrapChainConfig, tol: float = 1e-12,
                          max_iter: int = 200) -> EquilibriumPositions:
    """Damped Newton solve for the axial equilibrium of the chain."""
    n = config.n_ions
    nu_z = config.com_frequencies[2]
    charge = constants.elementary_charge
    length = (charge**2 / (4 * np.pi * constants.epsilon_0 * config.mass * nu_z**2)) ** (1 / 3)
    if n == 1:
        return EquilibriumPositions(np.zeros(1), length)

    # uniform spacing heuristic; spacing ~ N**-0.56 scaled to the chain length
    spacing = 2.0 * n**-0.56
    u = spacing * (np.arange(n) - (n - 1) / 2)
    grad = potential_gradient(u)
    gnorm = np.max(np.abs(grad))
    for _ in range(max_iter):
        if gnorm < tol:
            break
        step = np.linalg.solve(axial_hessian(u), grad)
        t = 1.0
        while t > 1e-8:
            trial = u - t * step
            if np.all(np.diff(trial) > 0):
                trial_norm = np.max(np.abs(potential_gradient(trial)))
                if trial_norm < gnorm or trial_norm < tol:
                    break
            t *= 0.5
        else:
            raise SolverFailure("equilibrium line search stalled", gnorm)
        u = trial
        # enforce mirror symmetry against round-off drift
        u = 0.5 * (u - u[::-1])
        grad = potential_gradient(u)
        gnorm = np.max(np.abs(grad))
    if gnorm >= 1e-10:
        raise SolverFailure("equilibrium solve did not converge", gnorm)
    return EquilibriumPositions(u, length)


def normal_modes(config: TrapChainConfig, positions: EquilibriumPositions, axis: str) -> AxisModes:
    if axis not in AXES:
        raise ChainError(f"unknown axis {axis!r}")
    u = positions.dimensionless
    nu_z = config.com_frequencies[2]
    if axis == "z":
        hess = axial_hessian(u) if len(u) > 1 else np.ones((1, 1))
    else:
        ratio_sq = (config.com_frequencies[AXES.index(axis)] / nu_z) ** 2
        hess = transverse_hessian(u, ratio_sq) if len(u) > 1 else np.full((1, 1), ratio_sq)
    evals, evecs = np.linalg.eigh(hess)
    if np.any(evals <= 0):
        raise ChainInstabilityError(
            f"linear chain of {config.n_ions} ions unstable on {axis} axis "
            f"(smallest eigenvalue {evals.min():.3e})")
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    # sign convention: first significant component positive
    for col in range(evecs.shape[1]):
        pivot = np.flatnonzero(np.abs(evecs[:, col]) > 1e-9)[0]
        if evecs[pivot, col] < 0:
            evecs[:, col] *= -1
    return AxisModes(axis, nu_z * np.sqrt(evals), evecs, hess)


def build_mode_data(config: TrapChainConfig, positions: EquilibriumPositions,
                    laser_detuning: float) -> ModeData:
    """Collect every mode with nonzero wavevector projection.

    ``laser_detuning`` is delta in rad/s; relative detunings are nu_p - delta.
    """
    k = np.asarray(config.raman_wavevector, dtype=float)
    if not np.any(k):
        raise ChainError("Raman wavevector is zero; no mode couples to the drive")
    freqs, vecs, etas, labels, nbars = [], [], [], [], []
    for i, axis in enumerate(AXES):
        if k[i] == 0:
            continue
        modes = normal_modes(config, positions, axis)
        zpf = np.sqrt(constants.hbar / (2 * config.mass * modes.frequencies))
        freqs.append(modes.frequencies)
        vecs.append(modes.eigenvectors)
        etas.append(k[i] * zpf[None, :] * modes.eigenvectors)
        labels.extend([axis] * len(modes.frequencies))
        nbars.append(np.full(len(modes.frequencies), config.mean_phonons.get(axis, 0.0)))
    freqs = np.concatenate(freqs)
    return ModeData(
        frequencies=freqs,
        eigenvectors=np.hstack(vecs),
        lamb_dicke=np.hstack(etas),
        axis_labels=tuple(labels),
        mean_phonons=np.concatenate(nbars),
        detunings=freqs - laser_detuning,
        laser_detuning=float(laser_detuning),
    )


def com_frequency(config: TrapChainConfig, axis: str = "x") -> float:
    return config.com_frequencies[AXES.index(axis)]
