"""Multi-start gradient optimisation of gate drives.

The cost is the quadratic surrogate

    C = w_phase * sum_{j<k} eps_jk**2 + w_motion * sum_{j,p} |alpha_j^p(tau)|**2
        + w_com * sum_{j,p} |(R u_j)_p|**2

over addressed ions, with exact gradients propagated through the scheme
parametrization. Each instance runs L-BFGS from a seeded random start.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .controls import DriveWaveform, GateTarget, Parametrization, SchemeConfig, validate
from .kernels import KernelSet, antisym_apply, build_kernels, scaled_phases

log = logging.getLogger(__name__)


class OptimizationFailure(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class CostWeights:
    phase: float = 1.0
    motion: float = 1.0
    com: float = 1.0

    def __post_init__(self):
        if min(self.phase, self.motion, self.com) < 0:
            raise ValueError("cost weights must be non-negative")


@dataclass
class OptimizationProblem:
    kernels: KernelSet
    target: GateTarget
    scheme: SchemeConfig
    weights: CostWeights | None = None
    instance_count: int = 5
    iteration_budget: int = 2000
    convergence_tolerance: float = 1e-14
    rng_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.weights is None:
            self.weights = CostWeights(com=1.0 if self.scheme.robust else 0.0)
        if (self.weights.com > 0) != self.scheme.robust:
            raise ValueError("com weight must be positive exactly when the scheme is robust")
        if self.instance_count < 1:
            raise ValueError("instance_count must be >= 1")
        addressed = self.target.addressed
        if self.kernels.ions != addressed:
            self.kernels = build_kernels(self.kernels.modes, self.kernels.boundaries, addressed)
        self.parametrization = Parametrization(self.scheme, addressed, self.kernels.boundaries)


@dataclass
class CostBreakdown:
    total: float
    phase: float
    motion: float
    com: float


class GateCost:
    """Cost, gradient and diagnostics for one problem."""

    def __init__(self, problem: OptimizationProblem):
        self.problem = problem
        self.kernels = problem.kernels
        self.param = problem.parametrization
        self.weights = problem.weights
        ions = self.kernels.ions
        self.psi = problem.target.psi[np.ix_(ions, ions)]
        self.upper = np.triu_indices(len(ions), k=1)
        # row -> group index
        self.row_group = np.empty(len(ions), dtype=int)
        for g, rows in enumerate(self.param.group_rows):
            self.row_group[rows] = g
        self.M = self.kernels.M
        self.R = self.kernels.R
        self.eta = self.kernels.eta
        self.tau = self.kernels.duration

    def _controls(self, theta):
        amps, phases, cache = self.param.group_controls(theta)
        amps, phases = amps[self.row_group], phases[self.row_group]
        unit = np.exp(1j * phases)
        return amps, unit, self.tau * amps * unit, cache

    def terms(self, theta):
        _, _, u, _ = self._controls(theta)
        return self._terms(u)

    def _terms(self, u, V=None):
        alpha = u @ self.M.T
        phases = scaled_phases(self.kernels, u, V)
        eps = self.psi - phases
        com = u @ self.R.T if self.weights.com > 0 else np.zeros_like(alpha)
        return alpha, phases, eps, com

    def breakdown(self, theta) -> CostBreakdown:
        alpha, _, eps, com = self.terms(theta)
        w = self.weights
        cp = w.phase * float(np.sum(eps[self.upper] ** 2))
        cm = w.motion * float(np.sum(np.abs(alpha) ** 2))
        cc = w.com * float(np.sum(np.abs(com) ** 2))
        return CostBreakdown(cp + cm + cc, cp, cm, cc)

    def __call__(self, theta):
        return self.value_and_grad(theta)

    def value(self, theta) -> float:
        return self.breakdown(theta).total

    def value_and_grad(self, theta):
        w = self.weights
        amps, unit, u, cache = self._controls(theta)
        V = antisym_apply(self.kernels, u)
        alpha, _, eps, com = self._terms(u, V)
        np.fill_diagonal(eps, 0.0)
        cost = (w.phase * float(np.sum(eps[self.upper] ** 2))
                + w.motion * float(np.sum(np.abs(alpha) ** 2))
                + w.com * float(np.sum(np.abs(com) ** 2)))
        # gradient wrt u as d/dRe + i d/dIm
        g = 2 * w.motion * (alpha @ self.M.conj())
        if w.com > 0:
            g += 2 * w.com * (com @ self.R.conj())
        T = np.einsum("mn,np,npk->mpk", eps, self.eta, V)
        g += -0.5j * w.phase * np.einsum("mp,mpk->mk", self.eta, T)
        gc = g.conj()
        grad_amps = self.tau * np.real(gc * unit)
        grad_phases = np.real(gc * 1j * u)
        return cost, self.param.backprop(theta, cache, grad_amps, grad_phases)

    def internal_infidelity(self, theta, mean_phonons=None) -> float:
        alpha, _, eps, _ = self.terms(theta)
        nbar = self.kernels.modes.mean_phonons if mean_phonons is None else mean_phonons
        motional = float(np.sum(np.abs(self.eta * alpha) ** 2 * (np.asarray(nbar) + 0.5)))
        fid = (np.prod(np.cos(eps[self.upper])) * (1 - motional)) ** 2
        return float(np.clip(1 - fid, 0.0, 1.0))


def cost(theta, problem: OptimizationProblem) -> float:
    return GateCost(problem).value(theta)


def gradient(theta, problem: OptimizationProblem) -> np.ndarray:
    return GateCost(problem).value_and_grad(theta)[1]


def initial_guess(scheme: SchemeConfig, rng, parametrization: Parametrization) -> np.ndarray:
    return parametrization.initial_guess(rng)


@dataclass
class InstanceResult:
    index: int
    theta: np.ndarray
    cost: float
    history: list[float]
    iterations: int
    evaluations: int
    message: str
    wall_time_s: float


@dataclass
class OptimizationResult:
    best_drive: DriveWaveform
    best_theta: np.ndarray
    best_instance: int
    breakdown: CostBreakdown
    infidelity: float
    internal_infidelity: float
    wall_time_s: float
    instances: list[InstanceResult] = field(default_factory=list)
    constraints_passed: bool = True

    @property
    def cost_histories(self) -> list[list[float]]:
        return [inst.history for inst in self.instances]


class _Stop(Exception):
    pass


def run_instance(problem: OptimizationProblem, index: int, seed_seq) -> InstanceResult:
    """One L-BFGS descent from a seeded start; stops early below tolerance."""
    rng = np.random.default_rng(seed_seq)
    gate_cost = GateCost(problem)
    theta0 = problem.parametrization.initial_guess(rng)
    best = {"cost": np.inf, "theta": theta0.copy()}
    history: list[float] = []
    start = time.perf_counter()

    def fun(theta):
        value, grad = gate_cost.value_and_grad(theta)
        if np.isfinite(value) and value < best["cost"]:
            best["cost"], best["theta"] = value, theta.copy()
        return value, grad

    def callback(intermediate_result):
        history.append(best["cost"])
        if best["cost"] < problem.convergence_tolerance:
            raise StopIteration

    res = minimize(fun, theta0, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": problem.iteration_budget, "maxfun": 4 * problem.iteration_budget,
                            "ftol": 0.0, "gtol": 0.0, "maxcor": 30})
    if not history or history[-1] != best["cost"]:
        history.append(best["cost"])
    return InstanceResult(index, best["theta"], float(best["cost"]), history, int(res.nit),
                          int(res.nfev), str(res.message), time.perf_counter() - start)


def _instance_task(args):
    problem, index, seed_seq = args
    return run_instance(problem, index, seed_seq)


def optimize(problem: OptimizationProblem) -> OptimizationResult:
    """Run ``instance_count`` seeded starts and keep the lowest final cost."""
    from .analysis import operational_infidelity

    start = time.perf_counter()
    seeds = np.random.SeedSequence(problem.rng_seed).spawn(problem.instance_count)
    tasks = [(problem, i, s) for i, s in enumerate(seeds)]
    if problem.workers > 1 and problem.instance_count > 1:
        with ProcessPoolExecutor(max_workers=problem.workers) as pool:
            instances = list(pool.map(_instance_task, tasks))
    else:
        instances = [_instance_task(t) for t in tasks]
    for inst in instances:
        log.debug("instance %d: cost %.3e after %d iterations (%s)", inst.index, inst.cost,
                  inst.iterations, inst.message)
    finite = [inst for inst in instances if np.isfinite(inst.cost)]
    if not finite:
        raise OptimizationFailure("every optimisation instance diverged",
                                  [(i.index, i.message) for i in instances])
    best = min(finite, key=lambda inst: (inst.cost, inst.index))
    gate_cost = GateCost(problem)
    drive = problem.parametrization.to_drive(best.theta)
    report = operational_infidelity(drive, problem.kernels, problem.target, dense=True)
    return OptimizationResult(
        best_drive=drive,
        best_theta=best.theta,
        best_instance=best.index,
        breakdown=gate_cost.breakdown(best.theta),
        infidelity=report.infidelity,
        internal_infidelity=gate_cost.internal_infidelity(best.theta),
        wall_time_s=time.perf_counter() - start,
        instances=instances,
        constraints_passed=validate(drive, problem.scheme).passed,
    )
