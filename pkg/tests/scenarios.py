"""Physical test scenarios shared by unit and acceptance tests.

Optimizations are cached per process so several tests can inspect the
same solution without re-running it.
"""
from functools import lru_cache

import numpy as np

from msgate.chain import TrapChainConfig, build_mode_data, equilibrium_positions
from msgate.controls import GateTarget, SchemeConfig, SlewBounds, uniform_grid
from msgate.kernels import build_kernels
from msgate.optimize import OptimizationProblem, optimize

TWO_PI = 2 * np.pi
KHZ = TWO_PI * 1e3

# Gate 2 of the 10-ion parallel configuration: pi/10-step pair phases
GATE2_PHASES = {(2, 5): 0.1 * np.pi, (2, 6): 0.2 * np.pi, (2, 8): -0.1 * np.pi,
                (5, 6): 0.1 * np.pi, (5, 8): 0.2 * np.pi, (6, 8): 0.1 * np.pi}


@lru_cache(maxsize=None)
def yb_modes(n_ions, trap=(1.6, 1.5, 0.3), offset_khz=4.7, absolute_mhz=None):
    config = TrapChainConfig.ytterbium(n_ions, frequencies_mhz=trap)
    if absolute_mhz is None:
        delta = config.com_frequencies[0] + KHZ * offset_khz
    else:
        delta = TWO_PI * 1e6 * absolute_mhz
    return build_mode_data(config, equilibrium_positions(config), delta)


def two_ion_problem(segments, duration_us, robust=False, slew=False, seed=1, instances=5):
    modes = yb_modes(2)
    target = GateTarget.from_gates(2, [((0, 1), "maximal")])
    bounds = SlewBounds(10 * KHZ, np.pi / 8) if slew else None
    scheme = SchemeConfig("ampm", segments, 100 * KHZ, shared_groups=((0, 1),), robust=robust,
                          slew=bounds)
    kernels = build_kernels(modes, uniform_grid(duration_us * 1e-6, segments))
    return OptimizationProblem(kernels, target, scheme, instance_count=instances,
                               iteration_budget=3000, rng_seed=seed)


@lru_cache(maxsize=None)
def standard_two_ion():
    """Shared AMPM maximal gate, 64 segments over 200 us."""
    problem = two_ion_problem(64, 200)
    return problem, optimize(problem)


@lru_cache(maxsize=None)
def robust_slew_two_ion():
    """Robust shared AMPM gate with 10 kHz and pi/8 per-segment slew bounds."""
    problem = two_ion_problem(128, 200, robust=True, slew=True)
    return problem, optimize(problem)


@lru_cache(maxsize=None)
def robust_two_ion():
    """Robust shared AMPM gate without slew bounds."""
    problem = two_ion_problem(128, 200, robust=True)
    return problem, optimize(problem)


def five_ion_problem(modulation, max_rabi_khz, segments=128, seed=1, instances=5, budget=2000):
    modes = yb_modes(5, absolute_mhz=1.365)
    target = GateTarget.from_gates(5, [((0, 1), "maximal")])
    scheme = SchemeConfig(modulation, segments, max_rabi_khz * KHZ, shared_groups=((0, 1),))
    kernels = build_kernels(modes, uniform_grid(50e-6, segments))
    return OptimizationProblem(kernels, target, scheme, instance_count=instances,
                               iteration_budget=budget, rng_seed=seed)


@lru_cache(maxsize=None)
def ten_ion_parallel():
    """Gates {0,3} maximal and {2,5,6,8} with pi/10-step phases, individual
    AMPM drives, 128 segments over 300 us."""
    modes = yb_modes(10)
    target = GateTarget.from_gates(10, [((0, 3), "maximal"), ((2, 5, 6, 8), GATE2_PHASES)])
    scheme = SchemeConfig("ampm", 128, 100 * KHZ)
    kernels = build_kernels(modes, uniform_grid(300e-6, 128))
    problem = OptimizationProblem(kernels, target, scheme, instance_count=2,
                                  iteration_budget=4000, rng_seed=1)
    return problem, optimize(problem)
