"""Pulse-level optimization of Molmer-Sorensen entangling gates in trapped-ion chains.

Submodules:
    chain     equilibrium positions, normal modes and Lamb-Dicke couplings
    controls  piecewise-constant drives, schemes, parametrizations, validation
    kernels   closed-form segment kernels for displacement, phase and centre of mass
    optimize  multi-start L-BFGS over the scheme variables
    analysis  fidelity, error scans, filter functions and diagnostics
    cli       the ``msgate`` command
"""
from .chain import (ChainError, ChainInstabilityError, ModeData, SolverFailure, TrapChainConfig,
                    build_mode_data, equilibrium_positions, normal_modes)
from .controls import (ConstraintError, DriveWaveform, GateTarget, Parametrization, SchemeConfig,
                       SlewBounds, build_parametrization, reflect_symmetric, uniform_grid, validate)
from .kernels import (KernelSet, build_kernels, com_residuals, displacements, entangling_phases,
                      phase_series, trajectory_series)
from .optimize import (CostWeights, OptimizationFailure, OptimizationProblem, OptimizationResult,
                       optimize)
from .analysis import (filter_function, operational_infidelity, quasi_static_detuning_scan,
                       timing_error_infidelity)

__version__ = "0.1.0"
