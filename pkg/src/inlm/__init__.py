"""Inertial Levenberg-Marquardt iteration for nonlinear ill-posed problems."""

from .krylov import CgConfig, CgReport, NotPositiveDefinite, cg, cg_normal_solve
from .linops import ForwardModel, LinearModel, Linearization, check_adjoint, check_jacobian_fd
from .nn import NnProblem, SatLin, load_csv_dataset, performance, synth_dataset
from .pde import EllipticProblem, Phantom, make_phantom, naive_reconstruction
from .solver import (AlphaSchedule, AssumptionWarning, IterateState, LambdaSchedule, RunTrace,
                     SolverConfig, StepRecord, ThetaSchedule, discrepancy_index, extrapolate,
                     inertial_weight, inlm_step, kstar_bound, run_exact, run_noisy,
                     verify_iteration_identities)

__version__ = '0.1.0'

__all__ = [
    'CgConfig', 'CgReport', 'NotPositiveDefinite', 'cg', 'cg_normal_solve',
    'ForwardModel', 'LinearModel', 'Linearization', 'check_adjoint', 'check_jacobian_fd',
    'NnProblem', 'SatLin', 'load_csv_dataset', 'performance', 'synth_dataset',
    'EllipticProblem', 'Phantom', 'make_phantom', 'naive_reconstruction',
    'AlphaSchedule', 'AssumptionWarning', 'IterateState', 'LambdaSchedule', 'RunTrace',
    'SolverConfig', 'StepRecord', 'ThetaSchedule', 'discrepancy_index', 'extrapolate',
    'inertial_weight', 'inlm_step', 'kstar_bound', 'run_exact', 'run_noisy',
    'verify_iteration_identities',
]
