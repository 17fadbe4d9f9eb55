"""Spectral simulator for a passive magnetic field on a thin 3-torus under transport noise."""

from .corrector import CorrectorOperators, lie_composition_sum, verify_corrector
from .harness import ConvergenceReport, ExperimentConfig, fit_rate, run_convergence
from .lattice import DivergentSumError, WaveVector, enumerate_modes, frame, gamma_sign, zeta_H, zeta_HN, zeta_l
from .limit import LimitParams, limit_params, mild_reconstruct, solve_A3, solve_B3
from .noise import NoiseSpec, PathIncrements, covariance_pieces, eta_coefficients, helicity, sample_increments
from .solver import InitialCondition, SimConfig, SimulationError, simulate
from .spectral import BandOverflowError, Domain, SpectralField

__version__ = "0.1.0"

__all__ = [
    "BandOverflowError", "ConvergenceReport", "CorrectorOperators", "DivergentSumError", "Domain",
    "ExperimentConfig", "InitialCondition", "LimitParams", "NoiseSpec", "PathIncrements", "SimConfig",
    "SimulationError", "SpectralField", "WaveVector", "covariance_pieces", "enumerate_modes", "eta_coefficients",
    "fit_rate", "frame", "gamma_sign", "helicity", "lie_composition_sum", "limit_params", "mild_reconstruct",
    "run_convergence", "sample_increments", "simulate", "solve_A3", "solve_B3", "verify_corrector", "zeta_H",
    "zeta_HN", "zeta_l",
]
