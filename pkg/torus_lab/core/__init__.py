"""This module contains the core functionality of the torus_lab package."""

from .birkhoff import NormalFormBudgets, NormalFormResult, bnf
from .config import ExperimentConfig, load_config, load_preset
from .core import ScalingFit, ScalingPoint, fit_scaling, run_escape_sweep, run_pipeline
from .diophantine import gamma_estimate, omega_set_membership
from .dynamics import EscapeTimeRecord, PhasePoint, escape_time, integrate
from .errors import ConfigError, NumericalError, SmallDivisor, TorusLabError
from .series import ActionPolynomial, FourierTaylorSeries, poisson_bracket
from .steepness import genericity_scan, kolmogorov_check, stably_steep_check, steep_function_check

__all__ = [
    'ActionPolynomial',
    'ConfigError',
    'EscapeTimeRecord',
    'ExperimentConfig',
    'FourierTaylorSeries',
    'NormalFormBudgets',
    'NormalFormResult',
    'NumericalError',
    'PhasePoint',
    'ScalingFit',
    'ScalingPoint',
    'SmallDivisor',
    'TorusLabError',
    'bnf',
    'escape_time',
    'fit_scaling',
    'gamma_estimate',
    'genericity_scan',
    'integrate',
    'kolmogorov_check',
    'load_config',
    'load_preset',
    'omega_set_membership',
    'poisson_bracket',
    'run_escape_sweep',
    'run_pipeline',
    'stably_steep_check',
    'steep_function_check',
]
