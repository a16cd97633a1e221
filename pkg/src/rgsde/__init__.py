"""Reflected SDEs driven by G-Brownian motion with nonlinear resistance.

Scenario generation under volatility uncertainty, the discrete Skorokhod map,
Picard and stepwise solvers, upper expectations over control families, Bihari
and moment bounds, and comparison / truncation / uniqueness experiment suites.
"""

from .analysis import BihariSpec, a_priori_rhs, bdg_check, bihari_bound, stability_rhs
from .coefficients import CoefficientSet, ModulusSpec, ObstacleSpec, make_coefficients, truncate_coefficients
from .errors import *  # noqa: F401,F403
from .expectation import PathFunctional, Problem, capacity, estimate, solve_family, upper_expectation
from .harness import ComparisonCase, run_comparison, run_truncation_study, run_uniqueness_probe
from .reflection import ReflectedSolution, flatness_defect, minimality_check, skorokhod_map
from .scenario import (
    TimeGrid,
    VolatilityControl,
    VolatilitySpec,
    bang_bang_family,
    constant_controls,
    make_uniform_grid,
    sample_batch,
    sample_scenario,
)
from .solver import (
    SolverConfig,
    explicit_scheme,
    picard_solve,
    picard_solve_batch,
    richardson_refine,
    stepwise_solve,
    validate_assumptions,
)

__version__ = "0.1.0"
