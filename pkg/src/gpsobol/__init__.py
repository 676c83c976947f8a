"""Gaussian-process metamodels and their first-order Sobol indices."""
from .bench import TestFunction, convergence_study, coverage_study, gsobol, ishigami, pick_freeze
from .effects import (IndexDistribution, MainEffectProcess, SimulationConfig, build_main_effect,
                      convergence_check, simulate_index)
from .errors import (DegenerateDesignError, DegenerateVarianceError, GpSobolError, NotConvergedError,
                     NumericalError)
from .gp import FitOptions, FittedGp, KernelParams, TrendBasis, fit, load_model, loo_q2, q2_score
from .inputs import Design, InputSpace, Trapezoidal, Uniform, Weibull, density, lhs_sample, quantile
from .quadrature import KernelIntegralTable, build_table, refine_until_stable
from .sobol import SobolEstimate, l2_error, sobol_global_mean, sobol_global_std, sobol_predictor

__version__ = "0.1.0"
