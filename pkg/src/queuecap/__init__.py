"""Capacity bounds for discrete-time FIFO queue timing channels."""

from . import errors
from .dist import (Pmf, RateParams, ServiceModel, clip_subtract_map,
                   clip_subtract_matrix, convolve, custom, entropy, geometric,
                   max_entropy_mean_bound, mean, pmf_new, point_mass, point_pmf,
                   rate_for, rate_params, service_from_json, service_to_json,
                   threshold_transform, uniform_range)
from .entmax import (EntMaxProblem, EntMaxSolution, SolverOptions, TruncationReport,
                     dual_bisection, oracle_grid_search, solve_full, solve_gfeedback)

__version__ = "0.1.0"
