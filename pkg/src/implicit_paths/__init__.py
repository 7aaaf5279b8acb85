"""Gradient-descent and regularization paths of linear classifiers."""
from .analysis import (angle, compare_directions, decomposition_convergence, limit_direction,
                       margin_bound_check, oscillation_experiment, run_comparison,
                       scaling_experiment)
from .data import (Dataset, decompose, load_csv, make_antipodal, make_clouds,
                   make_margin_scaling_dataset, make_mixed, make_single_point, make_two_point,
                   margin, max_margin, random_unit_ball, save_csv)
from .errors import (ConvergenceError, CoverageError, DataError, DescentViolation,
                     ImplicitPathsError, InconclusiveError, ParameterError, SolverError,
                     StaleInputError)
from .losses import (Loss, build_oscillating, loss_from_dict, loss_from_json, make_exponential,
                     make_figure_poly, make_logistic, make_poly_tail, make_tail_power,
                     splice_exp_to_recip, splice_recip_to_exp, validate)
from .regpath import geometric_grid, minimize_on_S, solve_ball, solve_path
from .risk import RiskProblem, gd_run, grad, log_risk, pick_step_size, risk

__version__ = "0.1.0"
