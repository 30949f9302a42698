"""Stochastic difference-of-convex solvers for group-sparse multinomial
logistic regression, with data generators and an experiment harness."""

from .dc import (AggregatedSubgradient, ConfigurationError, ConvergenceTrace,
                 DcProblem, EpsSchedule, NonFiniteObjectiveError, SolverConfig,
                 check_eps_subgradient, harmonic_schedule,
                 inverse_square_schedule, run_dca, run_isdca, run_sdca,
                 sample_blocks, surrogate_value, zero_schedule)
from .data import (Dataset, Scaler, SplitSpec, generate_sim1, generate_sim2,
                   generate_sim3, load_sparse_text, split, standardize,
                   write_sparse_text)
from .harness import (ExperimentSpec, RunReport, accuracy_metric, emit_report,
                      lambda_path, run_path, run_single, sparsity_metric)
from .mlr import (MlrDcSpec, MlrProblem, ModelState, PenaltyConfig,
                  build_problem, component_subgradient, estimate_lipschitz,
                  load_model, nll_loss, penalty_value, save_model,
                  softmax_probabilities, solve_surrogate)
from .baselines import SpgdConfig, objective_l21, run_spgd
from .prox import ProxQuery, project_l1_ball, prox, prox_l1, prox_l2, prox_linf

__version__ = "0.1.0"
