"""Risk-sensitive market making with entropy-regularised quoting policies."""
from .bellman import (BellmanTable, action_propagators, bellman_operator, bellman_recursion,
                      build_generator, ce_score, ce_scores, matrix_exponential, variational_check)
from .estimators import QuotingPolicy
from .experiments import (EXPERIMENTS, ExperimentConfig, ExperimentReport, ReportTable,
                          emit_report, fit_loglog_slope, run_experiment)
from .model import ASK, BID, ModelParams, Quote, hamiltonian, intensity
from .ode import (TimeGrid, Trajectory, euler_soft_scheme, policy_evaluation_ode, rk4_solve,
                  solve_hard, solve_soft)
from .policies import (ConfigurationError, GibbsKernel, PolicySpec, build_policy,
                       curvature_certificate, exact_gibbs_kernel, hamiltonian_gibbs_kernel,
                       hard_feedback, quote_concentration_metrics)
from .quadrature import ActionGrid2D, gauss_legendre, hard_hamiltonian, soft_hamiltonian
from .simulator import SimConfig, ce_from_samples, run_monte_carlo, simulate_path

__version__ = "0.1.0"
