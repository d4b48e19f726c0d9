"""Distributionally robust tabular Q-learning with threshold-MLMC operator estimates."""

from .core import (Divergence, MinDomain, TabularMDP, UncertaintySpec, greedy_policy,
                   load_mdp, save_mdp, value_vector)
from .dual import DiscreteDistribution, worst_case, worst_case_oracle
from .learner import LearnerConfig, Stepsize, recommended_nmax, recommended_stepsize, run, run_many
from .mlmc import MLMCConfig, TabularGenerativeModel, tmlmc_operator
from .robustdp import robust_bellman, robust_policy_evaluation, robust_value_iteration

__version__ = "0.1.0"
