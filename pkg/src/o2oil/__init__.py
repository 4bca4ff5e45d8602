"""Offline-to-online imitation learning on exactly solvable tabular MDPs."""

from .data import (Dataset, EmpiricalDistribution, Transition, empirical_distribution,
                   estimate_initial_distribution, merge_datasets, read_dataset,
                   sample_trajectories, write_dataset)
from .mdp import (OccupancyMeasure, TabularMdp, TabularPolicy,
                  average_state_action_frequency, bellman_flow_residual,
                  build_gridworld, policy_return, stationary_distribution,
                  value_iteration)
from .reward import (AuxiliaryReward, DensityDiscriminator, ParametricDiscriminator,
                     auxiliary_reward, fit_discriminator_closed_form,
                     fit_discriminator_logistic, log_ratio_reward)
from .ssp import (DualVariables, PopulationProblem, SspConfig, SspDiagnostics,
                  closed_form_inner_y, delta_expectation, delta_sample, dual_value,
                  kkt_residual, solve_ssp, solve_undiscounted, ssp_gradients,
                  ssp_objective)
from .policy import (ExtractionConfig, GaussianPolicy, extract_policy_closed_form,
                     extract_policy_reverse_kl, extract_policy_weighted_bc,
                     occupancy_divergence, plain_bc)
from .stitch import StitchedDiscriminator, stitch_discriminator, verify_alignment
from .finetune import (GailConfig, GailDiscriminator, LearningCurve,
                       TabularSoftmaxPolicy, run_gail, unlearning_experiment)
from .oracle import OracleSolution, duality_gap, primal_brute_force
from .offrl import OffRlConfig, extract_offline_rl_policy, solve_offline_rl

__version__ = "0.1.0"
