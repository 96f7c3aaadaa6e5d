"""Potential-based reward shaping with potentials learned by a graph
convolutional network over sampled transitions, checked against exact
forward-backward messages and evaluated with tabular actor-critic agents."""
from .agent import (AgentConfig, AgentState, EpisodeRecord, ExperimentTrace, GcnConfig, ShapingConfig,
                    lambda_returns, rollout, run_algorithm1, sample_action, update)
from .gcn import BaseCaseSet, GcnModel, forward, grad, loss, select_base_cases, train
from .graph import (SpectralOps, TrajectoryGraph, build_spectral, dirichlet_energy, entropy_rate_rows,
                    graph_from_mdp, random_walk_matrix)
from .gridworlds import (GridLayout, build_fourrooms, build_fourrooms_traps, build_smaze, build_two_arm_chain,
                         make_env)
from .inference import (MessageTable, OptimalityModel, alpha_beta_potential, backward_messages,
                        forward_messages, potential_from_messages)
from .mdp import MdpSpec, Transition, step, value_iteration
from .shaping import (PotentialTable, l2_potential, mix_returns, shaping_bonus, telescoping_identity_check)

__version__ = "0.1.0"
