"""Reward-horizon experiment on the two-arm chain.

Both arms are evaluated at every iteration (no exploration): each arm's
deterministic episode is replayed, its lambda-returns are computed from the
current critic, the critic moves toward them along the path and the start
state's action estimate for that arm moves toward the return at t = 0.  The
count reported is the first iteration from which the greedy start action is the
long arm and stays so for ``patience`` consecutive iterations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_unit_interval
from .agent import EpisodeRecord, lambda_returns
from .gridworlds import LEFT_ARM, RIGHT_ARM, build_two_arm_chain
from .mdp import MdpSpec
from .shaping import PotentialTable, shaping_bonuses, zero_potential

MAX_ITERATIONS = 1_000_000


@dataclass(frozen=True)
class ToyResult:
    lam: float
    iterations: int
    censored: bool


def arm_episode(mdp: MdpSpec, first_action: int) -> EpisodeRecord:
    """Deterministic episode from the start state that opens with ``first_action``."""
    s = int(np.argmax(mdp.start))
    states, actions, rewards = [s], [], []
    a = first_action
    for _ in range(mdp.max_steps):
        nxt = int(np.argmax(mdp.transition[s, a]))
        actions.append(a)
        rewards.append(mdp.reward[s, a])
        states.append(nxt)
        s = nxt
        if mdp.is_terminal(s):
            break
        a = 0
    return EpisodeRecord(np.array(states), np.array(actions), np.array(rewards, dtype=float), mdp.is_terminal(s))


def iterations_to_optimal(mdp: MdpSpec, lam: float, phi: Optional[PotentialTable] = None, lr: float = 0.1,
                          patience: int = 10, max_iterations: int = MAX_ITERATIONS,
                          optimal: int = RIGHT_ARM) -> ToyResult:
    """Synchronous two-arm updates under R (``phi`` None or zero) or R + F."""
    check_unit_interval(lam, "lambda")
    episodes = {a: arm_episode(mdp, a) for a in (LEFT_ARM, RIGHT_ARM)}
    rewards = {}
    for a, ep in episodes.items():
        if phi is None:
            rewards[a] = ep.rewards
        else:
            rewards[a] = ep.rewards + shaping_bonuses(phi, ep.states[:-1], ep.states[1:], ep.terminal_flags, mdp.gamma)
    v = np.zeros(mdp.num_states)
    q = np.zeros(2)
    streak = 0
    for it in range(1, max_iterations + 1):
        # targets for both arms come from the same critic snapshot
        returns = {a: lambda_returns(ep, v, lam, mdp.gamma, rewards[a]) for a, ep in episodes.items()}
        for a, ep in episodes.items():
            g = returns[a]
            q[a] += lr * (g[0] - q[a])
            path = ep.states[1:-1]
            v[path] += lr * (g[1:] - v[path])
        streak = streak + 1 if q[optimal] > q[1 - optimal] else 0
        if streak >= patience:
            return ToyResult(lam, it - patience + 1, False)
    return ToyResult(lam, max_iterations, True)


def lambda_sweep(lambdas, phi: Optional[PotentialTable] = None, mdp: Optional[MdpSpec] = None, **kw) -> list:
    mdp = build_two_arm_chain() if mdp is None else mdp
    return [iterations_to_optimal(mdp, float(lam), phi, **kw) for lam in lambdas]


def chain_potential(mdp: MdpSpec, kind: str = "ab") -> PotentialTable:
    """Potential for the R + F arm of the sweep."""
    if kind == "ab":
        from .inference import alpha_beta_potential
        return alpha_beta_potential(mdp)
    if kind == "gcn":
        from .gcn import GcnModel, train
        from .graph import TrajectoryGraph

        g = TrajectoryGraph()
        for a in (LEFT_ARM, RIGHT_ARM):
            g.add_episode(arm_episode(mdp, a).transitions())
        model = GcnModel(mdp.num_states, n_iter=1000)
        return train(model, g)
    if kind == "zero":
        return zero_potential(mdp.num_states)
    raise ValueError(f"unknown chain potential {kind!r}")
