"""Tabular softmax actor-critic with lambda-return targets, and the training
loop that learns a shaping potential from the transitions it collects."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import lfilter
from scipy.special import softmax

from ._validation import check_finite, check_unit_interval
from .gcn import GcnModel, train as train_gcn
from .graph import TrajectoryGraph, graph_from_mdp
from .mdp import MdpSpec, Transition
from .shaping import (GCN_DEFAULT_PHI, PotentialTable, mix_returns, shaping_bonuses,
                      zero_potential)


@dataclass
class AgentConfig:
    actor_lr: float = 1e-1
    critic_lr: float = 1e-1
    temperature: float = 1e-1
    lam: float = 0.9
    critic_target: str = "mixed"  # or "plain"
    score_scale: str = "exact"    # "exact": (e_a - pi) / tau; "unit": e_a - pi
    discount_actor: bool = True   # weight the actor step by gamma^t
    baseline: str = "running"     # "running": critic updated step by step; "frozen": pre-episode critic;
                                  # "none": raw targets

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        check_unit_interval(self.lam, "lambda")
        if self.score_scale not in ("exact", "unit"):
            raise ValueError(f"score_scale must be 'exact' or 'unit', got {self.score_scale!r}")
        if self.baseline not in ("running", "frozen", "none"):
            raise ValueError(f"baseline must be 'running', 'frozen' or 'none', got {self.baseline!r}")
        if self.critic_target not in ("plain", "mixed"):
            raise ValueError(f"critic_target must be 'plain' or 'mixed', got {self.critic_target!r}")


@dataclass
class AgentState:
    theta: np.ndarray
    v: np.ndarray
    config: AgentConfig = field(default_factory=AgentConfig)
    gamma: float = 0.99
    episodes: int = 0

    @classmethod
    def create(cls, num_states: int, num_actions: int, config: Optional[AgentConfig] = None,
               gamma: float = 0.99) -> "AgentState":
        return cls(np.zeros((num_states, num_actions)), np.zeros(num_states),
                   config or AgentConfig(), gamma)

    def policy(self, s=None) -> np.ndarray:
        logits = self.theta if s is None else self.theta[s]
        return softmax(logits / self.config.temperature, axis=-1)


def sample_action(agent: AgentState, s: int, rng: np.random.Generator) -> int:
    p = agent.policy(s)
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))


@dataclass
class EpisodeRecord:
    states: np.ndarray       # s_0 .. s_T (T + 1 entries)
    actions: np.ndarray
    rewards: np.ndarray
    terminal: bool           # s_T is terminal (otherwise the step budget ran out)

    def __len__(self):
        return len(self.actions)

    @property
    def terminal_flags(self) -> np.ndarray:
        flags = np.zeros(len(self), dtype=bool)
        if self.terminal and len(self):
            flags[-1] = True
        return flags

    def transitions(self) -> list:
        flags = self.terminal_flags
        return [Transition(int(self.states[t]), int(self.actions[t]), float(self.rewards[t]),
                           int(self.states[t + 1]), bool(flags[t])) for t in range(len(self))]

    @classmethod
    def from_transitions(cls, transitions) -> "EpisodeRecord":
        states = [t.state for t in transitions] + [transitions[-1].next_state]
        return cls(np.array(states), np.array([t.action for t in transitions]),
                   np.array([t.reward for t in transitions], dtype=float), bool(transitions[-1].done))


def rollout(mdp: MdpSpec, agent: AgentState, rng: np.random.Generator, max_steps: Optional[int] = None) -> EpisodeRecord:
    """Run one episode with the policy frozen at its current parameters."""
    max_steps = mdp.max_steps if max_steps is None else max_steps
    pcum = np.cumsum(agent.policy(), axis=1)
    pcum[:, -1] = 1.0
    tcum = mdp._cum
    term = mdp.terminal_mask
    u = rng.random(2 * max_steps + 1)
    s = int(np.searchsorted(np.cumsum(mdp.start), u[0], side="right"))
    s = min(s, mdp.num_states - 1)
    states, actions = [s], []
    done = False
    for k in range(max_steps):
        a = int(np.searchsorted(pcum[s], u[2 * k + 1], side="right"))
        s = int(np.searchsorted(tcum[s, a], u[2 * k + 2], side="right"))
        actions.append(a)
        states.append(s)
        if term[s]:
            done = True
            break
    states = np.array(states)
    actions = np.array(actions, dtype=int)
    if mdp.arrival_reward is not None:
        rewards = np.where(states[1:] != states[:-1], mdp.arrival_reward[states[1:]], 0.0)
    else:
        rewards = mdp.reward[states[:-1], actions].astype(float)
    return EpisodeRecord(states, actions, rewards, done)


def lambda_returns(episode: EpisodeRecord, v: np.ndarray, lam: float, gamma: float,
                   rewards: Optional[np.ndarray] = None) -> np.ndarray:
    """G_t = r_t + gamma * ((1 - lam) v(s_{t+1}) + lam G_{t+1}).

    ``v`` of a terminal successor is 0.  A truncated episode bootstraps its
    last step from ``v(s_T)``.  ``rewards`` overrides the reward stream, e.g.
    with shaped rewards.
    """
    r = episode.rewards if rewards is None else np.asarray(rewards, dtype=float)
    n = len(episode)
    if n == 0:
        return np.zeros(0)
    v_next = np.asarray(v, dtype=float)[episode.states[1:]].copy()
    v_next[episode.terminal_flags] = 0.0
    x = r + gamma * (1.0 - lam) * v_next
    x[-1] += gamma * lam * v_next[-1]
    return lfilter([1.0], [1.0, -gamma * lam], x[::-1])[::-1]


def update(agent: AgentState, episode: EpisodeRecord, targets: np.ndarray,
           critic_targets: Optional[np.ndarray] = None) -> AgentState:
    """One pass over the episode, in time order.

    Actor:  theta[s_t] += actor_lr * gamma^t * (target_t - v(s_t)) * grad log pi(a_t|s_t)
    Critic: v(s_t)     += critic_lr * (critic_target_t - v(s_t))

    With the default ``running`` baseline the critic update at step t happens
    right after the actor update at step t, so later visits to a state see the
    critic already moved by earlier ones; ``frozen`` uses the critic as it
    stood before the episode for every step.
    """
    cfg = agent.config
    n = len(episode)
    targets = np.asarray(targets, dtype=float)
    critic_targets = targets if critic_targets is None else np.asarray(critic_targets, dtype=float)
    if targets.shape != (n,) or critic_targets.shape != (n,):
        raise ValueError("targets must align with the episode")
    check_finite(targets, "targets")
    states = episode.states[:-1].tolist()
    actions = episode.actions.tolist()
    disc = agent.gamma ** np.arange(n) if cfg.discount_actor else np.ones(n)
    theta, v = agent.theta, agent.v
    inv_tau = 1.0 / cfg.temperature
    step = cfg.actor_lr * (inv_tau if cfg.score_scale == "exact" else 1.0)
    interleave = cfg.baseline == "running"
    no_base = cfg.baseline == "none"
    v_before = v.copy()
    for t in range(n):
        s, a = states[t], actions[t]
        base = 0.0 if no_base else v[s] if interleave else v_before[s]
        z = theta[s] * inv_tau
        p = np.exp(z - z.max())
        p /= p.sum()
        g = -p
        g[a] += 1.0
        theta[s] += step * disc[t] * (targets[t] - base) * g
        if interleave:
            v[s] += cfg.critic_lr * (critic_targets[t] - v[s])
    if not interleave:
        for t in range(n):
            s = states[t]
            v[s] += cfg.critic_lr * (critic_targets[t] - v[s])
    check_finite(theta, "policy logits")
    check_finite(v, "critic values")
    agent.episodes += 1
    return agent


@dataclass
class ShapingConfig:
    alpha: float = 0.6
    potential: str = "gcn"   # gcn | ab | l2 | const | zero | none
    retrain_every: int = 1
    reset_graph: bool = False

    def __post_init__(self):
        check_unit_interval(self.alpha, "alpha")
        if self.potential not in ("gcn", "ab", "l2", "const", "zero", "none"):
            raise ValueError(f"unknown potential {self.potential!r}")
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1")


@dataclass
class GcnConfig:
    hidden: int = 64
    eta: float = 10.0
    lr: float = 1e-2
    n_iter: int = 200
    optimizer: str = "adam"
    prop_norm: str = "edges"
    warm_start: bool = True
    # skip a retraining call when the graph is unchanged and the previous call
    # on it moved the loss by less than this relative amount (0: always train)
    settle_tol: float = 1e-3
    # "sampled": the graph of visited transitions; "full": every transition the
    # kernel allows, fixed for the whole run
    graph_source: str = "sampled"

    def __post_init__(self):
        if self.graph_source not in ("sampled", "full"):
            raise ValueError(f"graph_source must be 'sampled' or 'full', got {self.graph_source!r}")
        if self.settle_tol < 0:
            raise ValueError("settle_tol must be non-negative")


@dataclass
class ExperimentTrace:
    seed: int
    steps: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    phi: Optional[PotentialTable] = None
    agent: Optional[AgentState] = None
    train_calls: int = 0

    @property
    def cum_steps(self) -> np.ndarray:
        return np.cumsum(self.steps)

    def rows(self):
        cum = self.cum_steps
        for i, (n, g) in enumerate(zip(self.steps, self.returns)):
            yield self.seed, i, n, g, int(cum[i])

    def to_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["seed", "episode", "steps", "return", "cum_steps"])
            for seed, ep, n, g, c in self.rows():
                w.writerow([seed, ep, n, repr(float(g)), c])


def read_traces_csv(path) -> dict:
    traces: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tr = traces.setdefault(int(row["seed"]), ExperimentTrace(int(row["seed"])))
            tr.steps.append(int(row["steps"]))
            tr.returns.append(float(row["return"]))
    return traces


def static_potential(mdp: MdpSpec, kind: str) -> PotentialTable:
    from .inference import alpha_beta_potential
    from .shaping import constant_potential, l2_potential

    if kind == "ab":
        return alpha_beta_potential(mdp)
    if kind == "l2":
        return l2_potential(mdp)
    if kind == "const":
        return constant_potential(mdp.num_states, 1.0)
    return zero_potential(mdp.num_states)


def run_algorithm1(mdp: MdpSpec, agent_config: Optional[AgentConfig] = None, gcn_config: Optional[GcnConfig] = None,
                   shaping_config: Optional[ShapingConfig] = None, episodes: int = 300, seed: int = 0,
                   potential: Optional[PotentialTable] = None,
                   on_episode: Optional[Callable] = None) -> ExperimentTrace:
    """Roll out, grow the graph, refresh the potential, mix the plain and
    shaped lambda-returns and update the agent, once per episode.

    ``potential`` pins a precomputed table for the static providers.
    """
    agent_config = agent_config or AgentConfig()
    gcn_config = gcn_config or GcnConfig()
    shaping_config = shaping_config or ShapingConfig()
    env_ss, gcn_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(env_ss)
    agent = AgentState.create(mdp.num_states, mdp.num_actions, agent_config, mdp.gamma)
    kind = shaping_config.potential
    full_graph = kind == "gcn" and gcn_config.graph_source == "full"
    graph = graph_from_mdp(mdp) if full_graph else TrajectoryGraph()
    model = None
    if kind == "gcn":
        model = GcnModel(mdp.num_states, gcn_config.hidden, gcn_config.eta, gcn_config.lr, gcn_config.n_iter,
                         seed=int(gcn_ss.generate_state(1)[0]), optimizer=gcn_config.optimizer,
                         prop_norm=gcn_config.prop_norm)
        phi = PotentialTable(np.full(mdp.num_states, GCN_DEFAULT_PHI), GCN_DEFAULT_PHI, "gcn",
                             seen=np.zeros(mdp.num_states, dtype=bool))
    elif kind == "none":
        phi = None
    else:
        phi = potential if potential is not None else static_potential(mdp, kind)
    trace = ExperimentTrace(seed)
    lam, gamma = agent_config.lam, mdp.gamma
    trained_version, settled = None, False

    for ep in range(episodes):
        episode = rollout(mdp, agent, rng)
        if kind == "gcn":
            if not full_graph:
                graph.add_episode(episode.transitions())
            unchanged = graph.version == trained_version
            if ep % shaping_config.retrain_every == 0 and not (unchanged and settled):
                if not gcn_config.warm_start:
                    model.reset_weights()
                prev = model.last_loss
                phi = train_gcn(model, graph)
                settled = (unchanged and gcn_config.settle_tol > 0 and
                           abs(prev - model.last_loss) <= gcn_config.settle_tol * abs(prev))
                trained_version = graph.version
                trace.train_calls += 1
        plain = lambda_returns(episode, agent.v, lam, gamma)
        if phi is None:
            targets = plain
        else:
            bonus = shaping_bonuses(phi, episode.states[:-1], episode.states[1:], episode.terminal_flags, gamma)
            shaped = lambda_returns(episode, agent.v, lam, gamma, episode.rewards + bonus)
            targets = mix_returns(plain, shaped, shaping_config.alpha)
        update(agent, episode, targets, plain if agent_config.critic_target == "plain" else targets)
        trace.steps.append(len(episode))
        trace.returns.append(float(episode.rewards.sum()))
        if shaping_config.reset_graph and not full_graph:
            graph.reset()
        if on_episode is not None:
            on_episode(ep, episode, agent, phi)
    trace.phi = phi
    trace.agent = agent
    return trace
