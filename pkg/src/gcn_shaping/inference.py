"""Exact forward-backward messages on the control-as-inference chain.

With optimality probabilities f(s, a) = sigmoid(r(s, a)) and an action prior
p(a), over time indices ``0..T-1``:

    beta_{T-1}(s, a) = f(s, a)
    beta_t(s, a)     = f(s, a) sum_{s', a'} P(s'|s, a) p(a') beta_{t+1}(s', a')
    alpha_0(s, a)    = d0(s) p(a)
    alpha_t(s', a')  = p(a') sum_{s, a} P(s'|s, a) f(s, a) alpha_{t-1}(s, a)

so alpha_t(s, a) beta_t(s, a) = p(O_{0:T-1}, S_t = s, A_t = a).  Both
recursions only need the weight tensor W[s, a, s'] = P(s'|s, a) f(s, a).  When
rewards are paid on arrival (grid worlds) the optimality factor is attached to
the realised transition instead, W[s, a, s'] = P(s'|s, a) sigmoid(r(s, a, s')),
and the last-step factor becomes sum_{s'} W[s, a, s'].

Every time slice is stored sum-normalized together with the log of its scale,
which keeps long horizons finite.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .mdp import MdpSpec
from .shaping import PotentialTable


@dataclass(frozen=True, eq=False)
class OptimalityModel:
    weights: np.ndarray       # (S, A, S): P(s'|s, a) * p(O=1 | s, a[, s'])
    action_prior: np.ndarray  # (A,)

    @property
    def p_opt(self) -> np.ndarray:
        """p(O=1 | s, a), marginalised over the successor when per-transition."""
        return self.weights.sum(axis=2)

    @classmethod
    def from_mdp(cls, mdp: MdpSpec, per_transition: Optional[bool] = None) -> "OptimalityModel":
        if per_transition is None:
            per_transition = mdp.arrival_reward is not None
        if per_transition:
            W = mdp.transition * expit(mdp.transition_rewards())
        else:
            W = mdp.transition * expit(mdp.reward)[:, :, None]
        prior = np.full(mdp.num_actions, 1.0 / mdp.num_actions)
        return cls(W, prior)


@dataclass(frozen=True, eq=False)
class MessageTable:
    values: np.ndarray       # (T, S, A), each slice sums to 1
    log_scale: np.ndarray    # (T,), raw_t = values[t] * exp(log_scale[t])
    kind: str
    occupancy: Optional[np.ndarray] = None  # (T, S) prior state marginals, forward only
    converged: bool = True

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def unnormalized(self) -> np.ndarray:
        return self.values * np.exp(self.log_scale)[:, None, None]


def _normalize(x):
    c = x.sum()
    if not c > 0:
        raise FloatingPointError("message slice has no mass")
    return x / c, np.log(c)


def backward_messages(mdp: MdpSpec, om: Optional[OptimalityModel] = None, horizon: Optional[int] = None) -> MessageTable:
    om = OptimalityModel.from_mdp(mdp) if om is None else om
    T = mdp.max_steps if horizon is None else int(horizon)
    if T < 1:
        raise ValueError("horizon must be at least 1")
    S, A = mdp.num_states, mdp.num_actions
    W = om.weights.reshape(S * A, S)
    vals = np.empty((T, S, A))
    logs = np.empty(T)
    vals[-1], logs[-1] = _normalize(om.p_opt)
    for t in range(T - 2, -1, -1):
        nxt = vals[t + 1] @ om.action_prior
        vals[t], c = _normalize((W @ nxt).reshape(S, A))
        logs[t] = c + logs[t + 1]
    return MessageTable(vals, logs, "beta")


def forward_messages(mdp: MdpSpec, om: Optional[OptimalityModel] = None, horizon: Optional[int] = None) -> MessageTable:
    om = OptimalityModel.from_mdp(mdp) if om is None else om
    T = mdp.max_steps if horizon is None else int(horizon)
    if T < 1:
        raise ValueError("horizon must be at least 1")
    S, A = mdp.num_states, mdp.num_actions
    P = mdp.transition.reshape(S * A, S)
    W = om.weights.reshape(S * A, S)
    vals = np.empty((T, S, A))
    logs = np.empty(T)
    occ = np.empty((T, S))
    occ[0] = mdp.start
    vals[0], logs[0] = _normalize(np.outer(mdp.start, om.action_prior))
    for t in range(1, T):
        mass = vals[t - 1].reshape(-1) @ W
        vals[t], c = _normalize(np.outer(mass, om.action_prior))
        logs[t] = c + logs[t - 1]
        occ[t] = (np.outer(occ[t - 1], om.action_prior).reshape(-1)) @ P
    return MessageTable(vals, logs, "alpha", occupancy=occ)


def posterior_marginals(alpha: MessageTable, beta: MessageTable) -> np.ndarray:
    """p(S_t = s | O_{0:T-1}), shape (T, S)."""
    if alpha.values.shape != beta.values.shape:
        raise ValueError(f"message shapes differ: {alpha.values.shape} vs {beta.values.shape}")
    q = np.sum(alpha.values * beta.values, axis=2)
    return q / q.sum(axis=1, keepdims=True)


def potential_from_messages(alpha: MessageTable, beta: MessageTable, mode: str = "conditional") -> PotentialTable:
    """Collapse the per-time messages into one potential over states, max-normalized.

    ``conditional``: time-average of p(O_{0:T-1} | S_t = s), i.e. the posterior
    marginal divided by the prior occupancy, over the times at which ``s`` is
    reachable.  ``joint``: time-average of p(S_t = s | O), the raw
    alpha * beta product.
    """
    post = posterior_marginals(alpha, beta)
    if mode == "joint":
        phi = post.mean(axis=0)
    elif mode == "conditional":
        if alpha.occupancy is None:
            raise ValueError("conditional mode needs forward messages with occupancy")
        occ = alpha.occupancy
        ok = occ > 1e-300
        ratio = np.where(ok, post / np.where(ok, occ, 1.0), 0.0)
        count = ok.sum(axis=0)
        phi = np.where(count > 0, ratio.sum(axis=0) / np.maximum(count, 1), 0.0)
    else:
        raise ValueError(f"unknown collapse mode {mode!r}")
    m = phi.max()
    return PotentialTable(phi / m if m > 0 else phi, 0.0, "alpha-beta")


def fixed_point_potential(mdp: MdpSpec, om: Optional[OptimalityModel] = None, tol: float = 1e-10,
                          max_iter: int = 100_000) -> PotentialTable:
    """Iterate the time-homogeneous recursions to their normalized fixed points
    and use sum_a alpha(s, a) beta(s, a), max-normalized."""
    om = OptimalityModel.from_mdp(mdp) if om is None else om
    S, A = mdp.num_states, mdp.num_actions
    W = om.weights.reshape(S * A, S)
    beta, _ = _normalize(om.p_opt)
    alpha = np.outer(mdp.start, om.action_prior)
    converged = False
    for _ in range(max_iter):
        b_new, _ = _normalize((W @ (beta @ om.action_prior)).reshape(S, A))
        a_new, _ = _normalize(np.outer(alpha.reshape(-1) @ W, om.action_prior))
        delta = max(np.max(np.abs(b_new - beta)), np.max(np.abs(a_new - alpha)))
        beta, alpha = b_new, a_new
        if delta < tol:
            converged = True
            break
    if not converged:
        raise RuntimeError("fixed-point message iteration did not converge")
    phi = np.sum(alpha * beta, axis=1)
    return PotentialTable(phi / phi.max(), 0.0, "alpha-beta")


def alpha_beta_potential(mdp: MdpSpec, horizon: Optional[int] = None, mode: str = "conditional") -> PotentialTable:
    if mode == "fixed-point":
        return fixed_point_potential(mdp)
    om = OptimalityModel.from_mdp(mdp)
    return potential_from_messages(forward_messages(mdp, om, horizon), backward_messages(mdp, om, horizon), mode)
