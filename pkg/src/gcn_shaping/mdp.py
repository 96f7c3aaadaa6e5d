"""Finite MDPs: the container type, sampling, exact planning and a text file format."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from ._validation import check_stochastic_rows

ROW_TOL = 1e-12


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    done: bool


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Immutable finite MDP.

    ``transition[s, a, s']`` is P(s'|s, a) and ``reward[s, a]`` the expected
    reward of taking ``a`` in ``s``.  Grid environments also carry
    ``arrival_reward[s']``, the reward paid on entering ``s'`` from a different
    state (bumping into a wall enters nothing); when present it is what
    :func:`step` returns, and ``reward`` is its expectation.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    start: np.ndarray
    terminal: frozenset = frozenset()
    max_steps: int = 1000
    arrival_reward: Optional[np.ndarray] = None
    layout: Optional["GridLayout"] = None  # noqa: F821
    name: str = "mdp"
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        d0 = np.array(self.start, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if R.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {R.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        check_stochastic_rows(P.reshape(S * A, S), tol=ROW_TOL, name="transition")
        check_stochastic_rows(d0[None, :], tol=1e-9, name="start")
        term = frozenset(int(s) for s in self.terminal)
        for s in term:
            if not 0 <= s < S:
                raise ValueError(f"terminal state {s} out of range")
            if not np.all(P[s, :, s] == 1.0):
                raise ValueError(f"terminal state {s} is not absorbing")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        arrival = None
        if self.arrival_reward is not None:
            arrival = np.array(self.arrival_reward, dtype=float)
            if arrival.shape != (S,):
                raise ValueError("arrival_reward must have one entry per state")
            arrival.setflags(write=False)
        cum = np.cumsum(P, axis=2)
        cum[:, :, -1] = 1.0
        for arr in (P, R, d0, cum):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "start", d0)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "arrival_reward", arrival)
        object.__setattr__(self, "_cum", cum)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def is_terminal(self, s: int) -> bool:
        return s in self.terminal

    @property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[list(self.terminal)] = True
        return mask

    def transition_reward(self, s: int, a: int, s_next: int) -> float:
        if self.arrival_reward is not None:
            return float(self.arrival_reward[s_next]) if s_next != s else 0.0
        return float(self.reward[s, a])

    def transition_rewards(self) -> np.ndarray:
        """r(s, a, s') as an (S, A, S) array; zero out of terminal states."""
        if self.arrival_reward is None:
            return np.broadcast_to(self.reward[:, :, None], self.transition.shape).copy()
        r = np.broadcast_to(self.arrival_reward[None, None, :], self.transition.shape).copy()
        S = self.num_states
        r[np.arange(S), :, np.arange(S)] = 0.0
        r[self.terminal_mask] = 0.0
        return r

    def sample_start(self, rng: np.random.Generator) -> int:
        return int(np.searchsorted(np.cumsum(self.start), rng.random(), side="right").clip(0, self.num_states - 1))


def step(mdp: MdpSpec, state: int, action: int, rng: np.random.Generator) -> Transition:
    """Sample one transition.  ``done`` only reflects terminal arrival; the
    caller tracks the step budget."""
    if mdp.is_terminal(state):
        raise ValueError(f"cannot step from terminal state {state}")
    if not 0 <= action < mdp.num_actions:
        raise ValueError(f"action {action} out of range")
    nxt = int(np.searchsorted(mdp._cum[state, action], rng.random(), side="right"))
    nxt = min(nxt, mdp.num_states - 1)
    return Transition(state, action, mdp.transition_reward(state, action, nxt), nxt, mdp.is_terminal(nxt))


def value_iteration(mdp: MdpSpec, reward: Optional[np.ndarray] = None, tol: float = 1e-12,
                    max_iter: int = 1_000_000):
    """Optimal ``(Q, V)`` by synchronous value iteration to sup-norm ``tol``."""
    R = mdp.reward if reward is None else np.asarray(reward, dtype=float)
    P = mdp.transition
    V = np.zeros(mdp.num_states)
    for _ in range(max_iter):
        Q = R + mdp.gamma * P @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            V = V_new
            break
        V = V_new
    return R + mdp.gamma * P @ V, V


def policy_evaluation(mdp: MdpSpec, policy: np.ndarray, reward: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact V^pi by a linear solve; ``policy[s, a]`` are action probabilities."""
    R = mdp.reward if reward is None else reward
    P_pi = np.einsum("sa,sat->st", policy, mdp.transition)
    r_pi = np.sum(policy * R, axis=1)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * P_pi, r_pi)


def greedy_action_sets(Q: np.ndarray, tol: float = 1e-9) -> list:
    return [frozenset(np.flatnonzero(row >= row.max() - tol).tolist()) for row in Q]


def random_mdp(rng: np.random.Generator, num_states: int, num_actions: int, gamma: float = 0.9,
               sparsity: float = 0.5) -> MdpSpec:
    """Random dense-ish MDP used by property tests and the CLI demos."""
    P = rng.random((num_states, num_actions, num_states))
    P *= rng.random(P.shape) > sparsity
    for s in range(num_states):
        for a in range(num_actions):
            if P[s, a].sum() == 0:
                P[s, a, rng.integers(num_states)] = 1.0
    P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(num_states, num_actions))
    d0 = rng.random(num_states)
    return MdpSpec(P, R, gamma, d0 / d0.sum(), max_steps=50, name="random")


# -- plain-text format ----------------------------------------------------
#   states actions gamma
#   T s a s' p
#   R s a r
#   S s p        (optional start mass; default: all mass on state 0)
#   E s          (optional terminal state)
#   M n          (optional max steps)

def load_mdp_file(path) -> MdpSpec:
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty MDP file")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"{path}: header must be 'states actions gamma'")
    S, A, gamma = int(head[0]), int(head[1]), float(head[2])
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    d0 = np.zeros(S)
    terminal, max_steps = set(), 1000
    for lineno, ln in enumerate(lines[1:], start=2):
        tok = ln.split()
        kind = tok[0]
        try:
            if kind == "T":
                P[int(tok[1]), int(tok[2]), int(tok[3])] += float(tok[4])
            elif kind == "R":
                R[int(tok[1]), int(tok[2])] = float(tok[3])
            elif kind == "S":
                d0[int(tok[1])] += float(tok[2])
            elif kind == "E":
                terminal.add(int(tok[1]))
            elif kind == "M":
                max_steps = int(tok[1])
            else:
                raise ValueError(f"unknown record type {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if d0.sum() == 0:
        d0[0] = 1.0
    return MdpSpec(P, R, gamma, d0, frozenset(terminal), max_steps, name=Path(path).stem)


def save_mdp_file(mdp: MdpSpec, path) -> None:
    out = [f"{mdp.num_states} {mdp.num_actions} {float(mdp.gamma)!r}"]
    for s, a, t in zip(*np.nonzero(mdp.transition)):
        out.append(f"T {s} {a} {t} {float(mdp.transition[s, a, t])!r}")
    for s, a in zip(*np.nonzero(mdp.reward)):
        out.append(f"R {s} {a} {float(mdp.reward[s, a])!r}")
    for s in np.flatnonzero(mdp.start):
        out.append(f"S {s} {float(mdp.start[s])!r}")
    out.extend(f"E {s}" for s in sorted(mdp.terminal))
    out.append(f"M {mdp.max_steps}")
    Path(path).write_text("\n".join(out) + "\n")
