"""Approximate state-transition graph built from sampled transitions, and its
spectral operators."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_length, check_stochastic_rows

REWARD_EPS = 1e-9


class TrajectoryGraph:
    """Undirected multigraph over visited states.

    Nodes keep their insertion order, so the node index of a state never
    changes while the graph grows.  Edge counts are diagnostics only; the
    spectral operators use the binarized edge set.
    """

    def __init__(self):
        self.reset()

    def reset(self) -> "TrajectoryGraph":
        self.index: dict = {}
        self.states: list = []
        self.edge_counts: dict = {}
        self.first: set = set()
        self.last: set = set()
        self.rewards: dict = {}
        # never reused, so a version seen before a reset is not confused with one after
        self.version = getattr(self, "version", -1) + 1
        return self

    def __len__(self):
        return len(self.states)

    def __contains__(self, state):
        return state in self.index

    def add_node(self, s: int) -> int:
        s = int(s)
        i = self.index.get(s)
        if i is None:
            i = self.index[s] = len(self.states)
            self.states.append(s)
            self.version += 1
        return i

    def add_transition(self, t, first: bool = False, last: bool | None = None) -> "TrajectoryGraph":
        """Record ``t.state -> t.next_state``.

        ``first`` marks ``t.state`` as an episode start; ``last`` (default
        ``t.done``) marks ``t.next_state`` as an episode end.
        """
        s, s2 = int(t.state), int(t.next_state)
        self.add_node(s)
        self.add_node(s2)
        if s != s2:
            key = (s, s2) if s < s2 else (s2, s)
            n = self.edge_counts.get(key, 0)
            if n == 0:
                self.version += 1
            self.edge_counts[key] = n + 1
        if abs(t.reward) > REWARD_EPS:
            if self.rewards.get(s2) != t.reward:
                self.version += 1
            self.rewards[s2] = float(t.reward)
        if first and s not in self.first:
            self.first.add(s)
            self.version += 1
        if (t.done if last is None else last) and s2 not in self.last:
            self.last.add(s2)
            self.version += 1
        return self

    def add_episode(self, transitions) -> "TrajectoryGraph":
        n = len(transitions)
        for i, t in enumerate(transitions):
            self.add_transition(t, first=(i == 0), last=(i == n - 1))
        return self

    @property
    def edges(self):
        return set(self.edge_counts)

    def adjacency(self) -> np.ndarray:
        """Binary symmetric adjacency without self-loops, in node order."""
        n = len(self.states)
        A = np.zeros((n, n))
        if self.edge_counts:
            ij = np.array([(self.index[v], self.index[w]) for v, w in self.edge_counts])
            A[ij[:, 0], ij[:, 1]] = 1.0
            A[ij[:, 1], ij[:, 0]] = 1.0
        return A

    def dump(self, path) -> None:
        """Edge list ``v w count`` followed by a marker section."""
        out = [f"{v} {w} {c}" for (v, w), c in sorted(self.edge_counts.items())]
        out.append("# markers")
        out.extend(f"node {s}" for s in self.states)
        out.extend(f"first {s}" for s in sorted(self.first))
        out.extend(f"last {s}" for s in sorted(self.last))
        out.extend(f"reward {s} {r!r}" for s, r in sorted(self.rewards.items()))
        Path(path).write_text("\n".join(out) + "\n")

    @classmethod
    def load(cls, path) -> "TrajectoryGraph":
        g = cls()
        in_markers = False
        for ln in Path(path).read_text().splitlines():
            if not ln.strip():
                continue
            if ln.startswith("# markers"):
                in_markers = True
                continue
            tok = ln.split()
            if not in_markers:
                v, w, c = int(tok[0]), int(tok[1]), int(tok[2])
                g.edge_counts[(v, w)] = c
            elif tok[0] == "node":
                g.add_node(int(tok[1]))
            elif tok[0] == "first":
                g.first.add(int(tok[1]))
            elif tok[0] == "last":
                g.last.add(int(tok[1]))
            elif tok[0] == "reward":
                g.rewards[int(tok[1])] = float(tok[2])
        for v, w in g.edge_counts:
            g.add_node(v)
            g.add_node(w)
        return g


def graph_from_mdp(mdp) -> TrajectoryGraph:
    """Graph holding every transition the kernel allows.

    Start states are marked as episode starts and terminals as episode ends,
    so the base cases match what complete episodes would have produced.
    """
    from .mdp import Transition

    g = TrajectoryGraph()
    term = mdp.terminal_mask
    for s in np.flatnonzero(mdp.start > 0):
        g.add_node(int(s))
        g.first.add(int(s))
    for s, a, s2 in zip(*np.nonzero(mdp.transition)):
        if term[s]:
            continue
        g.add_transition(Transition(int(s), int(a), mdp.transition_reward(s, a, s2), int(s2), bool(term[s2])))
    return g


@dataclass(frozen=True, eq=False)
class SpectralOps:
    states: np.ndarray
    adjacency: np.ndarray
    a_tilde: np.ndarray
    degree: np.ndarray
    t_hat: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.states)

    def node_of(self) -> dict:
        return {int(s): i for i, s in enumerate(self.states)}


def spectral_from_adjacency(adjacency, states=None) -> SpectralOps:
    A = np.asarray(adjacency, dtype=float)
    n = A.shape[0]
    A_tilde = A + np.eye(n)
    deg = A_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    T = inv_sqrt[:, None] * A_tilde * inv_sqrt[None, :]
    states = np.arange(n) if states is None else np.asarray(states)
    for arr in (A, A_tilde, deg, T, states):
        arr.setflags(write=False)
    return SpectralOps(states, A, A_tilde, deg, T)


def build_spectral(g: TrajectoryGraph) -> SpectralOps:
    """Normalized diffusion operator D^-1/2 (A + I) D^-1/2 of the graph."""
    if len(g) == 0:
        raise ValueError("graph has no nodes")
    return spectral_from_adjacency(g.adjacency(), np.array(g.states))


def dirichlet_energy(ops, f) -> float:
    """sum_{v,w} A_vw ||f_w - f_v||^2 over ordered pairs.  ``f`` is a vector or
    one row per node.  ``ops`` is a SpectralOps or a bare adjacency matrix."""
    A = ops.adjacency if isinstance(ops, SpectralOps) else np.asarray(ops, dtype=float)
    f = np.asarray(f, dtype=float)
    check_length(f, A.shape[0], "f")
    F = f.reshape(len(f), -1)
    diff = F[None, :, :] - F[:, None, :]
    return float(np.sum(A * np.sum(diff * diff, axis=2)))


def random_walk_matrix(g) -> np.ndarray:
    """D^-1 (A + I): uniform over each node's neighbours and itself."""
    A_tilde = g.a_tilde if isinstance(g, SpectralOps) else build_spectral(g).a_tilde
    return A_tilde / A_tilde.sum(axis=1, keepdims=True)


def entropy_rate_rows(p) -> np.ndarray:
    p = check_stochastic_rows(p, tol=1e-9, name="transition matrix")
    logs = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logs, axis=1)
