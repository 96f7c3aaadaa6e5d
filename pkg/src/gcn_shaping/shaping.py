"""Potential tables and potential-based shaping: F(s, s') = gamma * phi(s') - phi(s)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_finite, check_unit_interval

PROVENANCES = ("gcn", "alpha-beta", "l2", "constant", "zero")
GCN_DEFAULT_PHI = 0.5


@dataclass(frozen=True, eq=False)
class PotentialTable:
    """One potential value per state.

    ``phi`` is stored densely; states the provider never saw already hold
    ``default_phi``.  ``seen`` records which entries came from the provider.
    """

    phi: np.ndarray
    default_phi: float = 0.0
    provenance: str = "zero"
    seen: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        phi = np.array(self.phi, dtype=float)
        check_finite(phi, "potential")
        seen = np.ones(len(phi), dtype=bool) if self.seen is None else np.array(self.seen, dtype=bool)
        phi[~seen] = self.default_phi
        if self.provenance == "gcn" and np.any((phi[seen] <= 0) | (phi[seen] >= 1)):
            raise ValueError("GCN potentials must lie strictly inside (0, 1)")
        phi.setflags(write=False)
        seen.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "seen", seen)

    def __len__(self):
        return len(self.phi)

    def __getitem__(self, s):
        return self.phi[s]

    def max_normalized(self) -> np.ndarray:
        m = np.max(np.abs(self.phi))
        return self.phi / m if m > 0 else self.phi.copy()


def zero_potential(num_states: int) -> PotentialTable:
    return PotentialTable(np.zeros(num_states), 0.0, "zero")


def constant_potential(num_states: int, value: float = 1.0) -> PotentialTable:
    return PotentialTable(np.full(num_states, float(value)), float(value), "constant")


def shaping_bonus(phi, s: int, s_next: int, done: bool, gamma: float) -> float:
    """gamma * phi(s') - phi(s), with phi(s') taken as 0 after a terminal transition."""
    nxt = 0.0 if done else phi[s_next]
    return gamma * nxt - phi[s]


def shaping_bonuses(phi, states, next_states, terminal_flags, gamma: float) -> np.ndarray:
    p = phi.phi if isinstance(phi, PotentialTable) else np.asarray(phi, dtype=float)
    nxt = np.where(terminal_flags, 0.0, p[next_states])
    return gamma * nxt - p[states]


def shaped_reward_table(mdp, phi) -> np.ndarray:
    """Expected shaped reward r(s,a) + gamma E[phi(s')] - phi(s), terminals at phi = 0."""
    p = np.array(phi.phi if isinstance(phi, PotentialTable) else phi, dtype=float)
    p[mdp.terminal_mask] = 0.0
    return mdp.reward + mdp.gamma * mdp.transition @ p - p[:, None]


def l2_potential(layout_or_mdp) -> PotentialTable:
    """1 - ||pos(s) - pos(goal)|| / max distance, so the goal gets 1 and the
    farthest cell 0."""
    layout = getattr(layout_or_mdp, "layout", layout_or_mdp)
    if layout is None or not hasattr(layout, "cells"):
        raise ValueError("the L2 potential needs a grid layout")
    pos = np.array(layout.cells, dtype=float)
    goals = pos[layout.states_of("G")]
    dist = np.min(np.linalg.norm(pos[:, None, :] - goals[None, :, :], axis=2), axis=1)
    dmax = dist.max()
    phi = 1.0 - dist / dmax if dmax > 0 else np.ones(len(pos))
    return PotentialTable(phi, 0.0, "l2")


def mix_returns(g_plain, g_shaped, alpha: float):
    check_unit_interval(alpha, "alpha")
    return alpha * g_plain + (1.0 - alpha) * g_shaped


def telescoping_identity_check(phi, trajectory, gamma: float):
    """Compare the discounted shaped return of a finished episode with the
    plain return minus phi(s_0).  Returns ``(shaped, plain, residual)``."""
    shaped = plain = 0.0
    disc = 1.0
    for t in trajectory:
        plain += disc * t.reward
        shaped += disc * (t.reward + shaping_bonus(phi, t.state, t.next_state, t.done, gamma))
        disc *= gamma
    s0 = trajectory[0].state
    return shaped, plain, shaped - (plain - phi[s0])


def save_potential_csv(phi: PotentialTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "phi"])
        for s, v in enumerate(phi.phi):
            w.writerow([s, repr(float(v))])


def load_potential_csv(path, provenance: str = "constant", default_phi: float = 0.0) -> PotentialTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"state", "phi"}:
        raise ValueError(f"{path}: expected header 'state,phi'")
    n = max(int(r["state"]) for r in rows) + 1
    phi = np.full(n, default_phi)
    seen = np.zeros(n, dtype=bool)
    for r in rows:
        phi[int(r["state"])] = float(r["phi"])
        seen[int(r["state"])] = True
    return PotentialTable(phi, default_phi, provenance, seen)
