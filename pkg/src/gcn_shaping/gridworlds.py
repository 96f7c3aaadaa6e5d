"""Gridworld layouts and the benchmark environments.

Layouts are ASCII: ``#`` wall, ``.`` free, ``S`` start region, ``G`` goal,
``X`` trap.  States are the non-wall cells in row-major order.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .mdp import MdpSpec

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

FOURROOMS = """\
#############
#SSS  #     #
#SSS  #     #
#SSS        #
#     #     #
#     #     #
## ####     #
#     ### ###
#     #     #
#     #     #
#           #
#     #    G#
#############"""

# Same rooms with one or two traps per room.  No trap touches a doorway and no
# free cell touches two traps.
FOURROOMS_TRAPS = """\
#############
#SSS  #     #
#SSS  #  X  #
#SSS        #
#   X #     #
#     #   X #
## ####     #
#     ### ###
#  X  #     #
#     #  X  #
#           #
#     #    G#
#############"""

SMAZE = """\
###########
#........G#
#.........#
#..########
#.........#
#.........#
#.........#
########..#
#.........#
#S........#
###########"""


@dataclass(frozen=True)
class GridLayout:
    rows: tuple
    trap_penalty: float = -1.0
    goal_reward: float = 1.0

    def __post_init__(self):
        widths = {len(r) for r in self.rows}
        if len(widths) != 1:
            raise ValueError("layout rows must have equal width")
        text = "".join(self.rows)
        if "S" not in text or "G" not in text:
            raise ValueError("layout needs at least one start cell and one goal cell")
        if set(text) - set("#.SGX "):
            raise ValueError(f"unknown layout characters {set(text) - set('#.SGX ')}")

    @classmethod
    def parse(cls, text: str, **kw) -> "GridLayout":
        return cls(tuple(text.splitlines()), **kw)

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    def kind(self, r: int, c: int) -> str:
        ch = self.rows[r][c]
        return "." if ch == " " else ch

    @property
    def cells(self) -> list:
        """Coordinates of every non-wall cell, indexed by state id."""
        return [(r, c) for r in range(self.height) for c in range(self.width) if self.kind(r, c) != "#"]

    def state_index(self) -> dict:
        return {rc: s for s, rc in enumerate(self.cells)}

    def states_of(self, kind: str) -> list:
        return [s for s, (r, c) in enumerate(self.cells) if self.kind(r, c) == kind]


def build_grid(layout: GridLayout, noise: float = 0.1, gamma: float = 0.99, max_steps: int = 1000,
               name: str = "grid") -> MdpSpec:
    """Grid MDP with four moves; with probability ``noise`` a uniformly random
    action replaces the chosen one.  Moving into a wall leaves the agent in place.
    Trap and goal rewards are paid on entering the cell.  Goal cells are
    absorbing terminals."""
    cells = layout.cells
    index = layout.state_index()
    S, A = len(cells), len(MOVES)
    moved = np.empty((S, A), dtype=int)
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(MOVES):
            moved[s, a] = index.get((r + dr, c + dc), s)

    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            P[s, a, moved[s, a]] += 1.0 - noise
            for b in range(A):
                P[s, a, moved[s, b]] += noise / A

    arrival = np.zeros(S)
    arrival[layout.states_of("X")] = layout.trap_penalty
    goals = layout.states_of("G")
    arrival[goals] = layout.goal_reward
    for g in goals:
        P[g] = 0.0
        P[g, :, g] = 1.0
    # paid on entering a different cell; a bump in place earns nothing
    R = P @ arrival - P[np.arange(S), :, np.arange(S)] * arrival[:, None]
    R[goals] = 0.0

    start = np.zeros(S)
    start[layout.states_of("S")] = 1.0
    return MdpSpec(P, R, gamma, start / start.sum(), frozenset(goals), max_steps,
                   arrival_reward=arrival, layout=layout, name=name)


def build_fourrooms(noise: float = 0.1, gamma: float = 0.99, max_steps: int = 1000) -> MdpSpec:
    return build_grid(GridLayout.parse(FOURROOMS), noise, gamma, max_steps, "fourrooms")


def build_fourrooms_traps(noise: float = 0.1, gamma: float = 0.99, max_steps: int = 1000) -> MdpSpec:
    return build_grid(GridLayout.parse(FOURROOMS_TRAPS), noise, gamma, max_steps, "fourrooms-traps")


def build_smaze(noise: float = 0.1, gamma: float = 0.99, max_steps: int = 1000) -> MdpSpec:
    return build_grid(GridLayout.parse(SMAZE), noise, gamma, max_steps, "smaze")


LEFT_ARM, RIGHT_ARM = 0, 1


def build_two_arm_chain(left_len: int = 2, right_len: int = 400, left_reward: float = 0.1,
                        right_reward: float = 10.0, gamma: float = 0.99, max_steps: int = 450) -> MdpSpec:
    """Start state 0 with two deterministic arms.

    An arm of length ``k`` is ``k`` cells reached at depths ``1..k``; its last
    cell is an absorbing terminal and the arm's reward is paid on entering it,
    i.e. after ``k`` actions.  Arm cells have one effective action: every action
    index advances along the arm.
    """
    if left_len < 2 or right_len < 2:
        raise ValueError("arms need at least two cells")
    S = 1 + left_len + right_len
    A = 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    left = list(range(1, 1 + left_len))
    right = list(range(1 + left_len, S))
    P[0, LEFT_ARM, left[0]] = 1.0
    P[0, RIGHT_ARM, right[0]] = 1.0
    for arm, reward in ((left, left_reward), (right, right_reward)):
        for here, there in zip(arm[:-1], arm[1:]):
            P[here, :, there] = 1.0
        R[arm[-2], :] = reward
        P[arm[-1], :, arm[-1]] = 1.0
    start = np.zeros(S)
    start[0] = 1.0
    return MdpSpec(P, R, gamma, start, frozenset({left[-1], right[-1]}), max_steps, name="two-arm-chain")


ENVIRONMENTS = {
    "fourrooms": build_fourrooms,
    "fourrooms-traps": build_fourrooms_traps,
    "smaze": build_smaze,
    "two-arm-chain": build_two_arm_chain,
}


def make_env(name: str, **kw) -> MdpSpec:
    try:
        return ENVIRONMENTS[name](**kw)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def shortest_path_lengths(mdp: MdpSpec, sources) -> np.ndarray:
    """BFS hop distance over the symmetrized support of the transition kernel
    (inf if unreachable)."""
    support = mdp.transition.sum(axis=1) > 0
    support |= support.T
    succ = [np.flatnonzero(row) for row in support]
    dist = np.full(mdp.num_states, np.inf)
    queue = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    while queue:
        s = queue.popleft()
        for t in succ[s]:
            if dist[t] == np.inf:
                dist[t] = dist[s] + 1
                queue.append(t)
    return dist
