"""Seeded random MDPs/MOMDPs, objective instances and small fixture worlds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import InvariantError
from .mdp import MOMDP, TabularMDP, batch_j
from .objectives import ObjectiveSpec
from .seeding import stream


@dataclass(frozen=True)
class RandomInstanceSpec:
    n_states: int
    n_actions: int
    k: int
    gamma_range: tuple[float, float] = (0.5, 0.95)
    reward_range: tuple[float, float] = (-1.0, 1.0)
    support: int | None = None  # successors per (s, a); None means dense
    seed: int = 0

    def __post_init__(self):
        if min(self.n_states, self.n_actions, self.k) < 1:
            raise InvariantError("sizes must be at least 1")
        lo, hi = self.gamma_range
        if not 0 < lo <= hi < 1:
            raise InvariantError(f"gamma range must lie inside (0, 1), got {self.gamma_range}")
        if self.reward_range[0] > self.reward_range[1]:
            raise InvariantError("reward range is reversed")
        if self.support is not None and not 1 <= self.support <= self.n_states:
            raise InvariantError(f"support {self.support} cannot be realised with {self.n_states} states")

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "RandomInstanceSpec":
        return cls(n_states=int(data["n_states"]), n_actions=int(data["n_actions"]), k=int(data["k"]),
                   gamma_range=tuple(data.get("gamma_range", (0.5, 0.95))),
                   reward_range=tuple(data.get("reward_range", (-1.0, 1.0))),
                   support=data.get("support"), seed=int(data.get("seed", 0)))


def random_transition(rng: np.random.Generator, n_states: int, n_actions: int,
                      support: int | None = None) -> np.ndarray:
    tau = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if support is not None and support < n_states:
        for s in range(n_states):
            for a in range(n_actions):
                drop = rng.permutation(n_states)[support:]
                tau[s, a, drop] = 0.0
    return tau / tau.sum(axis=2, keepdims=True)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               support: int | None = None) -> TabularMDP:
    tau = random_transition(rng, n_states, n_actions, support)
    mu0 = rng.dirichlet(np.ones(n_states))
    return TabularMDP(tau, mu0, gamma)


def generate_random_instance(spec: RandomInstanceSpec) -> MOMDP:
    rng = stream(spec.seed, "instances.random")
    gamma = float(rng.uniform(*spec.gamma_range))
    mdp = random_mdp(rng, spec.n_states, spec.n_actions, gamma, spec.support)
    rewards = rng.uniform(*spec.reward_range, size=(spec.k, spec.n_states, spec.n_actions))
    return MOMDP(mdp, rewards)


def bandit_skeleton(gamma: float = 0.5, n_actions: int = 2) -> TabularMDP:
    return TabularMDP(np.ones((1, n_actions, 1)), np.ones(1), gamma,
                      state_names=("s0",), action_names=tuple(f"a{i + 1}" for i in range(n_actions)))


def bandit_momdp(gamma: float = 0.5) -> MOMDP:
    """One state, two self-looping arms; reward i pays 1 for arm i (J1 = 2p, J2 = 2 - 2p at 0.5)."""
    return MOMDP(bandit_skeleton(gamma), np.array([[[1.0, 0.0]], [[0.0, 1.0]]]))


# ------------------------------------------------------------ objective instances

def _value_range(momdp: MOMDP, seed: int, n: int = 200) -> np.ndarray:
    from .mdp import random_policies

    mdp = momdp.skeleton
    pis = random_policies(stream(seed, "instances.range"), n, mdp.n_states, mdp.n_actions)
    return batch_j(mdp, momdp.rewards, pis)


def objective_instance(kind: str, seed: int, n_states: int = 3, n_actions: int = 2,
                       degenerate: bool = False) -> tuple[MOMDP, ObjectiveSpec]:
    """A random two-reward MOMDP and objective of ``kind``.

    Non-degenerate instances place the interesting boundary (the diagonal for
    MaxMin, the thresholds for MaxSat/ConSat) through the middle of the
    reachable J-values. Degenerate instances are built to fall into the
    objective's exceptional case.
    """
    rng = stream(seed, f"instances.{kind}.{'degenerate' if degenerate else 'regular'}")
    gamma = float(rng.uniform(0.5, 0.9))
    mdp = random_mdp(rng, n_states, n_actions, gamma)
    r = rng.uniform(-1.0, 1.0, size=(2, n_states, n_actions))
    if kind == "MaxMin":
        if degenerate:
            r[0] = r[1] - rng.uniform(0.1, 1.0, size=r[1].shape)
            return MOMDP(mdp, r), ObjectiveSpec("MaxMin")
        momdp = MOMDP(mdp, r)
        j = _value_range(momdp, seed)
        shift = float(np.median(j[:, 0] - j[:, 1])) * (1.0 - gamma)
        r[1] = r[1] + shift
        return MOMDP(mdp, r), ObjectiveSpec("MaxMin")
    if kind == "LexMax":
        if degenerate:
            if rng.random() < 0.5:
                r[1] = 2.0 * r[0] + 0.5
            else:
                r[0] = np.full_like(r[0], float(r[0, 0, 0]))
            return MOMDP(mdp, r), ObjectiveSpec("LexMax")
        return MOMDP(mdp, r), ObjectiveSpec("LexMax")
    momdp = MOMDP(mdp, r)
    j = _value_range(momdp, seed)
    if kind == "MaxSat":
        if degenerate:
            c = j.min(axis=0) - 1.0 - np.abs(j).max()
        else:
            c = np.median(j, axis=0)
        return momdp, ObjectiveSpec("MaxSat", thresholds=tuple(c))
    if kind == "ConSat":
        if degenerate:
            lo = j[:, 0].min() - 1.0 - np.abs(j).max()
            hi = j[:, 0].max() + 1.0 + np.abs(j).max()
            c = lo if rng.random() < 0.5 else hi
        else:
            c = float(np.median(j[:, 0]))
        return momdp, ObjectiveSpec("ConSat", c=float(c))
    raise InvariantError(f"no instance generator for {kind}")


def linear_instance(seed: int, n_states: int = 3, n_actions: int = 2, k: int = 2) -> tuple[MOMDP, ObjectiveSpec]:
    rng = stream(seed, "instances.linear")
    mdp = random_mdp(rng, n_states, n_actions, float(rng.uniform(0.5, 0.9)))
    r = rng.uniform(-1.0, 1.0, size=(k, n_states, n_actions))
    w = rng.uniform(-1.0, 1.0, size=k)
    return MOMDP(mdp, r), ObjectiveSpec("LinearWeights", weights=tuple(w))


# ------------------------------------------------------------------ gridworlds

MOVES = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}
ACTIONS = ("N", "E", "S", "W")


@dataclass(frozen=True)
class GridWorld:
    """Deterministic grid: '#' walls, floor cells otherwise.

    Moving into a wall or off the grid leaves the agent in place. A 'D' cell is
    a one-way door: it can only be entered moving east and only be left moving
    east.
    """

    layout: tuple[str, ...]
    mdp: TabularMDP
    cells: tuple[tuple[int, int], ...]

    def state_of(self, row: int, col: int) -> int:
        return self.cells.index((row, col))

    def states_with(self, ch: str) -> list[int]:
        return [i for i, (r, c) in enumerate(self.cells) if self.layout[r][c] == ch]

    def char(self, s: int) -> str:
        r, c = self.cells[s]
        return self.layout[r][c]

    def entering_reward(self, values: dict[str, float]) -> np.ndarray:
        """(S, A) table paying ``values[ch]`` for landing on a cell marked ``ch``."""
        tau = self.mdp.transition
        nxt = tau.argmax(axis=2)
        cell_val = np.array([values.get(self.char(s), 0.0) for s in range(len(self.cells))])
        return cell_val[nxt]

    def occupancy_reward(self, values: dict[str, float]) -> np.ndarray:
        """(S, A) table paying ``values[ch]`` for every step spent on a cell marked ``ch``."""
        cell_val = np.array([values.get(self.char(s), 0.0) for s in range(len(self.cells))])
        return np.repeat(cell_val[:, None], len(ACTIONS), axis=1)


def build_gridworld(layout, gamma: float, start: str = "S") -> GridWorld:
    rows = tuple(layout)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InvariantError("grid rows must have equal length")
    cells = tuple((r, c) for r, line in enumerate(rows) for c, ch in enumerate(line) if ch != "#")
    index = {cell: i for i, cell in enumerate(cells)}
    n = len(cells)
    tau = np.zeros((n, len(ACTIONS), n))
    for i, (r, c) in enumerate(cells):
        for a, name in enumerate(ACTIONS):
            dr, dc = MOVES[name]
            tgt = (r + dr, c + dc)
            ok = tgt in index
            if ok and rows[r][c] == "D" and name != "E":
                ok = False
            if ok and rows[tgt[0]][tgt[1]] == "D" and name != "E":
                ok = False
            tau[i, a, index[tgt] if ok else i] = 1.0
    starts = [i for i, (r, c) in enumerate(cells) if rows[r][c] == start]
    if not starts:
        raise InvariantError(f"layout has no start cell {start!r}")
    mu0 = np.zeros(n)
    mu0[starts[0]] = 1.0
    names = tuple(f"r{r}c{c}" for r, c in cells)
    return GridWorld(rows, TabularMDP(tau, mu0, gamma, names, ACTIONS), cells)


ONE_WAY_DOOR = ("a..#...",
                "S..D..G",
                "...#...")

OPEN_5X5 = ("S....",
            ".....",
            ".....",
            ".....",
            "....G")

# four rooms; the two eastern rooms are reachable only through one-way doors
FOUR_ROOMS = ("S..#...",
              "...D...",
              "...#...",
              "##.###.",
              "...#...",
              "...D...",
              "...#...")

UNSAFE_SHORTCUT = ("S.U.G",
                   ".....",
                   ".....")


def reversing_reachability_family(gamma: float = 0.9) -> tuple[TabularMDP, TabularMDP]:
    """Two five-state MDPs that swap which branch can return to s0.

    From s0, a0 leads to s1 and a1 to s2. In s1/s2, a0 stays and a1 moves on
    to s3/s4. Under the first transition function s3 returns to s0 and s4 is
    absorbing; under the second the roles of s3 and s4 swap.
    """
    def build(back: int, trap: int) -> TabularMDP:
        tau = np.zeros((5, 2, 5))
        tau[0, 0, 1] = tau[0, 1, 2] = 1.0
        tau[1, 0, 1] = tau[1, 1, 3] = 1.0
        tau[2, 0, 2] = tau[2, 1, 4] = 1.0
        tau[back, :, 0] = 1.0
        tau[trap, :, trap] = 1.0
        mu0 = np.array([1.0, 0, 0, 0, 0])
        return TabularMDP(tau, mu0, gamma, tuple(f"s{i}" for i in range(5)), ("a0", "a1"))

    return build(3, 4), build(4, 3)


def stay_bonus(n_states: int = 5) -> np.ndarray:
    """+1 for staying put in s1 or s2 of :func:`reversing_reachability_family`."""
    r = np.zeros((n_states, 2))
    r[1, 0] = r[2, 0] = 1.0
    return r


def risk_instance(kind: str, seed: int, n_states: int = 3, n_actions: int = 2):
    """A skeleton, a positive reward r1 and a transform of ``kind`` admissible on its returns.

    r1 is drawn from U(0.1, 1), so every return lies in (0, 1/(1 - gamma)) and
    the logarithmic and isoelastic families are defined. The quadratic family
    uses alpha = (1 - gamma)/2, which keeps it increasing on that range.
    """
    from .risk import UtilityTransform

    rng = stream(seed, f"instances.risk.{kind}")
    gamma = float(rng.uniform(0.5, 0.95))
    mdp = random_mdp(rng, n_states, n_actions, gamma)
    r1 = rng.uniform(0.1, 1.0, size=(n_states, n_actions))
    if kind == "Exponential":
        t = UtilityTransform("Exponential", alpha=0.3)
    elif kind == "Isoelastic":
        t = UtilityTransform("Isoelastic", alpha=0.5)
    elif kind == "Logarithmic":
        t = UtilityTransform("Logarithmic")
    elif kind == "Quadratic":
        t = UtilityTransform("Quadratic", alpha=0.5 * (1.0 - gamma))
    elif kind == "Affine":
        t = UtilityTransform("Affine", b=float(rng.uniform(0.5, 2.0)), a=float(rng.uniform(-1.0, 1.0)))
    else:
        raise InvariantError(f"no risk instance generator for {kind}")
    return mdp, r1, t


def one_way_door_amdp(gamma: float = 0.9, affordance_gamma: float = 0.9, start_bonus: float = 1.0):
    """The one-way-door world as an affordance-based MDP.

    Base reward: 0.3 for landing on 'a', 1 for landing on 'G'. The single
    affordance pays ``start_bonus`` for landing on 'S'. The modal reward gates
    the base reward with tanh of that affordance's value at the next state, so
    cells from which 'S' is unreachable pay nothing.
    """
    from .modal import Affordance, AffordanceMDP, ModalForm

    g = build_gridworld(ONE_WAY_DOOR, gamma)
    base = g.entering_reward({"a": 0.3, "G": 1.0})
    aff = Affordance(g.entering_reward({"S": start_bonus}), affordance_gamma)
    return g, AffordanceMDP(g.mdp, ModalForm("tanh_gate", base, 0, 1.0), (aff,))
