"""Tabular MDPs, MOMDPs, policies, trajectories and exact evaluation.

Conventions used throughout the package:

* transitions are arrays ``tau[s, a, s']``;
* reward tables are arrays ``R[s, a]`` and a MOMDP stores them stacked as
  ``rewards[i, s, a]``;
* a stationary policy is a row-stochastic array ``pi[s, a]``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import DimensionError, GuardError, InvariantError, SolverError

STOCHASTIC_TOL = 1e-12
J_TOL = 1e-9
ENUMERATION_GUARD = 2**20


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def _check_distribution_rows(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{what} contains non-finite entries")
    if np.any(arr < 0):
        raise InvariantError(f"{what} has negative entries")
    worst = np.max(np.abs(arr.sum(axis=-1) - 1.0)) if arr.size else 0.0
    if worst > STOCHASTIC_TOL:
        raise InvariantError(f"{what} rows must sum to 1 (worst deviation {worst:.3e})")


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP skeleton: transitions, initial distribution and discount."""

    transition: np.ndarray
    initial: np.ndarray
    gamma: float
    state_names: tuple[str, ...] = ()
    action_names: tuple[str, ...] = ()

    def __post_init__(self):
        tau = _frozen(self.transition)
        mu0 = _frozen(self.initial)
        if tau.ndim != 3 or tau.shape[0] != tau.shape[2]:
            raise DimensionError(f"transition must have shape (S, A, S), got {tau.shape}")
        if mu0.shape != (tau.shape[0],):
            raise DimensionError(f"initial has shape {mu0.shape}, expected ({tau.shape[0]},)")
        _check_distribution_rows(tau, "transition")
        _check_distribution_rows(mu0, "initial distribution")
        if not 0.0 < float(self.gamma) < 1.0:
            raise InvariantError(f"discount must lie in (0, 1), got {self.gamma}")
        s_names = tuple(self.state_names) or tuple(f"s{i}" for i in range(tau.shape[0]))
        a_names = tuple(self.action_names) or tuple(f"a{i}" for i in range(tau.shape[1]))
        if len(s_names) != tau.shape[0] or len(a_names) != tau.shape[1]:
            raise DimensionError("state/action name lists do not match the transition shape")
        object.__setattr__(self, "transition", tau)
        object.__setattr__(self, "initial", mu0)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "state_names", s_names)
        object.__setattr__(self, "action_names", a_names)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def with_transition(self, transition) -> "TabularMDP":
        return TabularMDP(transition, self.initial, self.gamma, self.state_names, self.action_names)


@dataclass(frozen=True)
class MOMDP:
    """A skeleton plus ``k`` reward tables stacked as ``rewards[i, s, a]``."""

    skeleton: TabularMDP
    rewards: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rewards)
        if r.ndim == 2:
            r = _frozen(r[None])
        sk = self.skeleton
        if r.ndim != 3 or r.shape[1:] != (sk.n_states, sk.n_actions) or r.shape[0] < 1:
            raise DimensionError(f"rewards must have shape (k>=1, {sk.n_states}, {sk.n_actions}), got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise InvariantError("reward tables contain non-finite entries")
        object.__setattr__(self, "rewards", r)

    @property
    def k(self) -> int:
        return self.rewards.shape[0]

    def reward(self, i: int) -> np.ndarray:
        return self.rewards[i]


def check_reward(mdp: TabularMDP, reward) -> np.ndarray:
    r = np.asarray(reward, dtype=float)
    if r.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionError(f"reward has shape {r.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    if not np.all(np.isfinite(r)):
        raise InvariantError("reward contains non-finite entries")
    return r


def check_policy(mdp: TabularMDP, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionError(f"policy has shape {pi.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    _check_distribution_rows(pi, "policy")
    return pi


TAILS = ("repeat", "zero", "cycle")


@dataclass(frozen=True)
class Trajectory:
    """A finite prefix of (state, action) steps plus a rule for the infinite tail.

    ``tail="repeat"`` repeats the last step forever, ``"zero"`` earns nothing after
    the prefix, and ``"cycle"`` repeats ``steps[cycle_start:]`` forever (so
    ``repeat`` is the cycle of length one).
    """

    steps: tuple[tuple[int, int], ...]
    tail: str = "repeat"
    cycle_start: int | None = None

    def __post_init__(self):
        steps = tuple((int(s), int(a)) for s, a in self.steps)
        if len(steps) < 1:
            raise InvariantError("a trajectory needs at least one step")
        if self.tail not in TAILS:
            raise InvariantError(f"unknown tail rule {self.tail!r}")
        start = self.cycle_start
        if self.tail == "repeat":
            start = len(steps) - 1
        elif self.tail == "cycle":
            if start is None or not 0 <= start < len(steps):
                raise InvariantError("cycle tail needs 0 <= cycle_start < len(steps)")
        else:
            start = None
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "cycle_start", start)

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def check_indices(self, n_states: int, n_actions: int) -> None:
        for s, a in self.steps:
            if not (0 <= s < n_states and 0 <= a < n_actions):
                raise DimensionError(f"step ({s}, {a}) out of range for {n_states} states, {n_actions} actions")

    @classmethod
    def constant(cls, state: int, action: int) -> "Trajectory":
        return cls(((state, action),), tail="repeat")


@dataclass(frozen=True)
class ValueTables:
    v: np.ndarray
    q: np.ndarray
    j: float


def _policy_matrices(mdp: TabularMDP, reward: np.ndarray, pi: np.ndarray):
    p_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = np.sum(pi * reward, axis=1)
    return p_pi, r_pi


def evaluate_policy(mdp: TabularMDP, reward, policy) -> ValueTables:
    """Exact V, Q and J of a stationary policy by solving ``(I - gamma P) V = R``."""
    r = check_reward(mdp, reward)
    pi = check_policy(mdp, policy)
    p_pi, r_pi = _policy_matrices(mdp, r, pi)
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    try:
        v = np.linalg.solve(a, r_pi)
    except np.linalg.LinAlgError as exc:  # only reachable with corrupted inputs
        raise SolverError(f"policy evaluation system is singular: {exc}") from exc
    q = r + mdp.gamma * mdp.transition @ v
    return ValueTables(v=v, q=q, j=float(mdp.initial @ v))


def state_visits(mdp: TabularMDP, policies: np.ndarray) -> np.ndarray:
    """Discounted state visitation ``d[n, s] = sum_t gamma^t P(s_t = s)`` for a batch.

    ``policies`` has shape (N, S, A); the batch is solved in chunks.
    """
    pis = np.asarray(policies, dtype=float)
    if pis.ndim == 2:
        return state_visits(mdp, pis[None])[0]
    n_s = mdp.n_states
    out = np.empty((pis.shape[0], n_s))
    eye = np.eye(n_s)
    chunk = max(1, 2**22 // max(1, n_s * n_s))
    for lo in range(0, pis.shape[0], chunk):
        block = pis[lo:lo + chunk]
        p_pi = np.einsum("nsa,sat->nst", block, mdp.transition)
        lhs = np.transpose(eye - mdp.gamma * p_pi, (0, 2, 1))
        rhs = np.broadcast_to(mdp.initial, (block.shape[0], n_s))[..., None]
        try:
            out[lo:lo + chunk] = np.linalg.solve(lhs, rhs)[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"flow equations are singular: {exc}") from exc
    return out


def batch_j(mdp: TabularMDP, rewards: np.ndarray, policies: np.ndarray) -> np.ndarray:
    """J-values of many policies under several rewards; returns shape (N, k)."""
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim == 2:
        rewards = rewards[None]
    pis = np.asarray(policies, dtype=float)
    d = state_visits(mdp, pis)
    return np.einsum("ns,nsa,ksa->nk", d, pis, rewards)


def trajectory_return(reward, gamma: float, traj: Trajectory) -> float:
    """Discounted return of a trajectory, with the tail rule summed in closed form."""
    r = np.asarray(reward, dtype=float)
    traj.check_indices(*r.shape)
    vals = np.array([r[s, a] for s, a in traj.steps])
    disc = gamma ** np.arange(len(vals))
    if traj.tail == "zero":
        return float(disc @ vals)
    start = traj.cycle_start
    prefix = float(disc[:start] @ vals[:start])
    cyc = vals[start:]
    cyc_sum = float((gamma ** np.arange(len(cyc))) @ cyc)
    return prefix + gamma**start * cyc_sum / (1.0 - gamma ** len(cyc))


def deterministic_count(n_states: int, n_actions: int) -> int:
    return n_actions**n_states


def iter_deterministic(n_states: int, n_actions: int, chunk: int = 4096,
                       guard: int = ENUMERATION_GUARD) -> Iterator[np.ndarray]:
    """Yield one-hot deterministic policies in lexicographic order, ``chunk`` at a time."""
    total = deterministic_count(n_states, n_actions)
    if total > guard:
        raise GuardError(f"{total} deterministic policies exceed the enumeration guard {guard}")
    eye = np.eye(n_actions)
    it = itertools.product(range(n_actions), repeat=n_states)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield eye[np.array(block)]


def deterministic_policies(n_states: int, n_actions: int, guard: int = ENUMERATION_GUARD) -> np.ndarray:
    return np.concatenate(list(iter_deterministic(n_states, n_actions, guard=guard)), axis=0)


def random_policies(rng: np.random.Generator, count: int, n_states: int, n_actions: int) -> np.ndarray:
    """Uniform (flat Dirichlet) random stochastic policies, shape (count, S, A)."""
    return rng.dirichlet(np.ones(n_actions), size=(count, n_states))


class Relation(enum.Enum):
    TRIVIAL1 = "Trivial1"
    TRIVIAL2 = "Trivial2"
    EQUIVALENT = "Equivalent"
    OPPOSITE = "Opposite"
    UNRELATED = "Unrelated"


def _monotone(x: np.ndarray, y: np.ndarray, tol: float) -> bool:
    """True when ``y`` is a strictly increasing function of ``x`` on the sample."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    breaks = np.flatnonzero(np.diff(xs) > tol) + 1
    groups = np.split(ys, breaks)
    lows = np.array([g.min() for g in groups])
    highs = np.array([g.max() for g in groups])
    if np.any(highs - lows > tol):
        return False
    return bool(np.all(lows[1:] - highs[:-1] > tol))


def relation_from_values(j1: np.ndarray, j2: np.ndarray, tol: float = J_TOL) -> Relation:
    """Classify two J-value columns evaluated on the same policies."""
    j1 = np.asarray(j1, dtype=float)
    j2 = np.asarray(j2, dtype=float)
    if np.ptp(j1) <= tol:
        return Relation.TRIVIAL1
    if np.ptp(j2) <= tol:
        return Relation.TRIVIAL2
    if _monotone(j1, j2, tol):
        return Relation.EQUIVALENT
    if _monotone(j1, -j2, tol):
        return Relation.OPPOSITE
    return Relation.UNRELATED


def screening_policies(mdp: TabularMDP, n_random: int = 100, seed: int = 0) -> np.ndarray:
    """All deterministic policies plus ``n_random`` seeded random stochastic ones."""
    from .seeding import stream

    det = deterministic_policies(mdp.n_states, mdp.n_actions)
    rnd = random_policies(stream(seed, "mdp.screening"), n_random, mdp.n_states, mdp.n_actions)
    return np.concatenate([det, rnd], axis=0)


def reward_relation(mdp: TabularMDP, r1, r2, n_random: int = 100, seed: int = 0) -> Relation:
    """Screen two rewards for triviality, equivalence or opposition on sampled policies."""
    r1 = check_reward(mdp, r1)
    r2 = check_reward(mdp, r2)
    pis = screening_policies(mdp, n_random, seed)
    j = batch_j(mdp, np.stack([r1, r2]), pis)
    return relation_from_values(j[:, 0], j[:, 1])


def reward_from_optimal_set(mdp: TabularMDP, opt_actions: Sequence[Sequence[int]]) -> np.ndarray:
    """Reward that is 0 on the allowed actions of each state and -1 elsewhere."""
    if len(opt_actions) != mdp.n_states:
        raise DimensionError(f"need one action set per state ({mdp.n_states}), got {len(opt_actions)}")
    r = -np.ones((mdp.n_states, mdp.n_actions))
    for s, acts in enumerate(opt_actions):
        acts = list(acts)
        if not acts:
            raise InvariantError(f"state {s} has an empty optimal action set")
        if any(not 0 <= a < mdp.n_actions for a in acts):
            raise DimensionError(f"state {s} lists an action out of range: {acts}")
        r[s, acts] = 0.0
    return r


def optimal_action_map(mdp: TabularMDP, reward, tol: float = J_TOL) -> list[frozenset[int]]:
    """Per-state sets of actions whose optimal Q-value is within ``tol`` of the best."""
    from .solvers import optimal_values

    q = optimal_values(mdp, reward).values.q
    best = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row >= b - tol).tolist()) for row, b in zip(q, best)]


def supports_within(policy: np.ndarray, opt_actions: Sequence[Sequence[int]], tol: float = 0.0) -> bool:
    """True when every state's action support lies inside its allowed set."""
    pi = np.asarray(policy)
    for s, acts in enumerate(opt_actions):
        outside = np.ones(pi.shape[1], dtype=bool)
        outside[list(acts)] = False
        if np.any(pi[s, outside] > tol):
            return False
    return True
