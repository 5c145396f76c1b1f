"""Rewards that depend on the transition function, and a learner for affordance-based MDPs.

Rewards here take the arity (s, a, s'). Whenever an (S, A) table is needed the
next state is marginalised out under the transition function in force.
"""

from __future__ import annotations

import bisect
import math

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DimensionError, GuardError, InvariantError, ScheduleError
from .lp import STRICT_MARGIN, dual_certificate, greedy_irreducible, max_margin
from .mdp import TabularMDP, ValueTables, deterministic_count, iter_deterministic, random_policies
from .occupancy import embed_policies
from .seeding import stream
from .solvers import optimal_values

SAMPLE_GUARD = 5000


def _as3(table, n_states: int, n_actions: int) -> np.ndarray:
    """Broadcast an (S, A) table to (S, A, S); pass (S, A, S) tables through."""
    r = np.asarray(table, dtype=float)
    if r.shape == (n_states, n_actions):
        return np.repeat(r[:, :, None], n_states, axis=2)
    if r.shape == (n_states, n_actions, n_states):
        return r
    raise DimensionError(f"reward has shape {r.shape}, expected ({n_states}, {n_actions}) or "
                         f"({n_states}, {n_actions}, {n_states})")


def marginalize(reward3: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Expected reward ``sum_s' tau[s, a, s'] R[s, a, s']``."""
    return np.einsum("sat,sat->sa", transition, reward3)


def can_reach(transition: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Boolean mask of states with a positive-probability path to any target (targets included)."""
    edge = np.asarray(transition).sum(axis=1) > 0  # edge[s, s'] under some action
    reach = np.zeros(edge.shape[0], dtype=bool)
    reach[list(targets)] = True
    while True:
        nxt = reach | (edge & reach[None, :]).any(axis=1)
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


# ------------------------------------------------------------------ modal rewards

class ModalReward:
    """A reward rule ``R(s, a, s'; tau)`` that may depend on the transition function."""

    n_states: int
    n_actions: int

    def table3(self, transition: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, s: int, a: int, s_next: int, transition: np.ndarray) -> float:
        return float(self.table3(transition)[s, a, s_next])

    def check(self, transition: np.ndarray) -> np.ndarray:
        tau = np.asarray(transition, dtype=float)
        if tau.shape != (self.n_states, self.n_actions, self.n_states):
            raise DimensionError(f"transition has shape {tau.shape}, expected "
                                 f"({self.n_states}, {self.n_actions}, {self.n_states})")
        return tau


@dataclass(frozen=True)
class FixedModalReward(ModalReward):
    """A reward that ignores the transition function."""

    base: np.ndarray
    n_states: int
    n_actions: int

    def table3(self, transition):
        self.check(transition)
        return _as3(self.base, self.n_states, self.n_actions)


@dataclass(frozen=True)
class ReachabilityModalReward(ModalReward):
    """Base reward minus ``penalty`` wherever the target set becomes unreachable.

    ``on="next"`` penalises entering a state with no path back to the targets;
    ``on="current"`` penalises acting from such a state.
    """

    base: np.ndarray
    targets: tuple[int, ...]
    penalty: float
    n_states: int
    n_actions: int
    on: str = "next"

    def __post_init__(self):
        if self.on not in ("next", "current"):
            raise InvariantError("on must be 'next' or 'current'")

    def table3(self, transition):
        tau = self.check(transition)
        lost = ~can_reach(tau, self.targets)
        r = _as3(self.base, self.n_states, self.n_actions).copy()
        if self.on == "next":
            r -= self.penalty * lost[None, None, :]
        else:
            r -= self.penalty * lost[:, None, None]
        return r


@dataclass(frozen=True)
class Affordance:
    """A reward and its own discount; its optimal values feed a modal reward."""

    reward: np.ndarray  # (S, A) or (S, A, S)
    gamma: float

    def __post_init__(self):
        if not 0.0 < float(self.gamma) < 1.0:
            raise InvariantError(f"affordance discount must lie in (0, 1), got {self.gamma}")


FORM_KINDS = ("tanh_gate", "value_penalty", "fixed")


@dataclass(frozen=True)
class ModalForm:
    """R(s, a, s', V(s), V(s')) built from a base table and one affordance's value at s'.

    ``tanh_gate``: base * tanh(scale * V_i(s')); ``value_penalty``: base - scale * V_i(s');
    ``fixed``: base.
    """

    kind: str
    base_reward: np.ndarray
    affordance_index: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in FORM_KINDS:
            raise InvariantError(f"unknown modal form {self.kind!r}")

    def lipschitz(self) -> float:
        """Bound on |dR/dV| over the value arguments."""
        if self.kind == "fixed":
            return 0.0
        if self.kind == "value_penalty":
            return abs(self.scale)
        return abs(self.scale) * float(np.max(np.abs(self.base_reward)))

    def apply(self, base3: np.ndarray, v_next: np.ndarray) -> np.ndarray:
        """Vectorised rule: base3 has any shape ending in S' and v_next broadcasts to it."""
        if self.kind == "fixed":
            return base3
        if self.kind == "tanh_gate":
            return base3 * np.tanh(self.scale * v_next)
        return base3 - self.scale * v_next

    def table3(self, values: list[np.ndarray], n_states: int, n_actions: int) -> np.ndarray:
        base3 = _as3(self.base_reward, n_states, n_actions)
        if self.kind == "fixed":
            return base3
        if not 0 <= self.affordance_index < len(values):
            raise DimensionError(f"affordance index {self.affordance_index} out of range")
        return self.apply(base3, np.asarray(values[self.affordance_index])[None, None, :])

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "base_reward": np.asarray(self.base_reward).tolist(),
                "affordance_index": self.affordance_index, "scale": self.scale}


@dataclass(frozen=True)
class AffordanceMDP:
    skeleton: TabularMDP
    form: ModalForm
    affordances: tuple[Affordance, ...] = ()

    def __post_init__(self):
        sk = self.skeleton
        object.__setattr__(self, "affordances", tuple(self.affordances))
        for aff in self.affordances:
            _as3(aff.reward, sk.n_states, sk.n_actions)
        _as3(self.form.base_reward, sk.n_states, sk.n_actions)
        if self.form.kind != "fixed" and not 0 <= self.form.affordance_index < len(self.affordances):
            raise InvariantError("modal form refers to a missing affordance")

    @property
    def k(self) -> int:
        return len(self.affordances)

    def with_transition(self, transition) -> "AffordanceMDP":
        return AffordanceMDP(self.skeleton.with_transition(transition), self.form, self.affordances)


@dataclass(frozen=True)
class AffordanceModalReward(ModalReward):
    """The modal reward of an affordance-based MDP: values recomputed under each tau."""

    amdp: AffordanceMDP

    @property
    def n_states(self):
        return self.amdp.skeleton.n_states

    @property
    def n_actions(self):
        return self.amdp.skeleton.n_actions

    def table3(self, transition):
        tau = self.check(transition)
        amdp = self.amdp.with_transition(tau)
        return self.amdp.form.table3(affordance_optimal_values(amdp), self.n_states, self.n_actions)


def realize_contingent(modal: ModalReward, transition) -> np.ndarray:
    """The fixed (S, A) reward that agrees with the modal reward under ``transition``."""
    tau = modal.check(transition)
    return marginalize(modal.table3(tau), tau)


def affordance_mdp(amdp: AffordanceMDP, i: int) -> TabularMDP:
    sk = amdp.skeleton
    return TabularMDP(sk.transition, sk.initial, amdp.affordances[i].gamma, sk.state_names, sk.action_names)


def affordance_optimal_values(amdp: AffordanceMDP) -> list[np.ndarray]:
    """V_i* for every affordance, each at its own discount."""
    out = []
    tau = amdp.skeleton.transition
    for i, aff in enumerate(amdp.affordances):
        r = marginalize(_as3(aff.reward, amdp.skeleton.n_states, amdp.skeleton.n_actions), tau)
        out.append(optimal_values(affordance_mdp(amdp, i), r).values.v)
    return out


def resolved_reward(amdp: AffordanceMDP) -> np.ndarray:
    """(S, A) expectation of the modal reward with the true affordance values plugged in."""
    sk = amdp.skeleton
    r3 = amdp.form.table3(affordance_optimal_values(amdp), sk.n_states, sk.n_actions)
    return marginalize(r3, sk.transition)


def ground_truth_modal_solution(amdp: AffordanceMDP) -> tuple[np.ndarray, ValueTables]:
    sol = optimal_values(amdp.skeleton, resolved_reward(amdp))
    return sol.policy, sol.values


# ------------------------------------------------------------------ vacuousness

@dataclass(frozen=True)
class VacuousVerdict:
    outcome: str  # "VacuousOnFamily" or "NonVacuous"
    margin: float
    reward: np.ndarray | None = None
    witness: dict[str, Any] | None = None
    links: tuple[tuple[int, int, int], ...] = ()  # (tau index, lower policy, upper policy)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"outcome": self.outcome, "margin": float(self.margin)}
        if self.reward is not None:
            out["reward"] = np.asarray(self.reward).tolist()
        if self.witness is not None:
            out["witness"] = self.witness
        return out


def _family_sample(mdp: TabularMDP, budget: int, seed: int) -> tuple[np.ndarray, int]:
    """Deterministic policies first (when they fit the budget), then random ones."""
    s, a = mdp.n_states, mdp.n_actions
    if budget > SAMPLE_GUARD:
        raise GuardError(f"sample budget {budget} exceeds the guard {SAMPLE_GUARD}")
    parts = []
    if deterministic_count(s, a) <= budget:
        parts.append(np.concatenate(list(iter_deterministic(s, a))))
    used = sum(len(p) for p in parts)
    if budget > used:
        parts.append(random_policies(stream(seed, "modal.vacuous"), budget - used, s, a))
    n_det = len(parts[0]) if used else 0
    return np.concatenate(parts), n_det


def _ordering_links(j: np.ndarray, tol: float = 1e-9):
    order = np.argsort(j, kind="stable")
    links = []
    for a, b in zip(order[:-1], order[1:]):
        links.append((int(a), int(b), bool(j[b] - j[a] > tol)))
    return links


def check_vacuous(modal: ModalReward, family: Sequence[TabularMDP], sample_budget: int = 200,
                  seed: int = 0) -> VacuousVerdict:
    """Look for one fixed reward reproducing the modal reward's ordering under every tau.

    The unknown is the vectorised reward (entries bounded by 1). Each tau
    contributes the chain of policy orderings induced by its contingent reward,
    written in that tau's occupancy coordinates. An infeasible system yields a
    cross-tau witness.
    """
    family = list(family)
    if not family:
        raise InvariantError("transition family is empty")
    base = family[0]
    for m in family[1:]:
        if m.transition.shape != base.transition.shape:
            raise DimensionError("all transition functions must share dimensions")
    if len(family) == 1:
        return VacuousVerdict("VacuousOnFamily", 1.0, realize_contingent(modal, base.transition))
    pis, n_det = _family_sample(base, sample_budget, seed)
    n = base.n_pairs
    tables = [(embed_policies(mdp, pis), realize_contingent(modal, mdp.transition).reshape(-1))
              for mdp in family]

    def system(members: np.ndarray):
        rows, strict, tags = [], [], []
        for t, (occ, r) in enumerate(tables):
            sub = occ[members]
            for lo, hi, st in _ordering_links(sub @ r):
                d = sub[hi] - sub[lo]
                nrm = np.linalg.norm(d)
                if nrm <= 1e-12:
                    if st:  # same occupancy, different value: impossible under a single tau
                        raise InvariantError("contingent reward is inconsistent with its own occupancies")
                    continue
                rows.append(d / nrm)
                strict.append(st)
                tags.append((t, int(members[lo]), int(members[hi])))
        return np.array(rows).reshape(-1, n), np.array(strict, dtype=bool), tags

    rows, strict, tags = system(np.arange(len(pis)))
    res = max_margin(rows[strict], rows[~strict], n)
    if res.strict:
        return VacuousVerdict("VacuousOnFamily", res.margin, res.w.reshape(base.n_states, base.n_actions))
    if n_det:  # prefer a witness made of deterministic policies when they already suffice
        d_rows, d_strict, d_tags = system(np.arange(n_det))
        if not max_margin(d_rows[d_strict], d_rows[~d_strict], n).strict:
            rows, strict, tags = d_rows, d_strict, d_tags

    def infeasible(mask):
        return not max_margin(rows[mask & strict], rows[mask & ~strict], n).strict

    cert = dual_certificate(rows[strict], rows[~strict], n)
    weight = np.zeros(len(rows))
    weight[np.flatnonzero(strict)] = cert.y
    weight[np.flatnonzero(~strict)] = np.abs(cert.z)
    support = np.flatnonzero(weight > 1e-12)
    mask = np.zeros(len(rows), dtype=bool)
    mask[support] = True
    if not support.size or not infeasible(mask):
        support = np.arange(len(rows))
    kept = greedy_irreducible(len(rows), infeasible, start=support)
    links = tuple(tags[i] for i in kept)
    first = links[0]
    second = next((lk for lk in links if lk[0] != first[0]), first)
    witness = {"tau_a": first[0], "tau_b": second[0],
               "pi_1": pis[first[1]].tolist(), "pi_2": pis[first[2]].tolist(),
               "links": [{"tau": t, "lower": pis[lo].tolist(), "upper": pis[hi].tolist(),
                          "strict": bool(strict[i])} for i, (t, lo, hi) in zip(kept, links)]}
    return VacuousVerdict("NonVacuous", res.margin, None, witness, links)


def witness_infeasible(modal: ModalReward, family: Sequence[TabularMDP], verdict: VacuousVerdict) -> bool:
    """Re-solve the witness links alone from scratch; True when no reward satisfies them."""
    rows, strict = [], []
    for lk in verdict.witness["links"]:
        mdp = family[lk["tau"]]
        r = realize_contingent(modal, mdp.transition)
        lo, hi = np.array(lk["lower"]), np.array(lk["upper"])
        occ = embed_policies(mdp, np.stack([lo, hi]))
        d = occ[1] - occ[0]
        gap = float(d @ r.reshape(-1))
        rows.append(d / np.linalg.norm(d))
        strict.append(gap > 1e-9)
    rows = np.array(rows)
    strict = np.array(strict)
    res = max_margin(rows[strict], rows[~strict], rows.shape[1])
    return res.margin <= STRICT_MARGIN


# ------------------------------------------------------------------ learner

@dataclass(frozen=True)
class LearnerConfig:
    """Schedules: step size (1 + visits)^-omega, exploration max(eps_floor, (1 + episode)^-eps_power).

    With ``exploring_starts`` every episode begins from a uniformly drawn
    state-action pair instead of mu0 and the greedy action.
    """

    omega: float = 0.8
    eps_floor: float = 0.05
    eps_power: float = 0.5
    horizon: int = 50
    exploring_starts: bool = True

    def __post_init__(self):
        if not 0.5 < self.omega <= 1.0:
            raise ScheduleError(f"step-size exponent must lie in (0.5, 1], got {self.omega}")
        if not 0.0 < self.eps_floor <= 1.0 or self.eps_power <= 0:
            raise ScheduleError("exploration floor must lie in (0, 1] and its decay power be positive")
        if self.horizon < 1:
            raise ScheduleError("episode horizon must be positive")

    def epsilon(self, episode: int) -> float:
        return max(self.eps_floor, (1.0 + episode) ** -self.eps_power)


@dataclass
class LearnerState:
    q_modal: np.ndarray
    q_affordances: list[np.ndarray]
    visits: np.ndarray
    config: LearnerConfig
    epsilons: list[float] = field(default_factory=list)

    def affordance_values(self) -> list[np.ndarray]:
        return [q.max(axis=1) for q in self.q_affordances]

    def greedy_policy(self) -> np.ndarray:
        from .solvers import greedy_policy

        return greedy_policy(self.q_modal, tol=0.0)


def learn_affordance_mdp(amdp: AffordanceMDP, episodes: int, config: LearnerConfig = LearnerConfig(),
                         seed: int = 0) -> LearnerState:
    """Q-learning with k+1 tables.

    Each affordance table is updated off-policy at its own discount. The modal
    table is updated with the reward estimate obtained by plugging the current
    affordance values max_a Q_i(., a) into the modal form. Behaviour is
    epsilon-greedy on the modal table.
    """
    sk = amdp.skeleton
    n_s, n_a = sk.n_states, sk.n_actions
    k = amdp.k
    rng = stream(seed, "modal.learner")
    # plain Python containers: scalar indexing into lists is several times faster than numpy here
    cum = np.cumsum(sk.transition, axis=2)
    cum[..., -1] = 1.0
    cum = cum.tolist()
    aff_r = [_as3(a.reward, n_s, n_a).tolist() for a in amdp.affordances]
    aff_g = [float(a.gamma) for a in amdp.affordances]
    base3 = _as3(amdp.form.base_reward, n_s, n_a).tolist()
    form = amdp.form
    idx = form.affordance_index
    scale = float(form.scale)
    gamma = float(sk.gamma)
    q = [[0.0] * n_a for _ in range(n_s)]
    qa = [[[0.0] * n_a for _ in range(n_s)] for _ in range(k)]
    va = [[0.0] * n_s for _ in range(k)]  # running max_a Q_i(s, a)
    visits = [[0] * n_a for _ in range(n_s)]
    omega = config.omega
    mu0_cum = np.cumsum(sk.initial).tolist()
    epsilons = []
    actions = range(n_a)
    for ep in range(episodes):
        eps = config.epsilon(ep)
        epsilons.append(eps)
        if config.exploring_starts:
            s = int(rng.integers(n_s))
        else:
            s = min(bisect.bisect_right(mu0_cum, rng.random()), n_s - 1)
        u = rng.random((config.horizon, 3)).tolist()
        for t in range(config.horizon):
            u0, u1, u2 = u[t]
            if u0 < eps or (t == 0 and config.exploring_starts):
                a = min(int(u1 * n_a), n_a - 1)
            else:
                row = q[s]
                m = max(row)
                best = [b for b in actions if row[b] == m]
                a = best[0] if len(best) == 1 else best[min(int(u1 * len(best)), len(best) - 1)]
            s2 = min(bisect.bisect_right(cum[s][a], u2), n_s - 1)
            n = visits[s][a]
            lr = (1.0 + n) ** -omega
            visits[s][a] = n + 1
            for i in range(k):
                qi = qa[i][s]
                qi[a] += lr * (aff_r[i][s][a][s2] + aff_g[i] * va[i][s2] - qi[a])
                va[i][s] = max(qi)
            b = base3[s][a][s2]
            if form.kind == "tanh_gate":
                b = b * math.tanh(scale * va[idx][s2])
            elif form.kind == "value_penalty":
                b = b - scale * va[idx][s2]
            q[s][a] += lr * (b + gamma * max(q[s2]) - q[s][a])
            s = s2
    return LearnerState(np.array(q), [np.array(x) for x in qa], np.array(visits, dtype=np.int64),
                        config, epsilons)


def reward_estimate_gap(amdp: AffordanceMDP, state: LearnerState) -> tuple[float, float]:
    """(max |R_hat - R*| over all (s, a, s'), L * max_i |V_i - V_i*|)."""
    sk = amdp.skeleton
    true_v = affordance_optimal_values(amdp)
    est_v = state.affordance_values()
    r_true = amdp.form.table3(true_v, sk.n_states, sk.n_actions)
    r_est = amdp.form.table3(est_v, sk.n_states, sk.n_actions)
    mask = sk.transition > 0
    gap = float(np.max(np.abs(r_true - r_est)[mask])) if mask.any() else 0.0
    err = max((float(np.max(np.abs(a - b))) for a, b in zip(true_v, est_v)), default=0.0)
    return gap, amdp.form.lipschitz() * err


def count_crossings(policy: np.ndarray, mdp: TabularMDP, from_states, into_states, horizon: int = 200) -> int:
    """Number of steps in the greedy rollout from mu0's support that move from one set into another."""
    det = policy.argmax(axis=1)
    crossings = 0
    src, dst = set(from_states), set(into_states)
    for s0 in np.flatnonzero(mdp.initial > 0):
        s = int(s0)
        for _ in range(horizon):
            nxt = int(mdp.transition[s, det[s]].argmax())
            if s in src and nxt in dst:
                crossings += 1
            s = nxt
    return crossings
