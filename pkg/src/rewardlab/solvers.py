"""Exact planning oracles and exact-gradient ascent for differentiable objectives."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, SolverError
from .mdp import MOMDP, TabularMDP, ValueTables, batch_j, check_reward, evaluate_policy, state_visits
from .objectives import DIFFERENTIABLE, ObjectiveSpec, utility, utility_gradient
from .seeding import stream

VI_TOL = 1e-10
TIE_TOL = 1e-9


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = float("nan")
    wall_time: float = 0.0
    trace: list[float] = field(default_factory=list)
    grad_norm: float = float("nan")

    def to_json(self, include_time: bool = False) -> dict:
        out = {"iterations": self.iterations, "residual": self.residual,
               "trace": list(self.trace), "grad_norm": self.grad_norm}
        if include_time:
            out["wall_time"] = self.wall_time
        return out


@dataclass(frozen=True)
class OptimalSolution:
    values: ValueTables
    policy: np.ndarray
    report: SolveReport


def greedy_policy(q: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """Deterministic greedy policy, ties within ``tol`` broken toward the lowest index."""
    best = q.max(axis=1, keepdims=True)
    idx = np.argmax(q >= best - tol, axis=1)
    return np.eye(q.shape[1])[idx]


def bellman_residual(mdp: TabularMDP, reward, v) -> float:
    q = np.asarray(reward) + mdp.gamma * mdp.transition @ v
    return float(np.max(np.abs(q.max(axis=1) - v)))


def value_iteration(mdp: TabularMDP, reward, tol: float = VI_TOL, max_iter: int = 1_000_000,
                    v0=None) -> tuple[np.ndarray, SolveReport]:
    r = check_reward(mdp, reward)
    v = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    report = SolveReport()
    t0 = time.perf_counter()
    for it in range(1, max_iter + 1):
        v_new = (r + mdp.gamma * mdp.transition @ v).max(axis=1)
        res = float(np.max(np.abs(v_new - v)))
        v = v_new
        report.trace.append(res)
        if res < tol:
            break
    else:
        raise SolverError(f"value iteration did not reach {tol} in {max_iter} sweeps")
    report.iterations = it
    report.residual = res
    report.wall_time = time.perf_counter() - t0
    return v, report


def _improve_until_stable(mdp: TabularMDP, r: np.ndarray, pi: np.ndarray, max_rounds: int = 10_000):
    n_a = mdp.n_actions
    for _ in range(max_rounds):
        vals = evaluate_policy(mdp, r, pi)
        cur = np.argmax(pi, axis=1)
        q = vals.q
        gain = q.max(axis=1) - q[np.arange(mdp.n_states), cur]
        switch = gain > TIE_TOL
        if not np.any(switch):
            return pi, vals
        new = cur.copy()
        new[switch] = np.argmax(q[switch] >= q[switch].max(axis=1, keepdims=True) - TIE_TOL, axis=1)
        pi = np.eye(n_a)[new]
    raise SolverError("policy improvement did not stabilise")


def optimal_values(mdp: TabularMDP, reward, tol: float = VI_TOL) -> OptimalSolution:
    """V*, Q* and a greedy optimal policy.

    Value iteration runs to ``tol``; the greedy policy is then polished by exact
    improvement steps so the returned values are exact for a deterministic policy.
    """
    r = check_reward(mdp, reward)
    v, report = value_iteration(mdp, r, tol)
    pi = greedy_policy(r + mdp.gamma * mdp.transition @ v)
    pi, vals = _improve_until_stable(mdp, r, pi)
    # lowest-index tie break against the exact Q*
    pi = greedy_policy(vals.q)
    vals = evaluate_policy(mdp, r, pi)
    report.residual = bellman_residual(mdp, r, vals.v)
    return OptimalSolution(vals, pi, report)


def policy_iteration(mdp: TabularMDP, reward, max_rounds: int = 10_000) -> OptimalSolution:
    """Howard policy iteration from the all-zeros-action policy (independent cross-check)."""
    r = check_reward(mdp, reward)
    t0 = time.perf_counter()
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[:, 0] = 1.0
    pi, vals = _improve_until_stable(mdp, r, pi, max_rounds)
    pi = greedy_policy(vals.q)
    vals = evaluate_policy(mdp, r, pi)
    rep = SolveReport(iterations=0, residual=bellman_residual(mdp, r, vals.v),
                      wall_time=time.perf_counter() - t0)
    return OptimalSolution(vals, pi, rep)


@dataclass(frozen=True)
class SoftmaxPolicyParams:
    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        if th.ndim != 2 or not np.all(np.isfinite(th)):
            raise InvariantError("logits must be a finite (S, A) matrix")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def policy(self) -> np.ndarray:
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicyParams":
        return cls(np.zeros((n_states, n_actions)))


def j_values(momdp: MOMDP, params: SoftmaxPolicyParams) -> np.ndarray:
    return batch_j(momdp.skeleton, momdp.rewards, params.policy[None])[0]


def j_gradient(momdp: MOMDP, params: SoftmaxPolicyParams) -> list[np.ndarray]:
    """Exact dJ_i/dtheta[s, a] = d(s) pi(a|s) (Q_i(s, a) - V_i(s)) for every reward."""
    mdp = momdp.skeleton
    pi = params.policy
    d = state_visits(mdp, pi)
    grads = []
    for r in momdp.rewards:
        vals = evaluate_policy(mdp, r, pi)
        adv = vals.q - vals.v[:, None]
        grads.append(d[:, None] * pi * adv)
    return grads


@dataclass(frozen=True)
class StepRule:
    initial: float = 0.1
    factor: float = 0.5
    max_halvings: int = 30


def _require_differentiable(spec: ObjectiveSpec) -> None:
    if spec.kind not in DIFFERENTIABLE:
        raise InvariantError(f"{spec.kind} is not differentiable; use a soft or linear objective")


def solve_differentiable_morl(momdp: MOMDP, spec: ObjectiveSpec, init: SoftmaxPolicyParams,
                              steps: int, step_size: StepRule | float = StepRule()):
    """Gradient ascent on U(J_1..J_k) over softmax logits with step halving.

    A trial step is accepted only when U does not decrease, so the trace is
    non-decreasing. Stops early when no trial step within the halving budget is
    accepted.
    """
    _require_differentiable(spec)
    spec.check_k(momdp.k)
    rule = step_size if isinstance(step_size, StepRule) else StepRule(initial=float(step_size))
    if rule.initial <= 0 or not 0 < rule.factor < 1:
        raise InvariantError("step rule needs a positive initial step and a factor in (0, 1)")
    theta = np.array(init.theta, dtype=float)
    if theta.shape != (momdp.skeleton.n_states, momdp.skeleton.n_actions):
        raise InvariantError("initial logits do not match the MDP")
    t0 = time.perf_counter()
    params = SoftmaxPolicyParams(theta)
    u = utility(spec, j_values(momdp, params))
    report = SolveReport(trace=[])
    grad_norm = float("nan")
    for it in range(steps):
        grads = j_gradient(momdp, params)
        du = utility_gradient(spec, j_values(momdp, params))
        g = sum(w * gi for w, gi in zip(du, grads))
        grad_norm = float(np.linalg.norm(g))
        if grad_norm == 0.0:
            break
        eta = rule.initial
        accepted = False
        for _ in range(rule.max_halvings + 1):
            cand = SoftmaxPolicyParams(params.theta + eta * g)
            u_c = utility(spec, j_values(momdp, cand))
            if u_c >= u:
                params, u, accepted = cand, u_c, True
                break
            eta *= rule.factor
        if not accepted:
            break
        report.trace.append(u)
        report.iterations += 1
    grads = j_gradient(momdp, params)
    du = utility_gradient(spec, j_values(momdp, params))
    report.grad_norm = float(np.linalg.norm(sum(w * gi for w, gi in zip(du, grads))))
    report.residual = report.grad_norm
    report.wall_time = time.perf_counter() - t0
    return params, report


def solve_multistart(momdp: MOMDP, spec: ObjectiveSpec, steps: int, seed: int, restarts: int = 5,
                     step_size: StepRule | float = StepRule(), scale: float = 1.0):
    """Best of ``restarts`` ascents from seeded random logits (first start is uniform)."""
    mdp = momdp.skeleton
    best = None
    for i in range(restarts):
        if i == 0:
            init = SoftmaxPolicyParams.uniform(mdp.n_states, mdp.n_actions)
        else:
            init = SoftmaxPolicyParams(scale * stream(seed, "solvers.multistart", i)
                                       .standard_normal((mdp.n_states, mdp.n_actions)))
        params, rep = solve_differentiable_morl(momdp, spec, init, steps, step_size)
        u = rep.trace[-1] if rep.trace else utility(spec, j_values(momdp, params))
        if best is None or u > best[0]:
            best = (u, params, rep)
    return best[1], best[2]
