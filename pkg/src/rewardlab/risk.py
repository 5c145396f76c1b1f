"""Return transformations, base-1/gamma digit trajectories and the affine-only checker.

The checker treats the entries of a candidate second reward as unknowns. Each
probe trajectory contributes one linear equation ``R2 . m(xi) = f(G1(xi))``,
so a transformation ``f`` is realisable by a Markovian reward exactly when the
stacked system is consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DomainError, InvariantError
from .lp import chebyshev_fit
from .mdp import TabularMDP, Trajectory, check_reward, trajectory_return
from .occupancy import index_pair, trajectory_mass
from .seeding import stream

REALIZABLE_TOL = 1e-7
HOLDOUT_TOL = 1e-6
INFEASIBLE_TOL = 1e-5
ALPHA_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)
DIGIT_EPS = 1e-10

TRANSFORM_KINDS = ("Exponential", "Isoelastic", "Logarithmic", "Quadratic", "Affine")


@dataclass(frozen=True)
class UtilityTransform:
    """A monotone map applied to returns.

    Exponential uses ``-exp(alpha g)``; Isoelastic ``(g^(1-alpha) - 1)/(1-alpha)``;
    Quadratic ``g - alpha g^2``; Affine ``b g + a``.
    """

    kind: str
    alpha: float | None = None
    b: float = 1.0
    a: float = 0.0

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise InvariantError(f"unknown transform kind {self.kind!r}")
        if self.kind in ("Exponential", "Isoelastic", "Quadratic"):
            if self.alpha is None or not self.alpha > 0:
                raise InvariantError(f"{self.kind} needs alpha > 0")
            if self.kind == "Isoelastic" and self.alpha == 1:
                raise InvariantError("Isoelastic needs alpha != 1 (alpha = 1 is the logarithm)")
        if self.kind == "Affine" and not self.b > 0:
            raise InvariantError("Affine needs b > 0")

    def domain_violation(self, g: np.ndarray) -> str | None:
        g = np.asarray(g, dtype=float)
        if self.kind in ("Logarithmic", "Isoelastic") and np.any(g <= 0):
            return f"{self.kind} needs g > 0, got {g.min():.6g}"
        if self.kind == "Quadratic":
            top = 1.0 / (2.0 * self.alpha)
            if np.any(g > top):
                return f"Quadratic needs g <= {top:.6g}, got {g.max():.6g}"
        return None

    def __call__(self, g):
        g = np.asarray(g, dtype=float)
        bad = self.domain_violation(g)
        if bad:
            raise DomainError(bad)
        k = self.kind
        if k == "Exponential":
            return -np.exp(self.alpha * g)
        if k == "Isoelastic":
            return (g ** (1.0 - self.alpha) - 1.0) / (1.0 - self.alpha)
        if k == "Logarithmic":
            return np.log(g)
        if k == "Quadratic":
            return g - self.alpha * g * g
        return self.b * g + self.a

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.kind == "Affine":
            out.update(b=self.b, a=self.a)
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "UtilityTransform":
        return cls(kind=data["kind"], alpha=data.get("alpha"), b=data.get("b", 1.0), a=data.get("a", 0.0))


def apply_transform(t: UtilityTransform, g: float) -> float:
    return float(t(g))


# ------------------------------------------------------------------ digits

@dataclass(frozen=True)
class DigitTrajectory:
    alpha: float
    gamma: float
    digits: tuple[int, ...]
    transitions: tuple[tuple[int, int], tuple[int, int]] = ((0, 0), (0, 1))

    @property
    def horizon(self) -> int:
        return len(self.digits)

    def value(self) -> float:
        """sum_k a_k gamma^k over the truncated digits."""
        return math.fsum(self.gamma**k for k, d in enumerate(self.digits) if d)

    def trajectory(self) -> Trajectory:
        """Digits mapped to t_i (1) / t_j (0), then t_j forever."""
        ti, tj = self.transitions
        steps = tuple(ti if d else tj for d in self.digits) + (tj,)
        return Trajectory(steps, tail="repeat")

    def with_transitions(self, ti, tj) -> "DigitTrajectory":
        return DigitTrajectory(self.alpha, self.gamma, self.digits, (tuple(ti), tuple(tj)))


def digit_horizon(gamma: float, epsilon: float) -> int:
    return max(1, math.ceil(math.log(epsilon * (1.0 - gamma)) / math.log(gamma)))


def _greedy_digits(alpha: float, gamma: float, epsilon: float) -> tuple[int, ...]:
    horizon = digit_horizon(gamma, epsilon)
    digits = []
    partial, comp = 0.0, 0.0  # Neumaier-compensated running sum
    p = 1.0
    for _ in range(horizon):
        if (partial + comp) + p <= alpha:
            digits.append(1)
            t = partial + p
            comp += (partial - t) + p if abs(partial) >= p else (p - t) + partial
            partial = t
        else:
            digits.append(0)
        p *= gamma
    return tuple(digits)


def digits_base_inv_gamma(alpha: float, gamma: float, epsilon: float = DIGIT_EPS,
                          transitions=((0, 0), (0, 1))) -> DigitTrajectory:
    """Greedy 0/1 expansion ``alpha = sum_k a_k gamma^k``.

    Emitting a one whenever it does not overshoot is enough when gamma >= 0.5,
    because the remaining geometric tail then always covers the remainder.
    """
    if not 0.5 <= gamma < 1.0:
        raise DomainError(f"binary digit expansion needs 0.5 <= gamma < 1, got {gamma}")
    if not 0.0 <= alpha <= 1.0 / (1.0 - gamma) + 1e-12:
        raise DomainError(f"alpha must lie in [0, {1.0 / (1.0 - gamma):.6g}], got {alpha}")
    if not epsilon > 0:
        raise InvariantError("epsilon must be positive")
    alpha = min(alpha, 1.0 / (1.0 - gamma))
    return DigitTrajectory(float(alpha), float(gamma), _greedy_digits(alpha, gamma, epsilon),
                           (tuple(transitions[0]), tuple(transitions[1])))


# ------------------------------------------------------------------ probes

def constant_trajectories(n_states: int, n_actions: int) -> list[Trajectory]:
    return [Trajectory.constant(s, a) for s in range(n_states) for a in range(n_actions)]


def digit_trajectories(n_states: int, n_actions: int, gamma: float,
                       fractions=ALPHA_FRACTIONS, epsilon: float = DIGIT_EPS) -> list[Trajectory]:
    """Digit trajectories between every unordered pair of transitions.

    For gamma < 0.5 the same greedy construction is used, although it no longer
    reaches every point of the segment.
    """
    n = n_states * n_actions
    out = []
    for frac in fractions:
        alpha = frac / (1.0 - gamma)
        base = _greedy_digits(alpha, gamma, epsilon)
        d = DigitTrajectory(alpha, gamma, base)
        for i in range(n):
            for j in range(i + 1, n):
                out.append(d.with_transitions(index_pair(i, n_actions), index_pair(j, n_actions)).trajectory())
    return out


def random_trajectories(rng: np.random.Generator, count: int, n_states: int, n_actions: int,
                        max_len: int = 20) -> list[Trajectory]:
    out = []
    for _ in range(count):
        t = int(rng.integers(1, max_len + 1))
        s = rng.integers(0, n_states, size=t)
        a = rng.integers(0, n_actions, size=t)
        out.append(Trajectory(tuple(zip(s.tolist(), a.tolist())), tail="repeat"))
    return out


def probe_set(n_states: int, n_actions: int, gamma: float, probe_count: int, seed: int) -> list[Trajectory]:
    rng = stream(seed, "risk.probes")
    return (constant_trajectories(n_states, n_actions)
            + digit_trajectories(n_states, n_actions, gamma)
            + random_trajectories(rng, probe_count, n_states, n_actions))


def _mass_matrix(trajs: list[Trajectory], gamma: float, n_states: int, n_actions: int) -> np.ndarray:
    return np.array([trajectory_mass(t, gamma, n_states, n_actions) for t in trajs])


# ------------------------------------------------------------------ checker

@dataclass(frozen=True)
class TransformFeasibility:
    outcome: str  # "Realizable", "Infeasible" or "Indeterminate"
    residual: float  # least-squares max violation on the probes, relative to max |f|
    chebyshev: float  # minimum achievable max violation, same scale
    holdout_residual: float | None = None
    reward: np.ndarray | None = None
    outside_regime: bool = False
    probe_count: int = 0

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"outcome": self.outcome, "residual": float(self.residual),
                               "chebyshev": float(self.chebyshev), "outside_regime": self.outside_regime,
                               "probe_count": self.probe_count}
        if self.holdout_residual is not None:
            out["holdout_residual"] = float(self.holdout_residual)
        if self.reward is not None:
            out["reward"] = np.asarray(self.reward).tolist()
        return out


def _targets(t: UtilityTransform, g: np.ndarray, trajs: list[Trajectory]) -> np.ndarray:
    bad = t.domain_violation(g)
    if bad:
        idx = int(np.argmin(g)) if t.kind != "Quadratic" else int(np.argmax(g))
        raise DomainError(f"{bad} on trajectory {trajs[idx].steps} (tail {trajs[idx].tail})")
    return t(g)


def check_transform_realizable(mdp_skeleton: TabularMDP, r1, t: UtilityTransform,
                               probe_count: int = 50, seed: int = 0) -> TransformFeasibility:
    """Decide whether some reward R2 satisfies G2 = f(G1) on every probe trajectory.

    Violations are measured relative to ``max(1, max |f(G1)|)`` so the bands do
    not depend on the scale of the transformed returns.
    """
    r1 = check_reward(mdp_skeleton, r1)
    s, a = r1.shape
    gamma = mdp_skeleton.gamma
    trajs = probe_set(s, a, gamma, probe_count, seed)
    m = _mass_matrix(trajs, gamma, s, a)
    g1 = m @ r1.reshape(-1)
    b = _targets(t, g1, trajs)
    scale = max(1.0, float(np.max(np.abs(b))))
    x, *_ = np.linalg.lstsq(m / scale, b / scale, rcond=None)
    ls_res = float(np.max(np.abs(m @ x - b))) / scale
    _, cheb = chebyshev_fit(m / scale, b / scale)
    outside = gamma < 0.5
    if ls_res <= REALIZABLE_TOL:
        hold = random_trajectories(stream(seed, "risk.holdout"), 100, s, a)
        mh = _mass_matrix(hold, gamma, s, a)
        bh = _targets(t, mh @ r1.reshape(-1), hold)
        h_res = float(np.max(np.abs(mh @ x - bh))) / scale
        outcome = "Realizable" if h_res <= HOLDOUT_TOL else "Indeterminate"
        return TransformFeasibility(outcome, ls_res, cheb, h_res, x.reshape(s, a), outside, len(trajs))
    outcome = "Infeasible" if cheb > INFEASIBLE_TOL else "Indeterminate"
    return TransformFeasibility(outcome, ls_res, cheb, None, None, outside, len(trajs))


# ------------------------------------------------------------------ scan

@dataclass
class ScanReport:
    violations: int
    violating_pair: list[dict[str, Any]] | None
    fitted_affine: dict[str, float] | None
    residual: float | None
    probe_count: int

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"violations": self.violations, "probe_count": self.probe_count}
        if self.violating_pair is not None:
            out["violating_pair"] = self.violating_pair
        if self.fitted_affine is not None:
            out["fitted_affine"] = self.fitted_affine
            out["residual"] = self.residual
        return out


def _sign(x: np.ndarray, tol: float) -> np.ndarray:
    return np.where(x > tol, 1, np.where(x < -tol, -1, 0))


def monotone_consistency_scan(r1, r2, gamma: float, probe_count: int = 50, seed: int = 0,
                              tol: float = 1e-9) -> ScanReport:
    """Look for probe pairs that the two returns order differently; else fit G2 = b G1 + a."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if r1.shape != r2.shape:
        raise InvariantError("reward tables have different shapes")
    s, a = r1.shape
    trajs = probe_set(s, a, gamma, probe_count, seed)
    m = _mass_matrix(trajs, gamma, s, a)
    g1 = m @ r1.reshape(-1)
    g2 = m @ r2.reshape(-1)
    s1 = _sign(g1[None, :] - g1[:, None], tol)
    s2 = _sign(g2[None, :] - g2[:, None], tol)
    bad = np.argwhere(np.triu(s1 != s2, 1))
    if len(bad):
        i, j = bad[0]
        pair = [{"steps": [list(x) for x in trajs[q].steps], "tail": trajs[q].tail,
                 "g1": float(g1[q]), "g2": float(g2[q])} for q in (i, j)]
        return ScanReport(int(len(bad)), pair, None, None, len(trajs))
    if np.ptp(g1) <= tol:
        b_fit, a_fit = 1.0, float(np.mean(g2 - g1))
    else:
        design = np.column_stack([g1, np.ones_like(g1)])
        (b_fit, a_fit), *_ = np.linalg.lstsq(design, g2, rcond=None)
    res = float(np.max(np.abs(b_fit * g1 + a_fit - g2)))
    return ScanReport(0, None, {"b": float(b_fit), "a": float(a_fit)}, res, len(trajs))


def trajectory_returns(reward, gamma: float, trajs: list[Trajectory]) -> np.ndarray:
    return np.array([trajectory_return(reward, gamma, t) for t in trajs])
