"""Occupancy embeddings of policies and trajectories.

Pair ``(s, a)`` is stored at flat index ``s * n_actions + a``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvariantError
from .mdp import (
    MOMDP,
    TabularMDP,
    Trajectory,
    check_policy,
    deterministic_policies,
    random_policies,
    state_visits,
)
from .seeding import stream

MASS_TOL = 1e-8
HULL_CUTOFF = 1e-9


def pair_index(s: int, a: int, n_actions: int) -> int:
    return s * n_actions + a


def index_pair(i: int, n_actions: int) -> tuple[int, int]:
    return divmod(i, n_actions)


@dataclass(frozen=True)
class OccupancyVector:
    mass: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        if m.shape != (self.n_states * self.n_actions,):
            raise DimensionError(f"mass has shape {m.shape}, expected ({self.n_states * self.n_actions},)")
        if np.any(m < -1e-12):
            raise InvariantError("occupancy mass must be non-negative")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    def table(self) -> np.ndarray:
        return self.mass.reshape(self.n_states, self.n_actions)

    def total(self) -> float:
        return float(self.mass.sum())

    def to_csv(self, state_names=None, action_names=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "state", "action", "mass"])
        for i, v in enumerate(self.mass):
            s, a = index_pair(i, self.n_actions)
            w.writerow([i, state_names[s] if state_names else s,
                        action_names[a] if action_names else a, repr(float(v))])
        return buf.getvalue()


def vectorize(reward) -> np.ndarray:
    """Flat view ``R[s * |A| + a]`` of a reward table."""
    return np.asarray(reward, dtype=float).reshape(-1)


def reward_matrix(momdp: MOMDP) -> np.ndarray:
    """The k x n matrix whose rows are the vectorized reward tables."""
    return momdp.rewards.reshape(momdp.k, -1)


def embed_policies(mdp: TabularMDP, policies) -> np.ndarray:
    """Occupancy vectors of a batch of policies, shape (N, n)."""
    pis = np.asarray(policies, dtype=float)
    single = pis.ndim == 2
    if single:
        pis = pis[None]
    d = state_visits(mdp, pis)
    m = (d[:, :, None] * pis).reshape(pis.shape[0], -1)
    m = np.maximum(m, 0.0)
    return m[0] if single else m


def embed_policy(mdp: TabularMDP, policy) -> OccupancyVector:
    pi = check_policy(mdp, policy)
    return OccupancyVector(embed_policies(mdp, pi), mdp.n_states, mdp.n_actions)


def trajectory_mass(traj: Trajectory, gamma: float, n_states: int, n_actions: int) -> np.ndarray:
    traj.check_indices(n_states, n_actions)
    m = np.zeros(n_states * n_actions)
    idx = np.array([pair_index(s, a, n_actions) for s, a in traj.steps])
    disc = gamma ** np.arange(len(idx))
    if traj.tail == "zero":
        np.add.at(m, idx, disc)
        return m
    start = traj.cycle_start
    np.add.at(m, idx[:start], disc[:start])
    period = len(idx) - start
    np.add.at(m, idx[start:], disc[start:] / (1.0 - gamma**period))
    return m


def embed_trajectory(traj: Trajectory, gamma: float, n_states: int, n_actions: int) -> OccupancyVector:
    """Discounted visit counts of a trajectory, with its tail summed in closed form."""
    return OccupancyVector(trajectory_mass(traj, gamma, n_states, n_actions), n_states, n_actions)


@dataclass(frozen=True)
class AffineHull:
    base_point: np.ndarray
    basis: np.ndarray  # rows are orthonormal directions
    dim: int

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the hull."""
        p = np.atleast_2d(np.asarray(points, dtype=float)) - self.base_point
        if self.dim:
            p = p - (p @ self.basis.T) @ self.basis
        return np.linalg.norm(p, axis=1)

    def contains(self, points, tol: float = MASS_TOL) -> np.ndarray:
        return self.distance(points) <= tol


def hull_from_points(points: np.ndarray, cutoff: float = HULL_CUTOFF) -> AffineHull:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    base = pts[0].copy()
    diffs = pts[1:] - base
    if diffs.shape[0] == 0:
        return AffineHull(base, np.zeros((0, pts.shape[1])), 0)
    _, sv, vt = np.linalg.svd(diffs, full_matrices=False)
    scale = max(1.0, sv[0]) if sv.size else 1.0
    rank = int(np.sum(sv > cutoff * scale))
    return AffineHull(base, vt[:rank], rank)


def affine_hull_of_policies(mdp: TabularMDP, sample_count: int, seed: int = 0) -> AffineHull:
    """Affine hull of the occupancy image, from deterministic vertices plus random policies."""
    if sample_count < 1:
        raise InvariantError("sample_count must be at least 1")
    det = deterministic_policies(mdp.n_states, mdp.n_actions)
    rnd = random_policies(stream(seed, "occupancy.hull"), sample_count, mdp.n_states, mdp.n_actions)
    pts = embed_policies(mdp, np.concatenate([det, rnd]))
    return hull_from_points(pts)


def policy_from_occupancy(mass, n_states: int, n_actions: int) -> np.ndarray:
    """Policy whose occupancy is ``mass`` when ``mass`` is realizable.

    States with zero mass get the uniform distribution.
    """
    x = np.maximum(np.asarray(mass, dtype=float).reshape(n_states, n_actions), 0.0)
    tot = x.sum(axis=1, keepdims=True)
    uniform = np.full_like(x, 1.0 / n_actions)
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(tot > 1e-300, x / safe, uniform)


def flow_residual(mdp: TabularMDP, mass) -> float:
    """Max violation of the discounted flow equations for a candidate occupancy."""
    x = np.asarray(mass, dtype=float).reshape(mdp.n_states, mdp.n_actions)
    inflow = mdp.initial + mdp.gamma * np.einsum("sa,sat->t", x, mdp.transition)
    return float(np.max(np.abs(x.sum(axis=1) - inflow)))


def realizable(mdp: TabularMDP, mass, tol: float = 1e-9) -> bool:
    """True when ``mass`` is non-negative and satisfies the flow equations."""
    x = np.asarray(mass, dtype=float)
    if np.any(x < -tol):
        return False
    pi = policy_from_occupancy(x, mdp.n_states, mdp.n_actions)
    back = embed_policies(mdp, pi)
    return flow_residual(mdp, x) <= tol and float(np.max(np.abs(back - x))) <= max(tol, 1e-9)
