"""Margin linear programs, dual certificates and greedy witness minimisation.

The primal question throughout the package is whether some unknown vector ``w``
with ``|w|_inf <= 1`` satisfies ``a . w > 0`` for every strict row and
``e . w = 0`` for every equality row. Strictness is measured by the largest
achievable margin ``t`` in ``a_hat . w >= t`` over unit-normalised rows, and
equalities are relaxed to ``|e_hat . w| <= eq_tol``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import SolverError

STRICT_MARGIN = 1e-7
EQ_TOL = 1e-9
ROW_FLOOR = 1e-12
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def normalize_rows(rows: np.ndarray, floor: float = ROW_FLOOR):
    """Unit-normalise rows; returns the kept rows and their original indices."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        return rows.reshape(0, rows.shape[-1] if rows.ndim == 2 else 0), np.zeros(0, dtype=int)
    norms = np.linalg.norm(rows, axis=1)
    keep = np.flatnonzero(norms > floor)
    return rows[keep] / norms[keep, None], keep


@dataclass(frozen=True)
class MarginResult:
    margin: float
    w: np.ndarray

    @property
    def strict(self) -> bool:
        return self.margin > STRICT_MARGIN


def _as_rows(rows, dim: int) -> np.ndarray:
    a = np.asarray(rows, dtype=float)
    return a.reshape(-1, dim) if a.size else np.zeros((0, dim))


def max_margin(strict_rows, eq_rows, dim: int, eq_tol: float = EQ_TOL,
               bound: float = 1.0) -> MarginResult:
    """Maximise ``t`` subject to ``a_hat . w >= t``, ``|e_hat . w| <= eq_tol``, ``|w| <= bound``.

    Rows must already be normalised. ``t`` is capped at 1 so the problem is
    bounded even with no strict rows.
    """
    a = _as_rows(strict_rows, dim)
    e = _as_rows(eq_rows, dim)
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    ub_rows = [np.hstack([-a, np.ones((a.shape[0], 1))])]
    ub_rhs = [np.zeros(a.shape[0])]
    if e.shape[0]:
        ub_rows += [np.hstack([e, np.zeros((e.shape[0], 1))]), np.hstack([-e, np.zeros((e.shape[0], 1))])]
        ub_rhs += [np.full(e.shape[0], eq_tol)] * 2
    a_ub = np.vstack(ub_rows)
    b_ub = np.concatenate(ub_rhs)
    bounds = [(-bound, bound)] * dim + [(None, 1.0)]
    res = linprog(c, A_ub=a_ub if a_ub.shape[0] else None, b_ub=b_ub if a_ub.shape[0] else None,
                  bounds=bounds, method="highs", options=_HIGHS)
    if res.status != 0:
        raise SolverError(f"margin LP failed: {res.message}")
    return MarginResult(float(-res.fun), np.asarray(res.x[:dim]))


@dataclass(frozen=True)
class Certificate:
    """Dual multipliers bounding the achievable margin.

    For any ``w`` with ``|w| <= 1`` and ``|E w| <= eq_tol`` the margin satisfies
    ``t <= |A^T y + E^T z|_1 + eq_tol * |z|_1 = bound``.
    """

    y: np.ndarray
    z: np.ndarray
    bound: float


def certificate_bound(strict_rows, eq_rows, y, z, dim: int, eq_tol: float = EQ_TOL) -> float:
    a = _as_rows(strict_rows, dim)
    e = _as_rows(eq_rows, dim)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(y < -1e-12) or abs(y.sum() - 1.0) > 1e-9:
        return float("inf")
    comb = a.T @ y + (e.T @ z if e.shape[0] else 0.0)
    return float(np.abs(comb).sum() + eq_tol * np.abs(z).sum())


def dual_certificate(strict_rows, eq_rows, dim: int, eq_tol: float = EQ_TOL) -> Certificate:
    """Multipliers minimising the margin bound (the LP dual of :func:`max_margin`)."""
    a = _as_rows(strict_rows, dim)
    e = _as_rows(eq_rows, dim)
    ms, me = a.shape[0], e.shape[0]
    if ms == 0:
        return Certificate(np.zeros(0), np.zeros(me), float("inf"))
    # variables: y (ms), z+ (me), z- (me), s (dim)
    nv = ms + 2 * me + dim
    c = np.concatenate([np.zeros(ms), np.full(2 * me, eq_tol), np.ones(dim)])
    comb = np.hstack([a.T, e.T, -e.T]) if me else a.T
    eye = np.eye(dim)
    a_ub = np.vstack([np.hstack([comb, -eye]), np.hstack([-comb, -eye])])
    b_ub = np.zeros(2 * dim)
    a_eq = np.concatenate([np.ones(ms), np.zeros(2 * me + dim)])[None]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=[(0, None)] * nv,
                  method="highs", options=_HIGHS)
    if res.status != 0:
        raise SolverError(f"certificate LP failed: {res.message}")
    y = np.maximum(res.x[:ms], 0.0)
    y = y / y.sum()
    z = res.x[ms:ms + me] - res.x[ms + me:ms + 2 * me]
    return Certificate(y, z, certificate_bound(a, e, y, z, dim, eq_tol))


def greedy_irreducible(n_rows: int, infeasible: Callable[[np.ndarray], bool],
                       start: Sequence[int] | None = None,
                       order: Sequence[int] | None = None) -> list[int]:
    """Shrink an infeasible row subset by deleting rows one at a time.

    ``infeasible(mask)`` reports whether the rows selected by a boolean mask are
    still jointly infeasible. Rows are tried for deletion in ``order``; a row is
    dropped whenever the remainder stays infeasible. The result is irreducible
    with respect to single deletions.
    """
    keep = np.zeros(n_rows, dtype=bool)
    keep[list(range(n_rows)) if start is None else list(start)] = True
    if not infeasible(keep):
        raise SolverError("greedy deletion needs an infeasible starting subset")
    candidates = list(order) if order is not None else list(np.flatnonzero(keep))
    for i in candidates:
        if not keep[i]:
            continue
        keep[i] = False
        if not infeasible(keep):
            keep[i] = True
    return [int(i) for i in np.flatnonzero(keep)]


def chebyshev_fit(design: np.ndarray, target: np.ndarray):
    """Minimise ``max_i |design_i . x - target_i|`` by linear programming.

    Returns (x, max violation).
    """
    a = np.asarray(design, dtype=float)
    b = np.asarray(target, dtype=float)
    m, n = a.shape
    c = np.zeros(n + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    a_ub = np.vstack([np.hstack([a, -ones]), np.hstack([-a, -ones])])
    b_ub = np.concatenate([b, -b])
    bounds = [(None, None)] * n + [(0, None)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs", options=_HIGHS)
    if res.status != 0:
        raise SolverError(f"Chebyshev fit failed: {res.message}")
    x = res.x[:n]
    return x, float(np.max(np.abs(a @ x - b)))
