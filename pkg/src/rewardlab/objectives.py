"""Multi-objective orderings over policies and their scalar utility forms."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DimensionError, InvariantError

TIE_TOL = 1e-9

KINDS = ("LexMax", "MaxMin", "MaxMax", "MaxSat", "ConSat",
         "SoftMaxMax", "SoftMaxMin", "SoftMaxSat", "LinearWeights")
SOFT_KINDS = ("SoftMaxMax", "SoftMaxMin", "SoftMaxSat")
DIFFERENTIABLE = SOFT_KINDS + ("LinearWeights",)
UTILITY_KINDS = DIFFERENTIABLE + ("MaxMin", "MaxMax", "MaxSat")


class Order(enum.IntEnum):
    LESS = -1
    EQUAL = 0
    GREATER = 1

    def reverse(self) -> "Order":
        return Order(-int(self))


@dataclass(frozen=True)
class ObjectiveSpec:
    """An objective kind together with the parameters it needs.

    ``thresholds`` holds c_1..c_k for the (soft) MaxSat kinds, ``c`` the scalar
    constraint level for ConSat, ``alpha`` the sharpness of the soft kinds and
    ``weights`` the linear weights.
    """

    kind: str
    thresholds: tuple[float, ...] | None = None
    c: float | None = None
    alpha: float | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvariantError(f"unknown objective kind {self.kind!r}")
        if self.thresholds is not None:
            object.__setattr__(self, "thresholds", tuple(float(x) for x in self.thresholds))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        if self.kind in ("MaxSat", "SoftMaxSat") and not self.thresholds:
            raise InvariantError(f"{self.kind} needs thresholds")
        if self.kind == "ConSat":
            if self.c is None:
                raise InvariantError("ConSat needs a constraint level c")
            object.__setattr__(self, "c", float(self.c))
        if self.kind in SOFT_KINDS:
            if self.alpha is None:
                raise InvariantError(f"{self.kind} needs a sharpness alpha")
            # alpha = 0 is accepted as the continuity limit (plain mean / flat 0.5)
            if not np.isfinite(self.alpha) or self.alpha < 0:
                raise InvariantError(f"alpha must be a finite non-negative number, got {self.alpha}")
            object.__setattr__(self, "alpha", float(self.alpha))
        if self.kind == "LinearWeights" and not self.weights:
            raise InvariantError("LinearWeights needs weights")

    def check_k(self, k: int) -> None:
        if self.kind in ("MaxSat", "SoftMaxSat") and len(self.thresholds) != k:
            raise DimensionError(f"{self.kind} has {len(self.thresholds)} thresholds for {k} rewards")
        if self.kind == "LinearWeights" and len(self.weights) != k:
            raise DimensionError(f"{len(self.weights)} weights for {k} rewards")
        if self.kind == "ConSat" and k != 2:
            raise DimensionError(f"ConSat is defined for exactly two rewards, got {k}")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.thresholds is not None:
            out["thresholds"] = list(self.thresholds)
        if self.c is not None:
            out["c"] = self.c
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "ObjectiveSpec":
        return cls(kind=data["kind"], thresholds=data.get("thresholds"), c=data.get("c"),
                   alpha=data.get("alpha"), weights=data.get("weights"))


def _jvec(spec: ObjectiveSpec, j) -> np.ndarray:
    v = np.asarray(j, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise InvariantError("J-vector has non-finite entries")
    spec.check_k(v.size)
    return v


def _cmp(x: float, y: float, tol: float = TIE_TOL) -> Order:
    if x < y - tol:
        return Order.LESS
    if x > y + tol:
        return Order.GREATER
    return Order.EQUAL


def satisfied_count(thresholds, j, tol: float = TIE_TOL) -> int:
    return int(np.sum(np.asarray(j) >= np.asarray(thresholds) - tol))


def compare(spec: ObjectiveSpec, j1, j2) -> Order:
    """Order of the policy with J-vector ``j1`` relative to the one with ``j2``."""
    a = _jvec(spec, j1)
    b = _jvec(spec, j2)
    if a.size != b.size:
        raise DimensionError("J-vectors have different lengths")
    kind = spec.kind
    if kind == "LexMax":
        for x, y in zip(a, b):
            o = _cmp(x, y)
            if o is not Order.EQUAL:
                return o
        return Order.EQUAL
    if kind == "MaxMin":
        return _cmp(a.min(), b.min())
    if kind == "MaxMax":
        return _cmp(a.max(), b.max())
    if kind == "MaxSat":
        # more satisfied thresholds is better, matching the count utility
        na, nb = satisfied_count(spec.thresholds, a), satisfied_count(spec.thresholds, b)
        return Order((na > nb) - (na < nb))
    if kind == "ConSat":
        sa = a[0] >= spec.c - TIE_TOL
        sb = b[0] >= spec.c - TIE_TOL
        if sa and sb:
            return _cmp(a[1], b[1])
        if sa != sb:
            return Order.GREATER if sa else Order.LESS
        return _cmp(a[0], b[0])
    return _cmp(utility(spec, a), utility(spec, b))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def utility(spec: ObjectiveSpec, j) -> float:
    """Scalar representation U(j) of the kinds that have a parameter-free one."""
    v = _jvec(spec, j)
    kind = spec.kind
    if kind not in UTILITY_KINDS:
        raise InvariantError(f"{kind} has no environment-independent scalar utility")
    if kind == "SoftMaxMax":
        return float(_softmax(spec.alpha * v) @ v)
    if kind == "SoftMaxMin":
        return float(_softmax(-spec.alpha * v) @ v)
    if kind == "SoftMaxSat":
        return float(_sigmoid(spec.alpha * (v - np.asarray(spec.thresholds))).sum())
    if kind == "LinearWeights":
        return float(np.asarray(spec.weights) @ v)
    if kind == "MaxMin":
        return float(v.min())
    if kind == "MaxMax":
        return float(v.max())
    return float(satisfied_count(spec.thresholds, v))


def utility_gradient(spec: ObjectiveSpec, j) -> np.ndarray:
    """Closed-form dU/dJ_i for the differentiable kinds."""
    v = _jvec(spec, j)
    kind = spec.kind
    if kind not in DIFFERENTIABLE:
        raise InvariantError(f"{kind} is not differentiable")
    if kind == "LinearWeights":
        return np.asarray(spec.weights, dtype=float).copy()
    a = spec.alpha
    if kind == "SoftMaxSat":
        s = _sigmoid(a * (v - np.asarray(spec.thresholds)))
        return a * s * (1.0 - s)
    sign = 1.0 if kind == "SoftMaxMax" else -1.0
    p = _softmax(sign * a * v)
    u = float(p @ v)
    return p * (1.0 + sign * a * (v - u))
