"""Linear-scalarization oracle for multi-objective orderings.

Given a MOMDP and an objective, either find weights ``w`` such that ordering
policies by ``w . J`` reproduces the objective on a policy sample, or return a
finite set of policy pairs whose required ordering no weight vector can
reproduce, together with a dual certificate for that subsystem.

Scalarizable verdicts are relative to the sample. Unscalarizable verdicts are
sound for the full policy set: a finite contradictory subset rules out every
linear weighting.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvariantError
from .lp import (
    EQ_TOL,
    STRICT_MARGIN,
    Certificate,
    certificate_bound,
    dual_certificate,
    greedy_irreducible,
    max_margin,
)
from .mdp import MOMDP, batch_j, deterministic_count, evaluate_policy, iter_deterministic, random_policies, relation_from_values, Relation
from .objectives import TIE_TOL, ObjectiveSpec, Order, compare, satisfied_count
from .occupancy import embed_policies, policy_from_occupancy
from .seeding import stream

NUDGE = 2e-9
DEGENERATE_KINDS = ("LexMax", "MaxMin", "MaxSat", "ConSat")
STRUCTURED_ORIGINS = ("deterministic", "mixture", "probe")


@dataclass(frozen=True)
class PolicySample:
    policies: np.ndarray  # (N, S, A)
    j: np.ndarray  # (N, k)
    origins: tuple[str, ...]

    def __len__(self) -> int:
        return self.policies.shape[0]

    def merge(self, other: "PolicySample") -> "PolicySample":
        return PolicySample(np.concatenate([self.policies, other.policies]),
                            np.concatenate([self.j, other.j]), self.origins + other.origins)

    def subset(self, idx) -> "PolicySample":
        idx = np.asarray(idx, dtype=int)
        return PolicySample(self.policies[idx], self.j[idx], tuple(self.origins[i] for i in idx))


def make_sample(momdp: MOMDP, policies, origin: str | tuple[str, ...]) -> PolicySample:
    pis = np.asarray(policies, dtype=float).reshape(-1, momdp.skeleton.n_states, momdp.skeleton.n_actions)
    j = batch_j(momdp.skeleton, momdp.rewards, pis)
    origins = (origin,) * len(pis) if isinstance(origin, str) else tuple(origin)
    return PolicySample(pis, j, origins)


def sample_policies(momdp: MOMDP, budget: int, seed: int) -> PolicySample:
    """Deterministic policies, 50/50 mixtures of them, then random stochastic fill.

    All deterministic policies are included when they fit in the budget;
    otherwise a seeded random half-budget of them. Mixtures are capped at half of
    the remaining budget.
    """
    if budget < 1:
        raise InvariantError("budget must be at least 1")
    mdp = momdp.skeleton
    s, a = mdp.n_states, mdp.n_actions
    total = deterministic_count(s, a)
    if total <= budget:
        det = np.concatenate(list(iter_deterministic(s, a)))
    else:
        rng = stream(seed, "scalarize.deterministic")
        n = max(1, budget // 2)
        acts = np.unique(rng.integers(0, a, size=(4 * n, s)), axis=0)
        acts = acts[rng.permutation(len(acts))[:n]]
        det = np.eye(a)[acts]
    d = len(det)
    n_mix = min(math.comb(d, 2), max(0, (budget - d) // 2))
    pairs = list(itertools.combinations(range(d), 2))
    if n_mix < len(pairs):
        rng = stream(seed, "scalarize.mixtures")
        chosen = sorted(rng.choice(len(pairs), size=n_mix, replace=False).tolist())
        pairs = [pairs[i] for i in chosen]
    mix = np.array([0.5 * (det[i] + det[j]) for i, j in pairs]).reshape(-1, s, a)
    n_rand = max(0, budget - d - len(mix))
    rnd = random_policies(stream(seed, "scalarize.random"), n_rand, s, a)
    pis = np.concatenate([det, mix, rnd])
    origins = ("deterministic",) * d + ("mixture",) * len(mix) + ("random",) * n_rand
    return make_sample(momdp, pis, origins)


# ---------------------------------------------------------------- ordering

def order_classes(spec: ObjectiveSpec, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort sample indices by the objective and group ties.

    Returns (order, labels) where ``labels[i]`` is the rank of the tie class of
    sample ``i`` (0 = worst).
    """
    n = len(j)
    key = functools.cmp_to_key(lambda x, y: int(compare(spec, j[x], j[y])))
    order = np.array(sorted(range(n), key=key), dtype=int)
    labels = np.empty(n, dtype=int)
    cls = 0
    for pos, idx in enumerate(order):
        if pos and compare(spec, j[order[pos - 1]], j[idx]) is Order.LESS:
            cls += 1
        labels[idx] = cls
    return order, labels


@dataclass(frozen=True)
class Link:
    lo: int
    hi: int
    strict: bool

    @property
    def relation(self) -> str:
        return "Less" if self.strict else "Equal"


def chain_links(spec: ObjectiveSpec, j: np.ndarray) -> list[Link]:
    """Constraint chain equivalent to all pairwise orderings of the sample.

    Consecutive members of a tie class are linked by equalities and the last
    member of each class is linked strictly to the first member of the next.
    Equalities between J-vectors that already agree within tolerance are dropped.
    """
    order, labels = order_classes(spec, j)
    links = []
    for a, b in zip(order[:-1], order[1:]):
        if labels[b] > labels[a]:
            links.append(Link(int(a), int(b), True))
        elif np.linalg.norm(j[b] - j[a]) > TIE_TOL:
            links.append(Link(int(a), int(b), False))
    return links


def _link_rows(j: np.ndarray, links: list[Link]):
    k = j.shape[1]
    rows = np.array([j[l.hi] - j[l.lo] for l in links]).reshape(-1, k)
    norms = np.linalg.norm(rows, axis=1) if len(rows) else np.zeros(0)
    strict = np.array([l.strict for l in links], dtype=bool)
    keep = (norms > 1e-12) | ~strict
    keep &= norms > 0
    unit = np.zeros_like(rows)
    unit[keep] = rows[keep] / norms[keep, None]
    return unit, strict, keep


def solve_links(j: np.ndarray, links: list[Link], mask=None):
    k = j.shape[1]
    unit, strict, keep = _link_rows(j, links)
    if mask is not None:
        keep = keep & mask
    return max_margin(unit[keep & strict], unit[keep & ~strict], k)


def disagreements(spec: ObjectiveSpec, j: np.ndarray, w, eq_tol: float = 1e-8) -> list[tuple[int, int]]:
    """Pairs (a, b) where ordering by ``w . J`` contradicts the objective.

    ``a`` is never preferred to ``b`` by the objective in a returned pair.
    """
    if len(j) < 2:
        return []
    _, labels = order_classes(spec, j)
    u = j @ np.asarray(w, dtype=float)
    du = u[None, :] - u[:, None]
    dn = np.linalg.norm(j[None, :, :] - j[:, None, :], axis=2)
    lower = labels[:, None] < labels[None, :]
    same = labels[:, None] == labels[None, :]
    bad = (lower & (du <= 0)) | (same & (np.abs(du) > eq_tol * (1.0 + dn)))
    bad &= lower | np.triu(np.ones_like(same), 1).astype(bool)
    return [(int(a), int(b)) for a, b in zip(*np.nonzero(bad))]


# ---------------------------------------------------------------- degeneracy

@dataclass(frozen=True)
class DegenerateCase:
    tag: str
    weights: tuple[float, ...]
    note: str = ""


def detect_degenerate(momdp: MOMDP, spec: ObjectiveSpec, sample: PolicySample) -> DegenerateCase | None:
    """Match the sample against the exceptional cases where an objective collapses.

    Returns the case with the weights of the single-reward problem it reduces
    to, or None. Reward indices in tags are 0-based.
    """
    if spec.kind not in DEGENERATE_KINDS:
        return None
    k = momdp.k
    spec.check_k(k)
    j = sample.j
    tol = TIE_TOL
    unit = lambda i: tuple(float(i == x) for x in range(k))
    if spec.kind == "MaxMin":
        low = j.min(axis=1)
        for i in range(k):
            if np.all(j[:, i] <= low + tol):
                return DegenerateCase(f"maxmin-dominated-reward-{i}", unit(i),
                                      f"reward {i} is never above any other reward")
        return None
    if spec.kind == "MaxSat":
        c = np.asarray(spec.thresholds)
        sat = j >= c - tol
        crossing = [i for i in range(k) if sat[:, i].any() and not sat[:, i].all()]
        if not crossing:
            return DegenerateCase("maxsat-constant-count", (0.0,) * k,
                                  "no reward crosses its threshold, so every policy ties")
        return None
    if spec.kind == "ConSat":
        sat = j[:, 0] >= spec.c - tol
        if not sat.any():
            return DegenerateCase("consat-none-satisfy", (1.0, 0.0),
                                  "no policy meets the constraint; the ordering is by the first reward")
        if sat.all():
            return DegenerateCase("consat-all-satisfy", (0.0, 1.0),
                                  "every policy meets the constraint; the ordering is by the second reward. "
                                  "The two-condition form of the hypothesis (without the all-satisfy clause) "
                                  "would not classify this instance as degenerate")
        if relation_from_values(j[:, 0], j[:, 1]) is Relation.EQUIVALENT:
            return DegenerateCase("consat-equivalent-rewards", (1.0, 0.0),
                                  "the two rewards induce the same ordering")
        return None
    # LexMax
    nontrivial = [i for i in range(k) if np.ptp(j[:, i]) > tol]
    if not nontrivial:
        return DegenerateCase("lexmax-all-trivial", (0.0,) * k, "every reward is constant on the sample")
    lead = nontrivial[0]
    rel = [relation_from_values(j[:, lead], j[:, o]) for o in nontrivial[1:]]
    if all(r in (Relation.EQUIVALENT, Relation.OPPOSITE) for r in rel):
        return DegenerateCase(f"lexmax-single-effective-reward-{lead}", unit(lead),
                              f"only reward {lead} affects the ordering")
    return None


# ---------------------------------------------------------------- probes

def _pick_endpoints(j: np.ndarray, idx: np.ndarray, g: np.ndarray, rng, cap: int = 24) -> np.ndarray:
    if len(idx) <= cap:
        return idx
    pts = j[idx]
    chosen: list[int] = []
    dirs = [g, -g] + [e for i in range(j.shape[1]) for e in (np.eye(j.shape[1])[i], -np.eye(j.shape[1])[i])]
    perp = pts - np.outer(pts @ g, g) / max(g @ g, 1e-300)
    if np.ptp(perp, axis=0).max() > 0:
        _, _, vt = np.linalg.svd(perp - perp.mean(axis=0), full_matrices=False)
        dirs += [vt[0], -vt[0]]
    for d in dirs:
        chosen.append(int(idx[np.argmax(pts @ d)]))
    rest = np.setdiff1d(idx, chosen)
    extra = rng.choice(rest, size=min(len(rest), cap - len(set(chosen))), replace=False)
    return np.unique(np.concatenate([np.array(chosen, dtype=int), extra.astype(int)]))


def level_probes(occ: np.ndarray, j: np.ndarray, g, mask, rng, levels: int = 5,
                 nudge: float = 0.0) -> list[np.ndarray]:
    """Occupancy vectors on level sets of the linear key ``g . J``.

    For each level, segments between sample points of the (convex) region
    ``mask`` are cut where the key equals the level. The two cut points spread
    furthest apart across the level set are returned; with ``nudge > 0`` the
    same segments are also cut at ``level + nudge`` and ``level - nudge``.
    Mixtures of occupancy vectors are occupancy vectors, so every output is
    realised by some stationary policy.
    """
    g = np.asarray(g, dtype=float)
    idx = np.flatnonzero(mask)
    if len(idx) < 2 or np.linalg.norm(g) == 0:
        return []
    ends = _pick_endpoints(j, idx, g, rng)
    u = j[ends] @ g
    lo, hi = u.min(), u.max()
    if hi - lo <= 10 * max(nudge, TIE_TOL):
        return []
    pa, pb = np.triu_indices(len(ends), 1)
    swap = u[pa] > u[pb]
    pa, pb = np.where(swap, pb, pa), np.where(swap, pa, pb)
    out = []
    span = hi - lo
    for q in np.arange(1, levels + 1) / (levels + 1):
        level = lo + q * span
        cut = (u[pa] < level - 2 * nudge) & (u[pb] > level + 2 * nudge)
        if cut.sum() < 2:
            continue
        ca, cb = pa[cut], pb[cut]
        lam = (level - u[ca]) / (u[cb] - u[ca])
        jp = j[ends[ca]] + lam[:, None] * (j[ends[cb]] - j[ends[ca]])
        perp = jp - np.outer(jp @ g, g) / (g @ g)
        centred = perp - perp.mean(axis=0)
        if np.abs(centred).max() <= 1e-9:
            continue
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        score = centred @ vt[0]
        picks = [int(np.argmin(score)), int(np.argmax(score))]
        for p in picks:
            a, b = ends[ca[p]], ends[cb[p]]
            for shift in ((0.0, nudge, -nudge) if nudge > 0 else (0.0,)):
                t = (level + shift - u[ca[p]]) / (u[cb[p]] - u[ca[p]])
                out.append((1 - t) * occ[a] + t * occ[b])
    return out


def _probe_plan(spec: ObjectiveSpec, j: np.ndarray):
    """(key, region mask, nudge) triples for the objective."""
    k = j.shape[1]
    eye = np.eye(k)
    kind = spec.kind
    if kind == "LinearWeights":
        return [(np.asarray(spec.weights), np.ones(len(j), bool), 0.0)]
    if kind == "MaxMin":
        low = j.min(axis=1, keepdims=True)
        return [(eye[i], j[:, i] <= low[:, 0], 0.0) for i in range(k)]
    if kind == "MaxMax":
        high = j.max(axis=1, keepdims=True)
        return [(eye[i], j[:, i] >= high[:, 0], 0.0) for i in range(k)]
    if kind == "ConSat":
        below = j[:, 0] < spec.c - TIE_TOL
        above = j[:, 0] >= spec.c + TIE_TOL
        return [(eye[0], below, 0.0), (eye[1], above, 0.0)]
    if kind == "LexMax":
        for i in range(k):
            if np.ptp(j[:, i]) > TIE_TOL:
                return [(eye[i], np.ones(len(j), bool), NUDGE)]
        return []
    return []


def augment_sample(momdp: MOMDP, spec: ObjectiveSpec, sample: PolicySample, seed: int) -> PolicySample:
    """Append objective-aware probe policies built by occupancy interpolation.

    The probes place policies on level sets that the objective treats in a
    specific way: ties that pin the direction of a linear weighting, or (for
    lexicographic orderings) exact ties on the leading reward flanked by
    policies a hair above and below it.
    """
    if len(sample) < 2:
        return sample
    mdp = momdp.skeleton
    occ = embed_policies(mdp, sample.policies)
    rng = stream(seed, "scalarize.probes")
    masses = []
    for g, mask, nudge in _probe_plan(spec, sample.j):
        masses += level_probes(occ, sample.j, g, mask, rng, levels=9 if nudge else 5, nudge=nudge)
    if not masses:
        return sample
    pis = np.array([policy_from_occupancy(m, mdp.n_states, mdp.n_actions) for m in masses])
    return sample.merge(make_sample(momdp, pis, "probe"))


# ---------------------------------------------------------------- verdicts

@dataclass(frozen=True)
class Witness:
    policies: np.ndarray
    j: np.ndarray
    links: tuple[Link, ...]
    certificate: Certificate

    def rows(self):
        unit, strict, keep = _link_rows(self.j, list(self.links))
        return unit[keep & strict], unit[keep & ~strict]

    def to_json(self) -> list[dict[str, Any]]:
        return [{"lower": self.policies[l.lo].tolist(), "upper": self.policies[l.hi].tolist(),
                 "j_lower": self.j[l.lo].tolist(), "j_upper": self.j[l.hi].tolist(),
                 "relation": l.relation} for l in self.links]


@dataclass(frozen=True)
class ScalarizationVerdict:
    outcome: str  # "Scalarizable" or "Unscalarizable"
    margin: float
    weights: np.ndarray | None = None
    witness: Witness | None = None
    degenerate: DegenerateCase | None = None
    sample_size: int = 0
    budget: int = 0

    @property
    def scalarizable(self) -> bool:
        return self.outcome == "Scalarizable"

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"outcome": self.outcome, "margin": float(self.margin),
                               "sample_size": self.sample_size,
                               "sample_relative": self.scalarizable}
        if self.weights is not None:
            out["weights"] = [float(x) for x in self.weights]
        if self.degenerate is not None:
            out["degenerate_tag"] = self.degenerate.tag
            out["degenerate_note"] = self.degenerate.note
        if self.witness is not None:
            out["witness_pairs"] = self.witness.to_json()
            out["certificate_bound"] = float(self.witness.certificate.bound)
        return out


def normalize_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    m = np.abs(w).max() if w.size else 0.0
    return w / m if m > 0 else w.copy()


def _witness_from(sample: PolicySample, idx: np.ndarray, spec: ObjectiveSpec) -> Witness | None:
    """Irreducible infeasible link subset among the sample indices ``idx`` (None if feasible)."""
    j = sample.j[idx]
    links = chain_links(spec, j)
    if not links:
        return None
    unit, strict, keep = _link_rows(j, links)
    if solve_links(j, links).strict:
        return None
    cert = dual_certificate(unit[keep & strict], unit[keep & ~strict], j.shape[1])
    rows = np.flatnonzero(keep)
    ys = np.zeros(len(links))
    ys[np.flatnonzero(keep & strict)] = cert.y
    ys[np.flatnonzero(keep & ~strict)] = np.abs(cert.z)
    support = [int(r) for r in rows if ys[r] > 1e-12]
    if not any(links[r].strict for r in support):
        support = [int(r) for r in rows]
    # delete links touching late (random, high-index) policies first
    order = sorted(support, key=lambda r: -max(links[r].lo, links[r].hi))

    def infeasible(mask: np.ndarray) -> bool:
        return not solve_links(j, links, mask).strict

    kept = greedy_irreducible(len(links), infeasible, start=support, order=order)
    used = sorted({p for r in kept for p in (links[r].lo, links[r].hi)})
    remap = {p: n for n, p in enumerate(used)}
    wj = j[used]
    wlinks = tuple(Link(remap[links[r].lo], remap[links[r].hi], links[r].strict) for r in kept)
    wu, ws, wk = _link_rows(wj, list(wlinks))
    wcert = dual_certificate(wu[wk & ws], wu[wk & ~ws], wj.shape[1])
    return Witness(sample.policies[idx][used], wj, wlinks, wcert)


def fit_weights(momdp: MOMDP, spec: ObjectiveSpec, sample: PolicySample, seed: int = 0,
                augment: bool = True, budget: int | None = None) -> ScalarizationVerdict:
    """Decide linear scalarizability of ``spec`` on the sample (plus probes)."""
    if len(sample) == 0:
        raise InvariantError("policy sample is empty")
    spec.check_k(momdp.k)
    budget = len(sample) if budget is None else budget
    full = augment_sample(momdp, spec, sample, seed) if augment else sample
    case = detect_degenerate(momdp, spec, sample)
    if case is not None and not disagreements(spec, full.j, case.weights):
        links = chain_links(spec, full.j)
        unit, strict, keep = _link_rows(full.j, links)
        rows = unit[keep & strict]
        w = np.asarray(case.weights)
        margin = float((rows @ w).min()) if len(rows) else 1.0
        return ScalarizationVerdict("Scalarizable", margin, w, None, case, len(full), budget)
    links = chain_links(spec, full.j)
    res = solve_links(full.j, links)
    if res.strict:
        return ScalarizationVerdict("Scalarizable", res.margin, normalize_weights(res.w), None, None,
                                    len(full), budget)
    structured = np.array([i for i, o in enumerate(full.origins) if o in STRUCTURED_ORIGINS], dtype=int)
    witness = None
    if 2 <= len(structured) < len(full):
        witness = _witness_from(full, structured, spec)
    if witness is None:
        witness = _witness_from(full, np.arange(len(full)), spec)
    if witness is None:  # pragma: no cover - the full system was already shown infeasible
        raise InvariantError("infeasible system produced no witness")
    return ScalarizationVerdict("Unscalarizable", res.margin, None, witness, None, len(full), budget)


@dataclass
class VerifyReport:
    ok: bool
    checked_pairs: int
    disagreements: list[dict[str, Any]] = field(default_factory=list)
    witness_margin: float | None = None
    certificate_bound: float | None = None
    holdout_size: int = 0

    def to_json(self) -> dict[str, Any]:
        return {"ok": self.ok, "checked_pairs": self.checked_pairs, "disagreements": self.disagreements,
                "witness_margin": self.witness_margin, "certificate_bound": self.certificate_bound,
                "holdout_size": self.holdout_size}


def holdout_sample(momdp: MOMDP, spec: ObjectiveSpec, budget: int, seed: int) -> PolicySample:
    fresh = sample_policies(momdp, budget, seed)
    return augment_sample(momdp, spec, fresh, seed)


def verify_verdict(momdp: MOMDP, spec: ObjectiveSpec, verdict: ScalarizationVerdict,
                   holdout_seed: int) -> VerifyReport:
    """Re-check a verdict independently of the sample it was fitted on."""
    if verdict.scalarizable:
        hold = holdout_sample(momdp, spec, max(1, verdict.budget), holdout_seed)
        bad = disagreements(spec, hold.j, verdict.weights)
        n = len(hold)
        return VerifyReport(not bad, n * (n - 1) // 2,
                            [{"lower": hold.j[a].tolist(), "upper": hold.j[b].tolist()} for a, b in bad],
                            holdout_size=n)
    wit = verdict.witness
    mdp = momdp.skeleton
    # J recomputed one policy at a time through the value equations
    j = np.array([[evaluate_policy(mdp, r, p).j for r in momdp.rewards] for p in wit.policies])
    links = list(wit.links)
    for l in links:
        o = compare(spec, j[l.lo], j[l.hi])
        if o is not (Order.LESS if l.strict else Order.EQUAL):
            return VerifyReport(False, len(links), [{"link": [l.lo, l.hi], "relation": o.name}])
    unit, strict, keep = _link_rows(j, links)
    bound = certificate_bound(unit[keep & strict], unit[keep & ~strict], wit.certificate.y,
                              wit.certificate.z, j.shape[1])
    full_links = chain_links(spec, j)
    margin = solve_links(j, full_links).margin if full_links else 1.0
    ok = margin <= STRICT_MARGIN and bound <= STRICT_MARGIN
    return VerifyReport(ok, len(j) * (len(j) - 1) // 2, witness_margin=margin, certificate_bound=bound)


@dataclass
class AuditedVerdict:
    verdict: ScalarizationVerdict
    audits: list[VerifyReport]
    refits: int


def fit_with_audit(momdp: MOMDP, spec: ObjectiveSpec, budget: int, seed: int,
                   holdouts: int = 3, max_refits: int = 3) -> AuditedVerdict:
    """Fit, then stress a non-degenerate Scalarizable verdict on fresh holdouts.

    A failing holdout is merged into the sample and the fit repeated, so a
    sample-limited false positive either turns into a witness or survives every
    holdout.
    """
    base = sample_policies(momdp, budget, seed)
    sample = base
    refits = 0
    while True:
        verdict = fit_weights(momdp, spec, sample, seed=seed, budget=budget)
        if verdict.outcome == "Unscalarizable":
            return AuditedVerdict(verdict, [verify_verdict(momdp, spec, verdict, seed)], refits)
        if verdict.degenerate is not None:
            return AuditedVerdict(verdict, [], refits)
        audits = []
        failed = None
        for h in range(holdouts):
            hs = seed * 1000 + 7919 * (h + 1) + refits
            rep = verify_verdict(momdp, spec, verdict, hs)
            audits.append(rep)
            if not rep.ok:
                failed = hs
                break
        if failed is None or refits >= max_refits:
            return AuditedVerdict(verdict, audits, refits)
        sample = sample.merge(holdout_sample(momdp, spec, budget, failed))
        refits += 1
