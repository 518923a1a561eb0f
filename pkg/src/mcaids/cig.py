"""Correlation Index Generator.

The induction engine reconstructs true demand around a detected attack and
reports which target-line consequences the deceived dispatch inflicts. The
deduction engine finds every minimum-cardinality substation set (a CI)
that can inflict a given consequence set.

Deduction is exact over substation subsets (enumerated by increasing size)
and heuristic inside a subset: a budgeted search over the attack box that
treats the dispatch map as a black box. Because the dispatch map is
piecewise linear in the corruption, the search starts from box vertices of
a per-substation parameterization, then follows sign-of-sensitivity
vertices, then polishes bus by bus with a compass search.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .attack import GOAL_TOL, AttackGoal, GridContext, corruptible_buses, goal_margins

DEFAULT_BUDGET = 200
ESTIMATED = "estimated"
REDUNDANT = "redundant"


@dataclass(frozen=True, eq=False)
class PseudoMeasurements:
    values: np.ndarray  # p.u.
    source: str = ESTIMATED

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("pseudo-measurements must be finite and non-negative")
        object.__setattr__(self, "values", v)


@dataclass
class Induction:
    con: AttackGoal
    opf_infeasible: bool = False
    flows: Optional[np.ndarray] = None

    @property
    def threat(self) -> bool:
        return bool(len(self.con)) or self.opf_infeasible


def induce(ctx: GridContext, detected: Iterable[int], observed, pseudo: PseudoMeasurements,
           targets: AttackGoal) -> Induction:
    """Consequences of dispatching on ``observed`` when ``detected`` is under attack.

    Demand inside any detected substation is replaced by the
    pseudo-measurement; elsewhere the observed value is trusted. Each target
    is checked against the pre-attack flows carried by ``targets``.
    """
    observed = np.asarray(observed, dtype=float)
    rec = observed.copy()
    detected = list(detected)
    if detected:
        inside = ctx.case.substation_mask(detected)
        rec[inside] = pseudo.values[inside]
    deceived = ctx.dispatch(observed)
    if not deceived.optimal:
        return Induction(AttackGoal((), targets.baseline), opf_infeasible=True)
    flows = ctx.shift.F @ (ctx.case.gen_map @ deceived.pg - rec)
    hit = goal_margins(targets, flows) >= -GOAL_TOL
    con = AttackGoal(tuple(t for t, h in zip(targets.targets, hit) if h), targets.baseline)
    return Induction(con, flows=flows)


# ----------------------------------------------------------- inner search

class _Evaluator:
    """Worst-target margin of the deceived dispatch, with a solve budget."""

    def __init__(self, ctx: GridContext, goal: AttackGoal, budget: int):
        self.ctx = ctx
        self.goal = goal
        self.budget = budget
        self.count = 0
        self.failures = 0
        self.seen: dict[bytes, float] = {}
        self.results = {}

    @property
    def exhausted(self) -> bool:
        return self.count >= self.budget

    def __call__(self, a: np.ndarray) -> float:
        key = a.tobytes()
        if key in self.seen:
            return self.seen[key]
        if self.exhausted:
            return -np.inf
        self.count += 1
        res = self.ctx.dispatch(self.ctx.pd + a)
        if not res.optimal:
            self.failures += 1
            val = -np.inf
        else:
            flows = self.ctx.true_flows(res)
            val = float(goal_margins(self.goal, flows).min())
            self.results[key] = res
        self.seen[key] = val
        return val

    def gradient(self, a: np.ndarray) -> Optional[np.ndarray]:
        res = self.results.get(a.tobytes())
        if res is None:
            return None
        ctx = self.ctx
        flows = ctx.true_flows(res)
        margins = goal_margins(self.goal, flows)
        j = int(np.argmin(margins))
        l, _ = self.goal.targets[j]
        f0 = self.goal.baseline[l]
        sign = np.sign(f0) if abs(f0) > GOAL_TOL else np.sign(flows[l]) or 1.0
        sens = ctx.model.demand_sensitivity(res)
        return sign * (ctx.shift.F[l] @ ctx.case.gen_map @ sens)


@dataclass
class SearchOutcome:
    feasible: bool
    witness: Optional[np.ndarray]
    best_margin: float
    evaluations: int
    opf_failures: int


def _groups(case, attacked, mask):
    owner = {}
    for k in sorted(attacked):
        for b in sorted(case.substations[k][1]):
            if mask[b] and b not in owner:
                owner[b] = k
    groups = []
    for k in sorted(attacked):
        idx = np.array(sorted(b for b, o in owner.items() if o == k), dtype=int)
        if idx.size:
            groups.append(idx)
    return groups


def search_attack(ctx: GridContext, goal: AttackGoal, subset: Iterable[int], abar: np.ndarray,
                  budget: int = DEFAULT_BUDGET, forced_safe: Iterable[int] = ()) -> SearchOutcome:
    attacked = frozenset(subset) - frozenset(forced_safe)
    abar = np.asarray(abar, dtype=float)
    ev = _Evaluator(ctx, goal, budget)
    zero = np.zeros(ctx.case.n)
    best_a, best = zero, ev(zero)

    def done(a, m):
        return SearchOutcome(True, a, m, ev.count, ev.failures)

    if best >= -GOAL_TOL:
        return done(zero, best)
    mask = corruptible_buses(ctx.case, attacked) & (abar > 0)
    if not mask.any():
        return SearchOutcome(False, None, best, ev.count, ev.failures)

    # 1. vertices of the per-substation parameterization
    scored = [(best, 0, zero)]
    groups = _groups(ctx.case, attacked, mask)
    for order, signs in enumerate(itertools.product((1.0, -1.0), repeat=len(groups)), start=1):
        a = zero.copy()
        for s, idx in zip(signs, groups):
            a[idx] = s * abar[idx]
        m = ev(a)
        if m >= -GOAL_TOL:
            return done(a, m)
        scored.append((m, order, a))
        if ev.exhausted:
            break
    scored.sort(key=lambda t: (-t[0], t[1]))
    best, _, best_a = scored[0]

    # 2. sign-of-sensitivity vertices from the leading starts
    for m0, _, a0 in scored[:3]:
        a, m = a0, m0
        for _ in range(8):
            if ev.exhausted or not np.isfinite(m):
                break
            grad = ev.gradient(a)
            if grad is None:
                break
            nxt = a.copy()
            move = mask & (np.abs(grad) > 1e-12)
            nxt[move] = np.sign(grad[move]) * abar[move]
            if np.array_equal(nxt, a):
                break
            mn = ev(nxt)
            if mn >= -GOAL_TOL:
                return done(nxt, mn)
            if mn <= m:
                break
            a, m = nxt, mn
        if m > best:
            best, best_a = m, a

    # 3. compass search over individual buses
    idx = np.flatnonzero(mask)
    step = 0.5
    x = best_a.copy()
    while step >= 1.0 / 32 and not ev.exhausted:
        improved = False
        for i in idx:
            for d in (1.0, -1.0):
                trial = x.copy()
                trial[i] = np.clip(x[i] + d * step * abar[i], -abar[i], abar[i])
                if trial[i] == x[i]:
                    continue
                m = ev(trial)
                if m >= -GOAL_TOL:
                    return done(trial, m)
                if m > best + 1e-12:
                    x, best, improved = trial, m, True
                    break
            if ev.exhausted:
                break
        if not improved:
            step /= 2
    return SearchOutcome(False, None, best, ev.count, ev.failures)


def attack_feasible(ctx: GridContext, goal: AttackGoal, subset: Iterable[int], abar,
                    budget: int = DEFAULT_BUDGET, forced_safe: Iterable[int] = ()):
    """(True, witness) if an attack on ``subset`` was found that reaches every target.

    A False answer may be a search miss, bounded by ``budget`` dispatch solves.
    """
    out = search_attack(ctx, goal, subset, abar, budget, forced_safe)
    return out.feasible, out.witness


# -------------------------------------------------------------- deduction

@dataclass(eq=False)
class CiTuple:
    """All minimum-cardinality substation sets reaching ``con``.

    ``kappa_star`` is None when no subset reaches it (``reachable`` False).
    """

    cis: tuple
    con: AttackGoal
    kappa_star: Optional[int]
    witnesses: dict = field(default_factory=dict)
    opf_failures: dict = field(default_factory=dict)

    @property
    def reachable(self) -> bool:
        return self.kappa_star is not None

    def verify(self, ctx: GridContext, abar=None) -> bool:
        """Every CI has the same size and its witness replays to the goal."""
        from .attack import goal_achieved

        for s in self.cis:
            if len(s) != self.kappa_star:
                return False
            a = self.witnesses.get(s)
            if a is None:
                return False
            if abar is not None and np.any(np.abs(a) > np.asarray(abar) + 1e-12):
                return False
            if np.any(np.abs(a[~corruptible_buses(ctx.case, s)]) > 1e-12):
                return False
            res = ctx.dispatch(ctx.pd + a)
            if not res.optimal:
                return False
            per, _ = goal_achieved(self.con, ctx.shift, ctx.case, res.pg, ctx.pd)
            if not per.all():
                return False
        return True


def _sorted_sets(sets) -> tuple:
    return tuple(sorted((frozenset(s) for s in sets), key=lambda s: (len(s), sorted(s))))


def deduce(ctx: GridContext, con: AttackGoal, abar, forced_safe: Iterable[int] = (),
           budget: int = DEFAULT_BUDGET) -> CiTuple:
    """Minimum number of substations to reach ``con`` and every subset of that size.

    Subsets are scanned by increasing size, lexicographically within a
    size; the first size with any success is scanned to the end. The full
    available set is tried first: if it fails, so does every subset of it.
    """
    if not len(con):
        raise ValueError("deduce needs a non-empty consequence set")
    abar = np.asarray(abar, dtype=float)
    safe = frozenset(forced_safe)
    avail = [k for k in range(ctx.case.n_s) if k not in safe]
    failures: dict = {}

    def run(subset):
        out = search_attack(ctx, con, subset, abar, budget, safe)
        if out.opf_failures:
            failures[frozenset(subset)] = out.opf_failures
        return out

    empty = run(())
    if empty.feasible:
        return CiTuple((frozenset(),), con, 0, {frozenset(): empty.witness}, failures)
    full = run(avail)
    if not full.feasible:
        return CiTuple((), con, None, {}, failures)
    for k in range(1, len(avail) + 1):
        found = {}
        if k == len(avail):
            found[frozenset(avail)] = full.witness
        else:
            for combo in itertools.combinations(avail, k):
                out = run(combo)
                if out.feasible:
                    found[frozenset(combo)] = out.witness
        if found:
            cis = _sorted_sets(found)
            return CiTuple(cis, con, k, {s: found[s] for s in cis}, failures)
    return CiTuple((), con, None, {}, failures)  # not reached: the full set succeeded


def classify_correlation(ctx: GridContext, con: AttackGoal, subset, abar,
                         budget: int = DEFAULT_BUDGET) -> str:
    """Strongly correlated if ``subset`` reaches ``con`` and no proper subset does.

    By monotonicity only the subsets one element smaller need checking.
    """
    from .attack import STRONG, UNCLASSIFIED, WEAK

    subset = frozenset(subset)
    if not attack_feasible(ctx, con, subset, abar, budget)[0]:
        return UNCLASSIFIED
    for k in sorted(subset):
        if attack_feasible(ctx, con, subset - {k}, abar, budget)[0]:
            return WEAK
    return STRONG


# ------------------------------------------------------------------ cache

TOPOLOGY_CHANGE = "topology_change"
STRESS_LEVEL = "stress_level"
DETECTION_RATE = "detection_rate"
OPERATOR_REQUEST = "operator_request"
REFRESH_TRIGGERS = (TOPOLOGY_CHANGE, STRESS_LEVEL, DETECTION_RATE, OPERATOR_REQUEST)


class CiCache:
    """Deduction results keyed by (consequences, bound policy, partition, safe set, budget).

    Single writer, many readers: lookups never take the lock.
    """

    def __init__(self):
        self._entries: dict = {}
        self._lock = threading.Lock()
        self.version = 0
        self.invalidations: list = []

    @staticmethod
    def key(con: AttackGoal, abar_policy, partition_hash: str, forced_safe=(), budget=DEFAULT_BUDGET):
        return (con.key(), abar_policy, partition_hash, frozenset(forced_safe), budget)

    def get(self, key) -> Optional[CiTuple]:
        return self._entries.get(key)

    def get_or_deduce(self, ctx: GridContext, con: AttackGoal, abar, abar_policy,
                      partition_hash: str, forced_safe=(), budget=DEFAULT_BUDGET) -> CiTuple:
        key = self.key(con, abar_policy, partition_hash, forced_safe, budget)
        hit = self._entries.get(key)
        if hit is not None:
            return hit
        result = deduce(ctx, con, abar, forced_safe, budget)
        with self._lock:
            entries = dict(self._entries)
            entries[key] = result
            self._entries = entries
            self.version += 1
        return result

    def invalidate(self, trigger: str, lines: Optional[Iterable[int]] = None) -> int:
        """Drop cached tuples after a refresh trigger; returns how many were dropped.

        ``lines`` limits the drop to tuples whose consequences touch those lines.
        """
        if trigger not in REFRESH_TRIGGERS:
            raise ValueError(f"unknown refresh trigger {trigger!r}")
        with self._lock:
            if lines is None:
                dropped = len(self._entries)
                self._entries = {}
            else:
                lines = set(lines)
                keep = {k: v for k, v in self._entries.items()
                        if not lines.intersection(l for l, _ in k[0])}
                dropped = len(self._entries) - len(keep)
                self._entries = keep
            self.version += 1
            self.invalidations.append(trigger)
        return dropped

    def __len__(self):
        return len(self._entries)
