"""Correlation knowledge base: stored CI tuples, set-only scanning, defense plans.

CIs are indexed as integer bitmasks over substation indices, so a scan is
a handful of AND/compare operations per stored CI and never touches the
dispatch model.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .attack import AttackGoal, GridContext
from .cig import DEFAULT_BUDGET, CiTuple, attack_feasible
from .errors import ContractError

RULE1 = "rule1_is_ci"
RULE2 = "rule2_superset"
RULE3 = "rule3_small_subset"
NO_RULE = "none"

SINGLE_CI = "single_ci"
CASE_I = "case_I"
CASE_II = "case_II"
CASE_III = "case_III"

SNAPSHOT_FORMAT = 1


def to_mask(subset: Iterable[int]) -> int:
    m = 0
    for k in subset:
        m |= 1 << int(k)
    return m


def from_mask(mask: int) -> frozenset:
    return frozenset(k for k in range(mask.bit_length()) if mask >> k & 1)


class KnowledgeBase:
    """Immutable set of CI tuples with a bitmask index. Updates return a new base."""

    def __init__(self, records: Iterable[CiTuple] = (), version: int = 0):
        self.records = tuple(records)
        self.version = version
        index = []
        for rid, rec in enumerate(self.records):
            masks = [to_mask(s) for s in rec.cis]
            if len(set(masks)) != len(masks):
                raise ContractError(f"record {rid} holds a duplicate CI")
            index.extend((rid, m, bin(m).count("1")) for m in masks)
        self.index = tuple(index)
        self.min_cardinality = min((c for _, _, c in index), default=None)

    def __len__(self):
        return len(self.records)

    def find(self, con: AttackGoal) -> Optional[int]:
        for rid, rec in enumerate(self.records):
            if rec.con.key() == con.key():
                return rid
        return None


@dataclass(frozen=True)
class ScanVerdict:
    is_existing: bool
    matched_rule: str
    matched_cis: tuple = ()  # (record id, frozenset) pairs
    partial: bool = False

    @property
    def record_ids(self) -> list[int]:
        return sorted({rid for rid, _ in self.matched_cis})


def scan(kb: KnowledgeBase, detected: Iterable[int]) -> ScanVerdict:
    """Classify a detected substation set against the stored CIs.

    Rule 1: it equals a CI. Rule 2: it strictly contains a CI. Rule 3: it is
    strictly inside a CI and smaller than every CI in the base. The first
    rule that matches wins.
    """
    d = to_mask(detected)
    card = bin(d).count("1")
    equal, superset, subset = [], [], []
    for rid, m, _ in kb.index:
        if m == d:
            equal.append((rid, m))
        elif d & m == m:
            superset.append((rid, m))
        elif d & m == d:
            subset.append((rid, m))

    def pack(hits):
        return tuple((rid, from_mask(m)) for rid, m in hits)

    if equal:
        return ScanVerdict(True, RULE1, pack(equal))
    if superset:
        return ScanVerdict(True, RULE2, pack(superset))
    if subset and card < kb.min_cardinality:
        return ScanVerdict(True, RULE3, pack(subset), partial=True)
    return ScanVerdict(False, NO_RULE)


def identify_targets(kb: KnowledgeBase, verdict: ScanVerdict) -> AttackGoal:
    """Union of the consequence sets behind the matched CIs, keeping the largest tau per line."""
    if not verdict.is_existing:
        raise ContractError("targets are only defined for a matching scan")
    merged: dict[int, float] = {}
    baseline = None
    for rid in verdict.record_ids:
        con = kb.records[rid].con
        baseline = con.baseline if baseline is None else baseline
        for line, tau in con.targets:
            merged[line] = max(tau, merged.get(line, tau))
    return AttackGoal(tuple(merged.items()), baseline)


@dataclass(frozen=True)
class DefensePlan:
    case_kind: str
    defend: frozenset
    per_ci_assignments: dict = field(default_factory=dict)

    def covers(self, cis) -> bool:
        return all(self.defend & frozenset(s) for s in cis)


def derive_defense(matched: Iterable[Iterable[int]]) -> DefensePlan:
    cis = sorted({frozenset(s) for s in matched}, key=lambda s: (len(s), sorted(s)))
    if not cis:
        raise ContractError("no CIs to defend against")
    if any(not s for s in cis):
        raise ContractError("an empty CI cannot be defended by protecting substations")
    if len(cis) == 1:
        kind, defend = SINGLE_CI, {min(cis[0])}
    else:
        common = frozenset.intersection(*cis)
        if common:
            kind, defend = CASE_I, {min(common)}
        elif all(not (a & b) for i, a in enumerate(cis) for b in cis[i + 1:]):
            kind, defend = CASE_II, {min(s) for s in cis}
        else:
            kind, defend = CASE_III, set()
            uncovered = list(cis)
            while uncovered:
                counts: dict[int, int] = {}
                for s in uncovered:
                    for k in s:
                        counts[k] = counts.get(k, 0) + 1
                pick = min(counts, key=lambda k: (-counts[k], k))
                defend.add(pick)
                uncovered = [s for s in uncovered if pick not in s]
    defend = frozenset(defend)
    assign = {s: min(s & defend) for s in cis}
    return DefensePlan(kind, defend, assign)


def verify_defense(ctx: GridContext, plan: DefensePlan, matched, abar,
                   budget: int = DEFAULT_BUDGET) -> bool:
    """True when no matched CI still reaches its consequences once ``plan.defend`` is protected.

    ``matched`` is an iterable of (CI, AttackGoal) pairs.
    """
    for ci, con in matched:
        ci = frozenset(ci)
        ok, _ = attack_feasible(ctx, con, ci - plan.defend, abar, budget, forced_safe=plan.defend)
        if ok:
            return False
    return True


def _structurally_valid(tup: CiTuple) -> bool:
    if tup.kappa_star is None:
        return not tup.cis
    return (bool(tup.cis) and all(len(s) == tup.kappa_star for s in tup.cis)
            and all(s in tup.witnesses for s in tup.cis))


def update(kb: KnowledgeBase, tup: CiTuple, ctx: Optional[GridContext] = None,
           abar=None) -> KnowledgeBase:
    """New base with ``tup`` added, replacing any record with the same consequence key.

    With ``ctx`` the tuple's witnesses are replayed before it is accepted.
    """
    if not _structurally_valid(tup) or (ctx is not None and not tup.verify(ctx, abar)):
        raise ContractError("refusing to store an unverified CI tuple")
    records = list(kb.records)
    rid = kb.find(tup.con)
    if rid is None:
        records.append(tup)
    else:
        records[rid] = tup
    return KnowledgeBase(records, kb.version + 1)


class KnowledgeBaseStore:
    """Single writer, many readers: readers grab ``current`` and keep a consistent base."""

    def __init__(self, kb: Optional[KnowledgeBase] = None):
        self._kb = kb if kb is not None else KnowledgeBase()
        self._lock = threading.Lock()

    @property
    def current(self) -> KnowledgeBase:
        return self._kb

    def update(self, tup: CiTuple, ctx: Optional[GridContext] = None, abar=None) -> KnowledgeBase:
        with self._lock:
            self._kb = update(self._kb, tup, ctx, abar)
            return self._kb


# ------------------------------------------------------------- snapshots

def kb_to_dict(kb: KnowledgeBase, substation_names: list[str], meta: Optional[dict] = None) -> dict:
    baseline = kb.records[0].con.baseline if kb.records else np.zeros(0)
    records = []
    for rec in kb.records:
        records.append({
            "con": [[line + 1, tau] for line, tau in rec.con.targets],
            "kappa_star": rec.kappa_star,
            "cis": [[substation_names[k] for k in sorted(s)] for s in rec.cis],
            "witnesses": [[float(v) for v in rec.witnesses[s]] for s in rec.cis],
        })
    out = {
        "format": SNAPSHOT_FORMAT,
        "version": kb.version,
        "substations": list(substation_names),
        "baseline_flows": [float(v) for v in baseline],
        "records": records,
    }
    if meta:
        out["meta"] = meta
    return out


def kb_from_dict(data: dict, substation_names: Optional[list[str]] = None) -> KnowledgeBase:
    names = data["substations"]
    if substation_names is not None and list(substation_names) != names:
        raise ContractError("snapshot was built for a different substation partition")
    pos = {name: k for k, name in enumerate(names)}
    baseline = np.array(data["baseline_flows"], dtype=float)
    records = []
    for rec in data["records"]:
        con = AttackGoal(tuple((int(l) - 1, float(t)) for l, t in rec["con"]), baseline)
        cis = tuple(frozenset(pos[n] for n in ci) for ci in rec["cis"])
        wit = {s: np.array(w, dtype=float) for s, w in zip(cis, rec["witnesses"])}
        records.append(CiTuple(cis, con, rec["kappa_star"], wit))
    return KnowledgeBase(records, int(data.get("version", 0)))


def save_kb(kb: KnowledgeBase, path, substation_names, meta=None) -> None:
    with open(path, "w") as fh:
        json.dump(kb_to_dict(kb, substation_names, meta), fh, indent=1)
        fh.write("\n")


def load_kb(path, substation_names=None) -> KnowledgeBase:
    with open(path) as fh:
        return kb_from_dict(json.load(fh), substation_names)


def build_kb(ctx: GridContext, lines: Iterable[int], tau: float, abar,
             budget: int = DEFAULT_BUDGET, forced_safe=()) -> KnowledgeBase:
    """One deduced record per 0-based target line, in the given order."""
    from .cig import deduce

    kb = KnowledgeBase()
    for line in lines:
        kb = update(kb, deduce(ctx, ctx.goal([line], tau), abar, forced_safe, budget), ctx, abar)
    return kb
