"""Monitoring-control attacks: corrupted demand, attack goals, random attacks."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .dcopf import DispatchModel, DispatchResult
from .errors import ContractError
from .grid import GridCase, ShiftMatrix, compute_shift_matrix

GOAL_TOL = 1e-9
MASK_TOL = 1e-12

STRONG = "strongly_correlated"
WEAK = "weakly_correlated"
UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class SubstationSet:
    members: frozenset
    role: str = UNCLASSIFIED

    def __len__(self):
        return len(self.members)


def corruptible_buses(case: GridCase, attacked: Iterable[int]) -> np.ndarray:
    """Boolean mask of buses an attack on ``attacked`` may corrupt.

    A bus shared by several substations is corruptible only when every
    substation serving it is attacked: a defended substation pins the
    measurement of each bus in its area.
    """
    attacked = set(attacked)
    mask = np.zeros(case.n, dtype=bool)
    blocked = np.zeros(case.n, dtype=bool)
    for k, (_, members) in enumerate(case.substations):
        idx = list(members)
        if k in attacked:
            mask[idx] = True
        else:
            blocked[idx] = True
    return mask & ~blocked


@dataclass(frozen=True, eq=False)
class AttackVector:
    """Measurement corruption ``a`` with its box bound ``abar`` (both p.u.)."""

    a: np.ndarray
    abar: np.ndarray
    attacked: frozenset = field(default_factory=frozenset)

    def check(self, case: Optional[GridCase] = None) -> "AttackVector":
        if self.a.shape != self.abar.shape:
            raise ContractError("attack and bound vectors differ in shape")
        if np.any(np.abs(self.a) > self.abar + MASK_TOL):
            raise ContractError("attack exceeds its box bound")
        if case is not None:
            if self.a.shape != (case.n,):
                raise ContractError(f"attack vector must have {case.n} entries")
            off = ~corruptible_buses(case, self.attacked)
            if np.any(np.abs(self.a[off]) > MASK_TOL):
                raise ContractError("attack touches a bus outside the attacked substations")
        return self


def corrupt_measurements(pd, atk: AttackVector, case: Optional[GridCase] = None) -> np.ndarray:
    pd = np.asarray(pd, dtype=float)
    if pd.shape != atk.a.shape:
        raise ContractError(f"demand shape {pd.shape} != attack shape {atk.a.shape}")
    atk.check(case)
    return pd + atk.a


@dataclass(frozen=True, eq=False)
class AttackGoal:
    """Target lines (0-based index, flow-increase fraction) and pre-attack flows."""

    targets: tuple
    baseline: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(sorted((int(l), float(t)) for l, t in self.targets)))
        for l, tau in self.targets:
            if not tau > 0:
                raise ContractError(f"line {l + 1}: flow-increase fraction must be positive")
            if not 0 <= l < len(self.baseline):
                raise ContractError(f"unknown line {l + 1}")

    @property
    def lines(self) -> list[int]:
        return [l for l, _ in self.targets]

    def key(self) -> tuple:
        return self.targets

    def __len__(self):
        return len(self.targets)

    def __eq__(self, other):
        return isinstance(other, AttackGoal) and self.targets == other.targets

    def __hash__(self):
        return hash(self.targets)

    def restrict(self, lines) -> "AttackGoal":
        keep = set(lines)
        return AttackGoal(tuple(t for t in self.targets if t[0] in keep), self.baseline)


def goal_margins(goal: AttackGoal, flows: np.ndarray) -> np.ndarray:
    """Per-target margin ``s*flow - (1+tau)|f0|`` in p.u., ``s`` the baseline direction.

    Non-negative means the target is reached. A target with zero baseline
    flow is reached by any non-zero flow.
    """
    out = np.empty(len(goal.targets))
    for j, (l, tau) in enumerate(goal.targets):
        f0 = goal.baseline[l]
        if abs(f0) <= GOAL_TOL:
            out[j] = abs(flows[l]) - 2 * GOAL_TOL
        else:
            out[j] = np.sign(f0) * flows[l] - (1.0 + tau) * abs(f0)
    return out


def goal_achieved(goal: AttackGoal, shift: ShiftMatrix, case: GridCase, pg_plus, pd):
    """Whether the deceived dispatch raises the true flow past each target threshold.

    Returns (per-target booleans, overall) where overall means at least one
    target is reached. The injection ``Pi_g pg_plus - pd`` is generally
    unbalanced; the mismatch lands on the slack through ``F``.
    """
    flows = shift.F @ (case.gen_map @ np.asarray(pg_plus, dtype=float) - np.asarray(pd, dtype=float))
    per = goal_margins(goal, flows) >= -GOAL_TOL
    return per, bool(per.any())


def make_goal(baseline: np.ndarray, lines, tau) -> AttackGoal:
    """Goal over 0-based ``lines`` sharing one ``tau`` (or a per-line sequence)."""
    lines = list(lines)
    taus = [tau] * len(lines) if np.isscalar(tau) else list(tau)
    return AttackGoal(tuple(zip(lines, taus)), baseline)


class GridContext:
    """A case with its PTDF, dispatch model, true demand and pre-attack state.

    Dispatch results are memoised by the exact demand bytes, so replaying an
    observed demand vector never re-solves.
    """

    def __init__(self, case: GridCase, shift: Optional[ShiftMatrix] = None,
                 pd: Optional[np.ndarray] = None, cache_size: int = 4096):
        self.case = case
        self.shift = shift if shift is not None else compute_shift_matrix(case)
        self.model = DispatchModel(case, self.shift)
        self.pd = np.array(case.pd if pd is None else pd, dtype=float)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self.solves = 0
        self.base = self.dispatch(self.pd)
        if not self.base.optimal:
            raise ContractError(f"pre-attack dispatch is {self.base.status}")
        self.baseline_flows = self.base.pf.copy()

    def dispatch(self, demand) -> DispatchResult:
        demand = np.asarray(demand, dtype=float)
        key = demand.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        self.solves += 1
        res = self.model.solve(demand)
        self._cache[key] = res
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return res

    def true_flows(self, result: DispatchResult, pd=None) -> np.ndarray:
        pd = self.pd if pd is None else pd
        return self.shift.F @ (self.case.gen_map @ result.pg - pd)

    def goal(self, lines, tau) -> AttackGoal:
        return make_goal(self.baseline_flows, lines, tau)

    def abar(self, frac: float = 0.1) -> np.ndarray:
        return frac * np.abs(self.pd)


def random_subset(n_s: int, rng: np.random.Generator, distribution: str = "cardinality_uniform") -> frozenset:
    """Non-empty substation subset.

    ``cardinality_uniform``: size uniform on 1..n_s, then a uniform subset of
    that size. ``uniform``: uniform over all non-empty subsets.
    """
    if distribution == "cardinality_uniform":
        k = int(rng.integers(1, n_s + 1))
        return frozenset(int(s) for s in rng.choice(n_s, size=k, replace=False))
    if distribution == "uniform":
        code = int(rng.integers(1, 2 ** n_s))
        return frozenset(k for k in range(n_s) if code >> k & 1)
    raise ValueError(f"unknown subset distribution {distribution!r}")


def random_mca(case: GridCase, rng: np.random.Generator, abar_frac: float = 0.1,
               distribution: str = "cardinality_uniform", pd=None):
    """Draw attacked substations and a uniform corruption inside the box.

    Every bus draws a uniform number so the stream length does not depend
    on which substations were picked.
    """
    pd = case.pd if pd is None else np.asarray(pd, dtype=float)
    attacked = random_subset(case.n_s, rng, distribution)
    abar = abar_frac * np.abs(pd)
    u = rng.uniform(-1.0, 1.0, size=case.n)
    mask = corruptible_buses(case, attacked)
    a = np.where(mask, u * abar, 0.0)
    return SubstationSet(attacked), AttackVector(a=a, abar=abar, attacked=attacked)
