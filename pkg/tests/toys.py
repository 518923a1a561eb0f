"""Small hand-built grids and brute-force oracles shared by the tests."""
from __future__ import annotations

import itertools

import numpy as np

from mcaids.case_io import (BranchRecord, BusRecord, GenRecord, PartitionSpec, RawCase,
                            build_grid_case)
from mcaids.dcopf import DispatchModel
from mcaids.grid import compute_shift_matrix


def make_case(buses, branches, gens, substations, base=100.0, slack=None):
    """buses: [(id, pd_mw)]; branches: [(f, t, x, rate_mw)]; gens: [(bus, pmax, c2, c1)];
    substations: {name: [bus ids]}."""
    raw = RawCase(
        base,
        tuple(BusRecord(b, float(p)) for b, p in buses),
        tuple(BranchRecord(f, t, float(x), float(r)) for f, t, x, r in branches),
        tuple(GenRecord(b, float(pm), float(c2), float(c1), 0.0) for b, pm, c2, c1 in gens),
    )
    part = PartitionSpec(tuple((n, frozenset(m)) for n, m in substations.items()))
    return build_grid_case(raw, part, slack_bus=slack)


def two_bus(rate=80.0, load=60.0):
    """Identical units at both ends, so each covers half the observed demand."""
    return make_case(
        [(1, 0.0), (2, load)],
        [(1, 2, 0.1, rate)],
        [(1, 200.0, 0.01, 10.0), (2, 200.0, 0.01, 10.0)],
        {"s1": [1], "s2": [2]},
    )


def three_bus_pair():
    """Loads at buses 2 and 3, one per substation; line 1 (bus 1 - bus 2) is the target."""
    return make_case(
        [(1, 0.0), (2, 100.0), (3, 100.0)],
        [(1, 2, 0.1, 0.0), (2, 3, 0.1, 0.0), (1, 3, 0.1, 0.0)],
        [(1, 400.0, 0.05, 10.0), (3, 400.0, 0.01, 10.0)],
        {"s1": [1, 2], "s2": [3]},
    )


def literal_mask(case, attacked):
    """Buses whose every containing substation is attacked."""
    out = np.zeros(case.n, dtype=bool)
    for i in range(case.n):
        owners = [k for k, (_, m) in enumerate(case.substations) if i in m]
        out[i] = bool(owners) and all(k in attacked for k in owners)
    return out


def grid_feasible(case, shift, model, lines_taus, baseline, subset, abar, points=11):
    """Dense grid over the corruptible buses; True if some grid point reaches every target."""
    mask = literal_mask(case, set(subset)) & (abar > 0)
    idx = np.flatnonzero(mask)
    axes = [np.linspace(-abar[i], abar[i], points) for i in idx]
    for combo in itertools.product(*axes) if idx.size else [()]:
        a = np.zeros(case.n)
        a[idx] = combo
        res = model.solve(case.pd + a)
        if not res.optimal:
            continue
        flows = shift.F @ (case.gen_map @ res.pg - case.pd)
        ok = True
        for l, tau in lines_taus:
            f0 = baseline[l]
            if abs(f0) <= 1e-9:
                ok = abs(flows[l]) > 1e-9
            else:
                ok = np.sign(f0) * flows[l] >= (1 + tau) * abs(f0) - 1e-9
            if not ok:
                break
        if ok:
            return True
    return False


def brute_force_cis(case, lines_taus, abar, points=11):
    """Minimum-cardinality reaching subsets by exhaustive enumeration; None if unreachable."""
    shift = compute_shift_matrix(case)
    model = DispatchModel(case, shift)
    base = model.solve(case.pd)
    baseline = base.pf
    subsets = [frozenset(c) for k in range(case.n_s + 1)
               for c in itertools.combinations(range(case.n_s), k)]
    feas = {s: grid_feasible(case, shift, model, lines_taus, baseline, s, abar, points)
            for s in subsets}
    for k in range(case.n_s + 1):
        level = {s for s in subsets if len(s) == k and feas[s]}
        if level:
            return k, level
    return None, set()


def random_toy(seed: int):
    """Five-bus meshed toy with two or three generators and 3-4 substations (one shared bus)."""
    rng = np.random.default_rng(seed)
    buses = [(1, 0.0)] + [(b, float(rng.integers(40, 160))) for b in (2, 3, 4, 5)]
    lines = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (2, 4)]
    branches = [(f, t, float(rng.uniform(0.05, 0.2)), 0.0) for f, t in lines]
    gens = [(1, 600.0, float(rng.uniform(0.01, 0.05)), 10.0),
            (3, 600.0, float(rng.uniform(0.01, 0.05)), float(rng.uniform(10, 30)))]
    if rng.random() < 0.5:
        gens.append((5, 600.0, float(rng.uniform(0.01, 0.05)), float(rng.uniform(10, 30))))
    if rng.random() < 0.5:
        subs = {"s1": [1, 2], "s2": [3, 4], "s3": [4, 5]}
    else:
        subs = {"s1": [1], "s2": [2, 4], "s3": [3], "s4": [4, 5]}
    return make_case(buses, branches, gens, subs)
