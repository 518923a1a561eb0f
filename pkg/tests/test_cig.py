from __future__ import annotations

import numpy as np
import pytest

from mcaids.attack import GridContext, corruptible_buses, goal_achieved
from mcaids.cig import (OPERATOR_REQUEST, TOPOLOGY_CHANGE, CiCache, PseudoMeasurements,
                        attack_feasible, classify_correlation, deduce, induce)
from mcaids.attack import STRONG, UNCLASSIFIED, WEAK
from mcaids.errors import ContractError

from toys import brute_force_cis, random_toy, three_bus_pair, two_bus


@pytest.fixture(scope="module")
def pair_ctx():
    return GridContext(three_bus_pair())


def test_pseudo_measurement_validation():
    with pytest.raises(ValueError):
        PseudoMeasurements(np.array([1.0, -0.1]))
    with pytest.raises(ValueError):
        PseudoMeasurements(np.array([np.nan]))


def test_induce_clean_measurements_is_empty(ctx39):
    goal = ctx39.goal([2, 3, 12], 0.15)
    ind = induce(ctx39, (), ctx39.pd, PseudoMeasurements(ctx39.pd), goal)
    assert not ind.threat and len(ind.con) == 0


def test_induce_recovers_deduced_consequence(ctx39):
    goal = ctx39.goal([3], 0.15)
    tup = deduce(ctx39, goal, ctx39.abar(0.1))
    for ci in tup.cis:
        observed = ctx39.pd + tup.witnesses[ci]
        ind = induce(ctx39, ci, observed, PseudoMeasurements(ctx39.pd), goal)
        assert 3 in ind.con.lines


def test_induce_ignores_non_target_effects(ctx39):
    # a witness for line 4 (index 3) judged against a different line only
    tup = deduce(ctx39, ctx39.goal([3], 0.15), ctx39.abar(0.1))
    ci = tup.cis[0]
    observed = ctx39.pd + tup.witnesses[ci]
    other = ctx39.goal([17], 0.15)  # line 18 is out of reach
    ind = induce(ctx39, ci, observed, PseudoMeasurements(ctx39.pd), other)
    assert len(ind.con) == 0


def test_induce_flags_infeasible_dispatch(ctx39):
    goal = ctx39.goal([3], 0.15)
    ind = induce(ctx39, (), ctx39.pd * 2, PseudoMeasurements(ctx39.pd), goal)
    assert ind.opf_infeasible and ind.threat


def test_deduce_trivial_cases(ctx39):
    goal = ctx39.goal([3], 0.15)
    assert not deduce(ctx39, goal, np.zeros(ctx39.case.n)).reachable
    with pytest.raises(ValueError):
        deduce(ctx39, goal.restrict([]), ctx39.abar())


def test_deduce_pre_satisfied_goal():
    case = two_bus(rate=0.0)
    ctx = GridContext(case)
    goal = ctx.goal([0], 0.1)
    # a baseline flow below the actual one makes the goal already met at a = 0
    from mcaids.attack import AttackGoal

    easy = AttackGoal(goal.targets, ctx.baseline_flows * 0.5)
    tup = deduce(ctx, easy, ctx.abar())
    assert tup.kappa_star == 0 and tup.cis == (frozenset(),)


def test_attack_feasible_two_bus_analytic():
    # equal units split the observed demand; under-reporting bus 2 by |a| cuts the
    # bus-2 unit by |a|/2, so the true flow 1->2 becomes 30 + |a|/2 MW
    case = two_bus(rate=0.0, load=60.0)
    ctx = GridContext(case)
    assert ctx.baseline_flows[0] == pytest.approx(0.30)
    goal = ctx.goal([0], 0.05)  # needs 31.5 MW, i.e. |a| >= 3 MW
    abar = np.array([0.0, 0.6])
    ok, a = attack_feasible(ctx, goal, {0, 1}, abar)
    assert ok and a[1] <= -0.03 + 1e-12
    res = ctx.dispatch(ctx.pd + a)
    assert goal_achieved(goal, ctx.shift, case, res.pg, ctx.pd)[1]
    assert ctx.true_flows(res)[0] == pytest.approx(0.30 - a[1] / 2)
    assert not attack_feasible(ctx, goal, (), abar)[0]
    assert not attack_feasible(ctx, goal, {0, 1}, np.array([0.0, 0.02]))[0]


def test_three_bus_pair_needs_both(pair_ctx):
    goal = pair_ctx.goal([0], 0.1)
    tup = deduce(pair_ctx, goal, pair_ctx.abar(0.1))
    assert tup.kappa_star == 2
    assert tup.cis == (frozenset({0, 1}),)
    assert tup.verify(pair_ctx, pair_ctx.abar(0.1))
    k, level = brute_force_cis(pair_ctx.case, [(0, 0.1)], pair_ctx.abar(0.1))
    assert (k, level) == (2, {frozenset({0, 1})})


def test_classification(pair_ctx):
    goal = pair_ctx.goal([0], 0.1)
    abar = pair_ctx.abar(0.1)
    assert classify_correlation(pair_ctx, goal, {0, 1}, abar) == STRONG
    assert classify_correlation(pair_ctx, goal, {0}, abar) == UNCLASSIFIED


def test_weak_classification(ctx39):
    tup = deduce(ctx39, ctx39.goal([3], 0.15), ctx39.abar(0.1))
    ci = tup.cis[0]
    extra = next(k for k in range(6) if k not in ci)
    assert classify_correlation(ctx39, tup.con, ci | {extra}, ctx39.abar(0.1)) == WEAK


@pytest.mark.parametrize("seed", [0, 3, 5])
def test_deduce_matches_brute_force_on_toys(seed):
    case = random_toy(seed)
    ctx = GridContext(case)
    abar = ctx.abar(0.1)
    for line in range(case.m):
        tup = deduce(ctx, ctx.goal([line], 0.05), abar)
        k, level = brute_force_cis(case, [(line, 0.05)], abar, points=7)
        assert (tup.kappa_star, set(tup.cis)) == (k, level)


def test_witnesses_replay_and_respect_mask(ctx39):
    abar = ctx39.abar(0.1)
    for line in (2, 3, 41):
        tup = deduce(ctx39, ctx39.goal([line], 0.15), abar)
        assert tup.verify(ctx39, abar)
        for ci, a in tup.witnesses.items():
            assert np.all(a[~corruptible_buses(ctx39.case, ci)] == 0)
            assert np.all(np.abs(a) <= abar + 1e-12)


def test_monotone_under_supersets(ctx39):
    abar = ctx39.abar(0.1)
    tup = deduce(ctx39, ctx39.goal([41], 0.15), abar)
    for ci in tup.cis:
        a = tup.witnesses[ci]
        for extra in range(6):
            sup = ci | {extra}
            # the same corruption is still allowed under the larger mask
            assert np.all(a[~corruptible_buses(ctx39.case, sup)] == 0)
            res = ctx39.dispatch(ctx39.pd + a)
            assert goal_achieved(tup.con, ctx39.shift, ctx39.case, res.pg, ctx39.pd)[1]


def test_forced_safe_excludes_substations(ctx39):
    abar = ctx39.abar(0.1)
    goal = ctx39.goal([3], 0.15)
    free = deduce(ctx39, goal, abar)
    blocked = deduce(ctx39, goal, abar, forced_safe={0})
    assert all(0 not in s for s in blocked.cis)
    assert set(blocked.cis) == {s for s in free.cis if 0 not in s} or blocked.kappa_star > free.kappa_star


def test_cache_reuse_and_invalidation(ctx39):
    cache = CiCache()
    goal = ctx39.goal([3], 0.15)
    abar = ctx39.abar(0.1)
    first = cache.get_or_deduce(ctx39, goal, abar, "frac=0.1", "p")
    n = ctx39.solves
    again = cache.get_or_deduce(ctx39, goal, abar, "frac=0.1", "p")
    assert again is first and ctx39.solves == n
    other = ctx39.goal([41], 0.15)
    cache.get_or_deduce(ctx39, other, abar, "frac=0.1", "p")
    assert cache.invalidate(TOPOLOGY_CHANGE, lines=[41]) == 1
    assert len(cache) == 1
    assert cache.invalidate(OPERATOR_REQUEST) == 1
    assert len(cache) == 0
    with pytest.raises(ValueError):
        cache.invalidate("whim")
