from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcaids.errors import ContractError, TopologyError
from mcaids.grid import compute_shift_matrix, injection_flows, line_flows

from toys import make_case, two_bus


def test_two_bus_ptdf():
    case = two_bus()
    F = compute_shift_matrix(case).F
    # withdrawing at the slack side is free; injecting at bus 2 pushes flow 2 -> 1
    assert F[0, 0] == 0.0
    assert F[0, 1] == pytest.approx(-1.0)


def test_three_bus_ring_ptdf():
    case = make_case([(1, 0), (2, 0), (3, 0)],
                     [(1, 2, 0.1, 0), (2, 3, 0.1, 0), (1, 3, 0.1, 0)],
                     [(1, 100, 0, 1)], {"a": [1, 2, 3]})
    F = compute_shift_matrix(case).F
    # unit injection at bus 2 splits 2/3 over the direct line, 1/3 around the ring
    assert F[0, 1] == pytest.approx(-2 / 3)
    assert F[1, 1] == pytest.approx(1 / 3)
    assert F[2, 1] == pytest.approx(-1 / 3)


def _b_theta_flows(case, injection):
    """Independent route: pseudo-inverse of the full susceptance matrix."""
    b = 1.0 / case.x
    A = case.incidence
    B = A.T @ np.diag(b) @ A
    p = injection.copy()
    p[case.slack] -= p.sum()  # slack absorbs the imbalance
    theta = np.linalg.pinv(B) @ p
    theta -= theta[case.slack]
    return b * (A @ theta)


def test_ptdf_matches_b_theta_on_random_injections(case39):
    shift = compute_shift_matrix(case39)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        inj = rng.normal(size=case39.n)
        worst = max(worst, np.abs(injection_flows(shift, inj) - _b_theta_flows(case39, inj)).max())
    assert worst < 1e-9
    assert np.all(shift.F[:, case39.slack] == 0.0)


def test_slack_choice_irrelevant_for_balanced_injection(case39):
    rng = np.random.default_rng(3)
    inj = rng.normal(size=case39.n)
    inj -= inj.mean()
    f1 = compute_shift_matrix(case39).F @ inj
    f2 = compute_shift_matrix(case39, slack=5).F @ inj
    assert np.allclose(f1, f2, atol=1e-10)


def test_disconnected_network_rejected():
    case = make_case([(1, 0), (2, 10), (3, 0), (4, 10)],
                     [(1, 2, 0.1, 0), (3, 4, 0.1, 0)],
                     [(1, 100, 0, 1), (3, 100, 0, 1)], {"a": [1, 2, 3, 4]})
    with pytest.raises(TopologyError, match="disconnected"):
        compute_shift_matrix(case)


def test_line_flows_contract(case39):
    shift = compute_shift_matrix(case39)
    with pytest.raises(ContractError, match="imbalance"):
        line_flows(shift, case39, np.zeros(case39.n_g), case39.pd)
    with pytest.raises(ContractError):
        line_flows(shift, case39, np.zeros(3), case39.pd)


def test_case_arrays_are_read_only(case39):
    with pytest.raises(ValueError):
        case39.pd[0] = 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=39, max_size=39))
def test_flow_conservation_at_buses(case39, values):
    # net flow out of each non-slack bus equals its injection
    shift = compute_shift_matrix(case39)
    inj = np.array(values)
    flows = shift.F @ inj
    out = case39.incidence.T @ flows
    keep = np.arange(case39.n) != case39.slack
    assert np.allclose(out[keep], inj[keep], atol=1e-8)
