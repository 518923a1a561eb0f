from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcaids.case_io import (BranchRecord, BusRecord, GenRecord, PartitionSpec, RawCase,
                            build_grid_case, case_to_json, data_path, load_case, parse_case_json,
                            parse_matpower, parse_partition, partition_digest)
from mcaids.errors import CaseFormatError, ValidationError

MINI = """function mpc = mini
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	345	1	1.06	0.94;
	2	1	50	0	0	0	1	1	0	345	1	1.06	0.94;  % load bus
];
mpc.gen = [
	1	0	0	100	-100	1	100	1	200	0;
];
mpc.branch = [
	1	2	0.01	0.1	0	120	0	0	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.02	15	5;
];
"""


def test_bundled_case39_counts(case39):
    assert (case39.n, case39.m, case39.n_g, case39.n_s) == (39, 46, 10, 6)
    assert case39.bus_ids[case39.slack] == 30
    assert np.isclose(case39.pd.sum() * 100, 6254.23)


def test_mini_parse_and_units():
    raw = parse_matpower(MINI)
    assert raw.base_mva == 100
    assert [b.pd for b in raw.bus_records] == [0, 50]
    assert raw.branch_records[0] == BranchRecord(1, 2, 0.1, 120)
    g = raw.gen_records[0]
    assert (g.bus, g.pmax, g.c2, g.c1, g.c0) == (1, 200, 0.02, 15, 5)
    case = build_grid_case(raw, PartitionSpec((("a", frozenset({1, 2})),)))
    # 0.02 $/MW^2 on a 100 MVA base: 1/2 * C2 * p^2 with C2 = 2*0.02*100^2
    assert case.c2[0] == pytest.approx(400.0)
    assert case.c1[0] == pytest.approx(1500.0)
    assert case.f_max[0] == pytest.approx(1.2)
    assert case.pd[1] == pytest.approx(0.5)


def test_zero_rating_means_unlimited():
    raw = parse_matpower(MINI.replace("0	120	0", "0	0	0"))
    case = build_grid_case(raw, PartitionSpec((("a", frozenset({1, 2})),)))
    assert np.isinf(case.f_max[0])


def test_out_of_service_rows_skipped():
    off = "\t1\t2\t0.01\t0.3\t0\t50\t0\t0\t0\t0\t0\t-360\t360;\n"  # status column = 0
    raw = parse_matpower(MINI.replace("mpc.branch = [\n", "mpc.branch = [\n" + off))
    assert len(raw.branch_records) == 1
    assert raw.branch_records[0].x == 0.1


@pytest.mark.parametrize("mutation, message", [
    (lambda t: t.replace("mpc.gencost = [\n\t2\t0\t0\t3\t0.02\t15\t5;\n];\n", ""), "missing required matrix 'gencost'"),
    (lambda t: t.replace("0.01	0.1	0", "0.01	-0.1	0"), "non-positive reactance"),
    (lambda t: t.replace("2	1	50", "2	1	5x0"), "line 7"),
    (lambda t: t.replace("1	2	0.01", "1	7	0.01"), "unknown bus 7"),
])
def test_parse_errors(mutation, message):
    with pytest.raises((CaseFormatError, ValidationError), match=message):
        parse_matpower(mutation(MINI))


def test_partition_validation_errors():
    raw = parse_matpower(MINI)
    with pytest.raises(ValidationError, match="bus 2 uncovered"):
        PartitionSpec((("a", frozenset({1})),)).validate(raw)
    with pytest.raises(ValidationError, match="generator bus 1 lies in overlapping"):
        PartitionSpec((("a", frozenset({1, 2})), ("b", frozenset({1})))).validate(raw)
    with pytest.raises(ValidationError, match="no substations"):
        PartitionSpec(()).validate(raw)


def test_partition_file_parse(case39):
    text = data_path("case39_partition.json").read_text()
    part = parse_partition(text)
    assert part.names == ["s1", "s2", "s3", "s4", "s5", "s6"]
    assert partition_digest(part) == partition_digest(case39.partition)


def test_json_round_trip_case39(case39):
    raw, part = parse_case_json(case_to_json(case39))
    again = build_grid_case(raw, part)
    assert again == case39
    assert hash(again) == hash(case39)


def test_load_case_json_file(tmp_path, case39):
    p = tmp_path / "c.json"
    p.write_text(case_to_json(case39))
    assert load_case(p) == case39


def test_explicit_slack_survives_round_trip(case39):
    raw, part = parse_case_json(case_to_json(case39))
    moved = build_grid_case(raw, part, slack_bus=31)
    back = build_grid_case(*parse_case_json(case_to_json(moved)))
    assert back.bus_ids[back.slack] == 31 and back == moved


@st.composite
def small_raw_cases(draw):
    n = draw(st.integers(2, 6))
    ids = draw(st.lists(st.integers(1, 500), min_size=n, max_size=n, unique=True))
    buses = tuple(BusRecord(i, draw(st.floats(0, 300, allow_nan=False))) for i in ids)
    branches = []
    for k in range(1, n):  # a spanning path keeps the graph connected
        branches.append(BranchRecord(ids[k - 1], ids[k], draw(st.floats(0.01, 1)), draw(st.sampled_from([0.0, 50.0, 99.5]))))
    gens = (GenRecord(ids[0], draw(st.floats(1, 1000)), draw(st.floats(0, 0.1)), draw(st.floats(0, 50)), 0.0),)
    raw = RawCase(draw(st.sampled_from([10.0, 100.0])), buses, tuple(branches), gens)
    part = PartitionSpec((("all", frozenset(ids)),))
    return raw, part


@settings(max_examples=60, deadline=None)
@given(small_raw_cases())
def test_round_trip_property(data):
    raw, part = data
    case = build_grid_case(raw, part)
    text = case_to_json(case)
    again = build_grid_case(*parse_case_json(text))
    assert again == case
    assert json.loads(case_to_json(again)) == json.loads(text)
