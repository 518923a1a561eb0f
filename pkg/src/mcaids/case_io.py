"""Reading grid cases and substation partitions.

Two case formats are understood:

* a restricted MATPOWER ``.m`` grammar: ``mpc.baseMVA = <num>;`` plus the
  ``bus``, ``branch``, ``gen`` and ``gencost`` matrices written as numeric
  literals with ``%`` comments and ``;``/newline row separators;
* a canonical JSON document with ``base_mva``, ``buses``, ``branches`` and
  ``generators`` keys (optionally ``substations`` and ``slack_bus``).

JSON is the interchange form: ``case_to_json`` writes it and
``parse_case_json`` reads it back without loss.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CaseFormatError, ValidationError
from .grid import GridCase

# MATPOWER column positions (0-based)
BUS_I, BUS_PD = 0, 2
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10
GEN_BUS, GEN_PG, GEN_STATUS, GEN_PMAX = 0, 1, 7, 8
COST_MODEL, COST_N = 0, 3

REQUIRED_MATRICES = ("bus", "branch", "gen", "gencost")


@dataclass(frozen=True)
class BusRecord:
    id: int
    pd: float  # MW


@dataclass(frozen=True)
class BranchRecord:
    from_bus: int
    to_bus: int
    x: float  # p.u.
    rate: float  # MW, 0 means unlimited (MATPOWER convention)


@dataclass(frozen=True)
class GenRecord:
    bus: int
    pmax: float  # MW
    c2: float  # cost per MW^2
    c1: float  # cost per MW
    c0: float
    pg: float = 0.0  # MW, set point carried by the case file


@dataclass(frozen=True)
class RawCase:
    base_mva: float
    bus_records: tuple[BusRecord, ...]
    branch_records: tuple[BranchRecord, ...]
    gen_records: tuple[GenRecord, ...]
    slack_bus: Optional[int] = None

    def bus_ids(self) -> list[int]:
        return [b.id for b in self.bus_records]

    def validate(self) -> "RawCase":
        ids = self.bus_ids()
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate bus ids: {dup}")
        known = set(ids)
        if not self.base_mva > 0:
            raise ValidationError("base_mva must be positive")
        for k, br in enumerate(self.branch_records, start=1):
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise ValidationError(f"branch {k} references unknown bus {end}")
            if not br.x > 0:
                raise ValidationError(f"branch {k}: non-positive reactance {br.x}")
            if br.rate < 0:
                raise ValidationError(f"branch {k}: negative flow limit")
        for k, g in enumerate(self.gen_records, start=1):
            if g.bus not in known:
                raise ValidationError(f"generator {k} references unknown bus {g.bus}")
            if g.pmax < 0:
                raise ValidationError(f"generator {k}: negative generation limit")
        for b in self.bus_records:
            if not np.isfinite(b.pd):
                raise ValidationError(f"bus {b.id}: non-finite demand")
        if self.slack_bus is not None and self.slack_bus not in known:
            raise ValidationError(f"slack bus {self.slack_bus} is not a bus")
        return self


@dataclass(frozen=True)
class PartitionSpec:
    """Substation name -> member bus ids, in file order."""

    substations: tuple[tuple[str, frozenset], ...] = field(default_factory=tuple)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.substations]

    def __len__(self):
        return len(self.substations)

    def validate(self, raw: RawCase) -> "PartitionSpec":
        if not self.substations:
            raise ValidationError("partition has no substations")
        bus_ids = raw.bus_ids()
        known = set(bus_ids)
        owners: dict[int, list[str]] = {}
        for name, members in self.substations:
            if not members:
                raise ValidationError(f"substation {name} is empty")
            for b in sorted(members):
                if b not in known:
                    raise ValidationError(f"substation {name} lists unknown bus {b}")
                owners.setdefault(b, []).append(name)
        for b in bus_ids:
            if b not in owners:
                raise ValidationError(f"bus {b} uncovered by any substation")
        gen_buses = {g.bus for g in raw.gen_records}
        for b in sorted(gen_buses):
            if len(owners[b]) > 1:
                raise ValidationError(
                    f"generator bus {b} lies in overlapping substations {', '.join(owners[b])}"
                )
        return self


# ---------------------------------------------------------------- MATPOWER

_ASSIGN_MATRIX = re.compile(r"^\s*\w+\.(\w+)\s*=\s*\[")
_ASSIGN_SCALAR = re.compile(r"^\s*\w+\.(baseMVA)\s*=\s*([^;]+);")


def _strip_comment(line: str) -> str:
    # no string literals appear inside numeric matrices, so the first % ends code
    return line.split("%", 1)[0]


def _parse_number(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise CaseFormatError(f"not a numeric literal: {tok!r}", lineno) from None


def _read_matrices(text: str):
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    base_mva = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        code = _strip_comment(lines[i])
        m_scalar = _ASSIGN_SCALAR.match(code)
        if m_scalar:
            base_mva = _parse_number(m_scalar.group(2).strip(), lineno)
            i += 1
            continue
        m_mat = _ASSIGN_MATRIX.match(code)
        if not m_mat:
            i += 1
            continue
        name = m_mat.group(1)
        rows: list[tuple[int, list[float]]] = []
        body = code[m_mat.end():]
        closed = False
        while True:
            if "]" in body:
                body, closed = body.split("]", 1)[0], True
            for chunk in body.split(";"):
                toks = chunk.replace(",", " ").split()
                if toks:
                    rows.append((lineno, [_parse_number(t, lineno) for t in toks]))
            if closed:
                break
            i += 1
            if i >= len(lines):
                raise CaseFormatError(f"unterminated matrix '{name}'", lineno)
            lineno = i + 1
            body = _strip_comment(lines[i])
        matrices[name] = rows
        i += 1
    return base_mva, matrices


def _check_width(name, rows, width):
    for lineno, row in rows:
        if len(row) < width:
            raise CaseFormatError(
                f"{name} row has {len(row)} columns, need at least {width}", lineno
            )


def _gencost_coeffs(lineno, row) -> tuple[float, float, float]:
    if len(row) < 4:
        raise CaseFormatError("gencost row too short", lineno)
    if int(row[COST_MODEL]) != 2:
        raise CaseFormatError("only polynomial gencost (model 2) is supported", lineno)
    ncoef = int(row[COST_N])
    coeffs = row[4:4 + ncoef]
    if len(coeffs) != ncoef or ncoef > 3:
        raise CaseFormatError(f"gencost declares {ncoef} coefficients", lineno)
    padded = [0.0] * (3 - ncoef) + list(coeffs)
    return padded[0], padded[1], padded[2]


def parse_matpower(text: str) -> RawCase:
    """Parse the MATPOWER subset into a validated ``RawCase``.

    Columns outside the DC model (voltages, reactive limits, ...) are read
    and dropped. Out-of-service branches and generators are skipped.
    """
    base_mva, mats = _read_matrices(text)
    for name in REQUIRED_MATRICES:
        if name not in mats:
            raise CaseFormatError(f"missing required matrix '{name}'")
    if base_mva is None:
        base_mva = 100.0

    _check_width("bus", mats["bus"], 3)
    _check_width("branch", mats["branch"], 6)
    _check_width("gen", mats["gen"], 9)
    if len(mats["gencost"]) != len(mats["gen"]):
        raise CaseFormatError("gencost must have one row per generator")

    buses = tuple(BusRecord(int(r[BUS_I]), r[BUS_PD]) for _, r in mats["bus"])

    branches = []
    for lineno, r in mats["branch"]:
        if len(r) > BR_STATUS and r[BR_STATUS] == 0:
            continue
        branches.append(BranchRecord(int(r[F_BUS]), int(r[T_BUS]), r[BR_X], r[RATE_A]))

    gens = []
    for (lineno, r), (clineno, c) in zip(mats["gen"], mats["gencost"]):
        c2, c1, c0 = _gencost_coeffs(clineno, c)
        if r[GEN_STATUS] <= 0:
            continue
        gens.append(GenRecord(int(r[GEN_BUS]), r[GEN_PMAX], c2, c1, c0, r[GEN_PG]))

    # the bus-type-3 reference is ignored; slack selection happens in build_grid_case
    raw = RawCase(base_mva, buses, tuple(branches), tuple(gens))
    return raw.validate()


# -------------------------------------------------------------------- JSON

def raw_to_dict(raw: RawCase) -> dict:
    doc = {
        "base_mva": raw.base_mva,
        "buses": [{"id": b.id, "pd": b.pd} for b in raw.bus_records],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "x": br.x, "rate": br.rate}
            for br in raw.branch_records
        ],
        "generators": [
            {"bus": g.bus, "pmax": g.pmax, "pg": g.pg, "cost": [g.c2, g.c1, g.c0]}
            for g in raw.gen_records
        ],
    }
    if raw.slack_bus is not None:
        doc["slack_bus"] = raw.slack_bus
    return doc


def raw_from_dict(doc: dict) -> RawCase:
    try:
        buses = tuple(BusRecord(int(b["id"]), float(b["pd"])) for b in doc["buses"])
        branches = tuple(
            BranchRecord(int(b["from"]), int(b["to"]), float(b["x"]), float(b.get("rate", 0.0)))
            for b in doc["branches"]
        )
        gens = []
        for g in doc["generators"]:
            c2, c1, c0 = (float(v) for v in g["cost"])
            gens.append(GenRecord(int(g["bus"]), float(g["pmax"]), c2, c1, c0, float(g.get("pg", 0.0))))
        slack = doc.get("slack_bus")
        raw = RawCase(float(doc["base_mva"]), buses, branches, tuple(gens),
                      slack_bus=None if slack is None else int(slack))
    except KeyError as exc:
        raise CaseFormatError(f"missing key {exc.args[0]!r} in case JSON") from None
    except (TypeError, ValueError) as exc:
        raise CaseFormatError(f"bad value in case JSON: {exc}") from None
    return raw.validate()


def partition_to_dict(part: PartitionSpec) -> dict:
    return {name: sorted(members) for name, members in part.substations}


def partition_from_dict(doc: dict) -> PartitionSpec:
    if not isinstance(doc, dict):
        raise CaseFormatError("partition must be a JSON object of name -> bus ids")
    subs = []
    for name, members in doc.items():
        if not isinstance(members, list):
            raise CaseFormatError(f"substation {name}: expected an array of bus ids")
        subs.append((str(name), frozenset(int(b) for b in members)))
    return PartitionSpec(tuple(subs))


def parse_partition(text: str, raw: Optional[RawCase] = None) -> PartitionSpec:
    """Read a partition JSON document; validate it against ``raw`` when given."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    part = partition_from_dict(doc)
    if raw is not None:
        part.validate(raw)
    return part


def parse_case_json(text: str) -> tuple[RawCase, Optional[PartitionSpec]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    raw = raw_from_dict(doc)
    part = None
    if "substations" in doc:
        part = partition_from_dict(doc["substations"]).validate(raw)
    return raw, part


def case_to_json(case: GridCase, indent: Optional[int] = 2) -> str:
    """Canonical JSON for a built case (source data plus its partition)."""
    doc = raw_to_dict(case.raw)
    doc["substations"] = partition_to_dict(case.partition)
    return json.dumps(doc, indent=indent)


# ------------------------------------------------------------------- build

def build_grid_case(raw: RawCase, part: PartitionSpec, slack_bus: Optional[int] = None) -> GridCase:
    """Index the network densely and convert to per-unit on ``raw.base_mva``.

    Slack precedence: explicit argument, then ``raw.slack_bus`` (set by
    canonical JSON), then the first generator's bus. The chosen slack is
    written back into the stored raw record so serialization round-trips.
    """
    if part is None or len(part) == 0:
        raise ValidationError("partition has no substations")
    raw.validate()
    part.validate(raw)
    base = raw.base_mva
    ids = raw.bus_ids()
    index = {b: k for k, b in enumerate(ids)}

    if slack_bus is None:
        slack_bus = raw.slack_bus
    if slack_bus is None:
        if not raw.gen_records:
            raise ValidationError("case has no generators")
        slack_bus = raw.gen_records[0].bus
    if slack_bus not in index:
        raise ValidationError(f"slack bus {slack_bus} is not a bus")

    pd = np.array([b.pd for b in raw.bus_records], dtype=float) / base
    f_idx = np.array([index[br.from_bus] for br in raw.branch_records], dtype=int)
    t_idx = np.array([index[br.to_bus] for br in raw.branch_records], dtype=int)
    x = np.array([br.x for br in raw.branch_records], dtype=float)
    rate = np.array([br.rate for br in raw.branch_records], dtype=float)
    fmax = np.where(rate > 0, rate / base, np.inf)
    gen_bus = np.array([index[g.bus] for g in raw.gen_records], dtype=int)
    pgmax = np.array([g.pmax for g in raw.gen_records], dtype=float) / base
    # MATPOWER cost c2*P^2 + c1*P + c0 (P in MW) -> 1/2 p'C2 p + c1'p + c0 (p in p.u.)
    c2 = np.array([2.0 * g.c2 * base * base for g in raw.gen_records], dtype=float)
    c1 = np.array([g.c1 * base for g in raw.gen_records], dtype=float)
    c0 = np.array([g.c0 for g in raw.gen_records], dtype=float)
    subs = tuple(
        (name, frozenset(index[b] for b in members)) for name, members in part.substations
    )
    return GridCase(
        raw=replace(raw, slack_bus=slack_bus),
        partition=part,
        bus_ids=tuple(ids),
        base_mva=base,
        pd=pd,
        pg_max=pgmax,
        f_max=fmax,
        x=x,
        from_bus=f_idx,
        to_bus=t_idx,
        gen_bus=gen_bus,
        c2=c2,
        c1=c1,
        c0=c0,
        substations=subs,
        slack=index[slack_bus],
    )


# ------------------------------------------------------------------ loading

def read_case_file(path) -> tuple[RawCase, Optional[PartitionSpec]]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return parse_case_json(text)
    return parse_matpower(text), None


def load_case(case_path, partition_path=None, slack_bus: Optional[int] = None) -> GridCase:
    """Load a case file plus partition file into a ``GridCase``.

    A canonical JSON case may carry its own partition, in which case
    ``partition_path`` is optional.
    """
    raw, part = read_case_file(case_path)
    if partition_path is not None:
        part = parse_partition(Path(partition_path).read_text(encoding="utf-8"), raw)
    if part is None:
        raise ValidationError(f"{case_path}: no substation partition supplied")
    return build_grid_case(raw, part, slack_bus=slack_bus)


def data_path(name: str) -> Path:
    return Path(str(resources.files("mcaids") / "data" / name))


def load_case39() -> GridCase:
    """The bundled New England 39-bus case with its 6-substation partition."""
    return load_case(data_path("case39.m"), data_path("case39_partition.json"))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def partition_digest(part: PartitionSpec) -> str:
    blob = json.dumps(partition_to_dict(part), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def case_digest(case: GridCase) -> str:
    """Stable hash of the network data (buses, branches, generators, slack)."""
    blob = json.dumps(raw_to_dict(case.raw), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
