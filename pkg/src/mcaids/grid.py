"""Network model and the generation shift (PTDF) matrix."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContractError, TopologyError

if TYPE_CHECKING:
    from .case_io import PartitionSpec, RawCase

BALANCE_TOL = 1e-8


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GridCase:
    """A parsed network in per-unit, densely indexed from 0.

    ``substations`` holds (name, frozenset of bus indices); ``slack`` is a bus
    index. The source records stay attached as ``raw``/``partition`` so the
    case can be written back out exactly.
    """

    raw: "RawCase"
    partition: "PartitionSpec"
    bus_ids: tuple
    base_mva: float
    pd: np.ndarray
    pg_max: np.ndarray
    f_max: np.ndarray
    x: np.ndarray
    from_bus: np.ndarray
    to_bus: np.ndarray
    gen_bus: np.ndarray
    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray
    substations: tuple
    slack: int

    def __post_init__(self):
        for name in ("pd", "pg_max", "f_max", "x", "c2", "c1", "c0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        for name in ("from_bus", "to_bus", "gen_bus"):
            object.__setattr__(self, name, _frozen(getattr(self, name), int))
        if not self.substations:
            raise TopologyError("a case needs at least one substation")

    @property
    def n(self) -> int:
        return len(self.bus_ids)

    @property
    def m(self) -> int:
        return len(self.x)

    @property
    def n_g(self) -> int:
        return len(self.gen_bus)

    @property
    def n_s(self) -> int:
        return len(self.substations)

    @property
    def substation_names(self) -> list[str]:
        return [name for name, _ in self.substations]

    @cached_property
    def gen_map(self) -> np.ndarray:
        """Bus x generator 0/1 matrix mapping generator output onto buses."""
        pi = np.zeros((self.n, self.n_g))
        pi[self.gen_bus, np.arange(self.n_g)] = 1.0
        pi.flags.writeable = False
        return pi

    @cached_property
    def incidence(self) -> np.ndarray:
        """Line x bus matrix, +1 at the from-bus and -1 at the to-bus."""
        a = np.zeros((self.m, self.n))
        rows = np.arange(self.m)
        a[rows, self.from_bus] = 1.0
        a[rows, self.to_bus] = -1.0
        a.flags.writeable = False
        return a

    def substation_mask(self, members) -> np.ndarray:
        """Boolean bus mask covering the substations with the given indices."""
        mask = np.zeros(self.n, dtype=bool)
        for k in members:
            mask[list(self.substations[k][1])] = True
        return mask

    def bus_index(self, bus_id: int) -> int:
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise KeyError(f"no bus {bus_id}") from None

    def is_connected(self) -> bool:
        graph = coo_matrix(
            (np.ones(self.m), (self.from_bus, self.to_bus)), shape=(self.n, self.n)
        )
        ncomp, _ = connected_components(graph, directed=False)
        return ncomp == 1

    def _key(self) -> tuple[Any, ...]:
        arrays = tuple(
            getattr(self, name).tobytes()
            for name in ("pd", "pg_max", "f_max", "x", "from_bus", "to_bus",
                         "gen_bus", "c2", "c1", "c0")
        )
        return (self.raw, self.partition, self.bus_ids, self.base_mva,
                self.substations, self.slack) + arrays

    def __eq__(self, other):
        if not isinstance(other, GridCase):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True, eq=False)
class ShiftMatrix:
    """Line flows per unit bus injection, with the slack absorbing the balance."""

    F: np.ndarray
    slack: int

    def __post_init__(self):
        object.__setattr__(self, "F", _frozen(self.F))


def compute_shift_matrix(case: GridCase, slack: int | None = None) -> ShiftMatrix:
    """Build the dense PTDF matrix by factoring the reduced susceptance matrix.

    ``slack`` is a bus index and defaults to ``case.slack``. The slack
    column of the result is identically zero.
    """
    slack = case.slack if slack is None else slack
    if not 0 <= slack < case.n:
        raise TopologyError(f"slack index {slack} out of range")
    if not case.is_connected():
        raise TopologyError("network graph is disconnected")

    b_line = 1.0 / case.x
    a = case.incidence
    b_bus = a.T @ (b_line[:, None] * a)
    keep = np.array([k for k in range(case.n) if k != slack], dtype=int)
    try:
        factor = cho_factor(b_bus[np.ix_(keep, keep)])
    except LinAlgError:
        raise TopologyError("reduced susceptance matrix is singular") from None
    # theta_red = B_red^-1 p_red, flows = diag(b) A theta
    f = np.zeros((case.m, case.n))
    f[:, keep] = cho_solve(factor, (b_line[:, None] * a[:, keep]).T).T
    return ShiftMatrix(F=f, slack=slack)


def injection_flows(shift: ShiftMatrix, injection) -> np.ndarray:
    """Flows for a bus injection vector; any imbalance is taken up at the slack."""
    return shift.F @ np.asarray(injection, dtype=float)


def line_flows(shift: ShiftMatrix, case: GridCase, pg, pd) -> np.ndarray:
    """``F (Pi_g pg - pd)`` for a balanced injection."""
    pg = np.asarray(pg, dtype=float)
    pd = np.asarray(pd, dtype=float)
    if pg.shape != (case.n_g,) or pd.shape != (case.n,):
        raise ContractError(f"expected shapes ({case.n_g},) and ({case.n},)")
    injection = case.gen_map @ pg - pd
    mismatch = injection.sum()
    if abs(mismatch) > BALANCE_TOL:
        raise ContractError(f"injection imbalance {mismatch:.3e} p.u. exceeds {BALANCE_TOL}")
    return shift.F @ injection


def write_ptdf_csv(shift: ShiftMatrix, case: GridCase, fh) -> None:
    """Dump F as CSV, one row per line, one column per bus id."""
    fh.write("line,from,to," + ",".join(f"bus{b}" for b in case.bus_ids) + "\n")
    for l in range(case.m):
        cells = ",".join(f"{v:.12g}" for v in shift.F[l])
        fh.write(f"{l + 1},{case.bus_ids[case.from_bus[l]]},{case.bus_ids[case.to_bus[l]]},{cells}\n")
