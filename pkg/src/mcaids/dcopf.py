"""Security-constrained DC optimal power flow.

    min  1/2 pg' C2 pg + c1' pg + sum(c0)
    s.t. sum(pg) = sum(pd_obs)
         0 <= pg <= pg_max
         -f_max <= F (Pi_g pg - pd_obs) <= f_max
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp
from .errors import ContractError
from .grid import GridCase, ShiftMatrix

OPTIMAL = qp.OPTIMAL
INFEASIBLE = qp.INFEASIBLE
UNBOUNDED = qp.UNBOUNDED
SOLVER_FAILURE = qp.ITERATION_LIMIT

FEAS_TOL = 1e-7
OPT_TOL = 1e-8


@dataclass(frozen=True)
class DispatchProblem:
    case: GridCase
    shift: ShiftMatrix
    demand: np.ndarray  # observed demand, p.u.


@dataclass
class DispatchResult:
    pg: np.ndarray
    pf: np.ndarray
    objective: float
    status: str
    kkt_residual: float = np.inf
    active: list = field(default_factory=list)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class DispatchModel:
    """Constraint matrices for one (case, shift) pair, reused across solves.

    Inequality rows are ordered generator lower bounds, generator upper
    bounds, line upper limits, line lower limits; lines without a rating
    contribute no rows. That order is the tie-break order of the solver.
    """

    def __init__(self, case: GridCase, shift: ShiftMatrix):
        self.case = case
        self.shift = shift
        ng = case.n_g
        self.Q = np.diag(case.c2)
        self.c = case.c1.copy()
        self.c0 = float(case.c0.sum())
        self.limited = np.flatnonzero(np.isfinite(case.f_max))
        F = shift.F[self.limited]
        self.F_lim = F
        H = F @ case.gen_map
        eye = np.eye(ng)
        self.G = np.vstack([-eye, eye, H, -H])
        self.A_eq = np.ones((1, ng))
        self._h_static = np.concatenate([np.zeros(ng), case.pg_max])
        self.fmax = case.f_max[self.limited]

    def rhs(self, demand: np.ndarray) -> np.ndarray:
        base = self.F_lim @ demand
        return np.concatenate([self._h_static, self.fmax + base, self.fmax - base])

    def rhs_jacobian(self) -> np.ndarray:
        """d(rhs)/d(demand), one row per inequality."""
        ng = self.case.n_g
        return np.vstack([np.zeros((2 * ng, self.case.n)), self.F_lim, -self.F_lim])

    def solve(self, demand) -> DispatchResult:
        case = self.case
        demand = np.asarray(demand, dtype=float)
        if demand.shape != (case.n,):
            raise ContractError(f"demand must have shape ({case.n},)")
        if not np.all(np.isfinite(demand)):
            raise ContractError("demand contains NaN or inf")
        total = float(demand.sum())
        cap = float(case.pg_max.sum())
        nan_pg = np.full(case.n_g, np.nan)
        nan_pf = np.full(case.m, np.nan)
        if total > cap + FEAS_TOL or total < -FEAS_TOL:
            return DispatchResult(nan_pg, nan_pf, np.nan, INFEASIBLE)
        share = case.pg_max / cap if cap > 0 else np.full(case.n_g, 1.0 / case.n_g)
        x0 = total * share
        res = qp.solve_qp(self.Q, self.c, self.A_eq, [total], self.G, self.rhs(demand),
                          x0=x0, feas_tol=FEAS_TOL, opt_tol=OPT_TOL)
        if res.status != OPTIMAL:
            return DispatchResult(nan_pg, nan_pf, np.nan, res.status, iterations=res.iterations)
        pg = res.x
        pf = self.shift.F @ (case.gen_map @ pg - demand)
        return DispatchResult(pg=pg, pf=pf, objective=res.objective + self.c0, status=OPTIMAL,
                              kkt_residual=res.kkt_residual, active=res.active,
                              iterations=res.iterations)

    def demand_sensitivity(self, result: DispatchResult) -> np.ndarray:
        """Local d(pg)/d(demand) (n_g x n) on the result's working set.

        Exact while the optimal working set stays fixed; at degenerate points
        it is one element of the generalized derivative.
        """
        case = self.case
        ng = case.n_g
        rows = list(result.active)
        A_w = np.vstack([self.A_eq, self.G[rows]]) if rows else self.A_eq
        D_w = np.vstack([np.ones((1, case.n)), self.rhs_jacobian()[rows]])
        k = A_w.shape[0]
        kkt = np.block([[self.Q, A_w.T], [A_w, np.zeros((k, k))]])
        rhs = np.vstack([np.zeros((ng, case.n)), D_w])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        return sol[:ng]


def solve_opf(prob: DispatchProblem) -> DispatchResult:
    """Solve the dispatch problem for the observed demand in ``prob``."""
    return DispatchModel(prob.case, prob.shift).solve(prob.demand)


def write_dispatch_csv(case: GridCase, result: DispatchResult, fh) -> None:
    """Dispatch in MW, flows in MW, then status and objective, as CSV sections."""
    base = case.base_mva
    fh.write("kind,index,bus_from,bus_to,mw\n")
    for k in range(case.n_g):
        fh.write(f"gen,{k + 1},{case.bus_ids[case.gen_bus[k]]},,{result.pg[k] * base:.6f}\n")
    for l in range(case.m):
        fh.write(
            f"line,{l + 1},{case.bus_ids[case.from_bus[l]]},{case.bus_ids[case.to_bus[l]]},"
            f"{result.pf[l] * base:.6f}\n"
        )
    fh.write(f"status,,,,{result.status}\n")
    fh.write(f"objective,,,,{result.objective:.6f}\n")
