"""Primal active-set solver for small convex QPs.

    min  1/2 x'Qx + c'x
    s.t. A_eq x  = b_eq
         G x    <= h

Q must be symmetric positive semidefinite. With Q = 0 the same iteration is
an active-set LP method; Bland's rule (lowest index leaves, lowest index
blocks) keeps degenerate vertices from cycling. A phase-1 LP on (x, t) with
``G x - t <= h`` finds a feasible start when the supplied one is not.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class QPResult:
    x: np.ndarray
    status: str
    objective: float
    active: list = field(default_factory=list)  # inequality rows in the final working set
    eq_multipliers: np.ndarray = None
    ineq_multipliers: np.ndarray = None  # full length, zero off the working set
    iterations: int = 0
    kkt_residual: float = np.inf
    infeasibility: float = 0.0


def _null_space(a: np.ndarray, ncols: int) -> np.ndarray:
    if a.shape[0] == 0:
        return np.eye(ncols)
    _, s, vt = np.linalg.svd(a)
    tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)
    rank = int((s > tol).sum())
    return vt[rank:].T


def _active_set_loop(Q, c, A_eq, G, h, x, working, feas_tol, opt_tol, max_iter):
    """Run the active-set iteration from a feasible ``x``.

    Returns (x, working, status, iterations, eq_mult, ineq_mult_on_working).
    """
    n = x.size
    neq = A_eq.shape[0]
    working = list(working)
    qscale = max(1.0, float(np.abs(Q).max()) if Q.size else 1.0)
    for it in range(1, max_iter + 1):
        g = Q @ x + c
        gscale = max(1.0, float(np.abs(g).max()))
        a_w = np.vstack([A_eq, G[working]]) if working else A_eq
        Z = _null_space(a_w, n)
        p = None
        newton = True
        if Z.shape[1] > 0:
            gr = Z.T @ g
            hr = Z.T @ Q @ Z
            mu, U = np.linalg.eigh(hr)
            flat = mu <= 1e-10 * qscale
            if flat.any():
                U0 = U[:, flat]
                g0 = U0 @ (U0.T @ gr)
                if np.abs(g0).max() > opt_tol * gscale:
                    p = -Z @ g0
                    newton = False
            if p is None:
                Up = U[:, ~flat]
                p = -Z @ (Up @ ((Up.T @ gr) / mu[~flat])) if Up.shape[1] else np.zeros(n)
        else:
            p = np.zeros(n)

        if np.abs(p).max() <= 1e-12 * (1.0 + np.abs(x).max()):
            # stationary on the working face: inspect multipliers
            lam, *_ = np.linalg.lstsq(a_w.T, -g, rcond=None)
            lam_ineq = lam[neq:]
            negative = [j for j, v in enumerate(lam_ineq) if v < -opt_tol * gscale]
            if not negative:
                return x, working, OPTIMAL, it, lam[:neq], lam_ineq
            # Bland: drop the lowest-numbered constraint with a negative multiplier
            drop = min(negative, key=lambda j: working[j])
            working.pop(drop)
            continue

        gp = G @ p
        slack = np.maximum(h - G @ x, 0.0)
        in_w = np.zeros(G.shape[0], dtype=bool)
        in_w[working] = True
        step_cap = 1.0 if newton else np.inf
        pscale = 1e-14 * (1.0 + np.abs(p).max()) * (1.0 + np.abs(G).max())
        cand = np.flatnonzero((~in_w) & (gp > pscale))
        alpha, block = step_cap, None
        if cand.size:
            ratios = slack[cand] / gp[cand]
            k = int(np.argmin(ratios))  # first minimum -> lowest index on ties
            if ratios[k] < alpha:
                alpha, block = float(ratios[k]), int(cand[k])
        if not np.isfinite(alpha):
            return x, working, UNBOUNDED, it, None, None
        x = x + alpha * p
        if block is not None:
            working.append(block)
    return x, working, ITERATION_LIMIT, max_iter, None, None


def kkt_residual(Q, c, A_eq, b_eq, G, h, x, eq_mult, ineq_mult) -> float:
    g = Q @ x + c
    stat = g + A_eq.T @ eq_mult + G.T @ ineq_mult
    slack = h - G @ x
    parts = [
        np.abs(stat).max(initial=0.0),
        np.abs(A_eq @ x - b_eq).max(initial=0.0),
        max(0.0, -slack.min(initial=0.0)),
        max(0.0, -ineq_mult.min(initial=0.0)),
        np.abs(ineq_mult * slack).max(initial=0.0),
    ]
    return float(max(parts))


def solve_qp(Q, c, A_eq, b_eq, G, h, x0=None, feas_tol=1e-7, opt_tol=1e-8,
             max_iter=None) -> QPResult:
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float)
    n = c.size
    if max_iter is None:
        max_iter = 20 * (n + G.shape[0]) + 50
    for arr in (Q, c, A_eq, b_eq, G, h):
        if not np.all(np.isfinite(arr)):
            raise ValueError("QP data must be finite")

    if x0 is None:
        x0, *_ = np.linalg.lstsq(A_eq, b_eq, rcond=None)
    x = np.asarray(x0, dtype=float).copy()
    violation = float((G @ x - h).max(initial=0.0))
    iters = 0
    working: list[int] = []

    if violation > 0.0:
        x, working, infeas, it1 = _phase_one(A_eq, b_eq, G, h, x, violation,
                                             feas_tol, opt_tol, max_iter)
        iters += it1
        if infeas is None:
            return QPResult(x=x, status=ITERATION_LIMIT, objective=np.nan, iterations=iters)
        if infeas > feas_tol:
            return QPResult(x=x, status=INFEASIBLE, objective=np.nan,
                            iterations=iters, infeasibility=infeas)

    x, working, status, it2, eq_mult, lam_w = _active_set_loop(
        Q, c, A_eq, G, h, x, working, feas_tol, opt_tol, max_iter)
    iters += it2
    objective = float(0.5 * x @ Q @ x + c @ x)
    res = QPResult(x=x, status=status, objective=objective, active=sorted(working),
                   iterations=iters)
    if status == OPTIMAL:
        ineq = np.zeros(G.shape[0])
        ineq[working] = lam_w
        res.eq_multipliers = eq_mult
        res.ineq_multipliers = ineq
        res.kkt_residual = kkt_residual(Q, c, A_eq, b_eq, G, h, x, eq_mult, ineq)
    return res


def _phase_one(A_eq, b_eq, G, h, x, t0, feas_tol, opt_tol, max_iter):
    """Minimise the largest violation t; returns (x, working, t*, iterations)."""
    n = x.size
    nineq = G.shape[0]
    Q1 = np.zeros((n + 1, n + 1))
    c1 = np.zeros(n + 1)
    c1[-1] = 1.0
    A1 = np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
    G1 = np.vstack([
        np.hstack([G, -np.ones((nineq, 1))]),
        np.concatenate([np.zeros(n), [-1.0]])[None, :],
    ])
    h1 = np.concatenate([h, [0.0]])
    z = np.concatenate([x, [t0]])
    z, working, status, it, _, _ = _active_set_loop(
        Q1, c1, A1, G1, h1, z, [], feas_tol, opt_tol, max_iter)
    if status != OPTIMAL:
        return z[:n], [], None, it
    # phase 2 restarts from an empty working set: rows independent in (x, t)
    # need not stay independent in x alone
    return z[:n], [], max(float(z[-1]), 0.0), it
