"""
Reference solver for the full charging QP.

The problem is handed to the Clarabel interior-point solver in a lifted form
with the aggregate load as an auxiliary variable, which keeps the Hessian
diagonal and every constraint row sparse::

    min  1/2 ||a||^2 + rho/2 ||u||^2
    s.t. a - sum_i pbar_i u_i = P_b,   1^T u_i = e_i,
         -D_d u <= -y_b,   0 <= u <= 1

On small problems the interior-point answer is then polished: the active set
it identifies is frozen and the resulting equality-constrained QP is solved
directly, which takes the KKT residuals down to rounding level.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ..errors import DomainError, NumericError
from ..proj import project_box_hyperplane_rows
from ..qp import ChargingProblem, aggregate_load, constraint_values, grad_u, objective
from .report import SolveReport

log = logging.getLogger(__name__)

POLISH_MAX_VARS = 4000


def kkt_residuals(problem: ChargingProblem, U, lam) -> dict:
    """Optimality residuals of a primal-dual pair.

    ``stationarity`` uses the natural map ``||U - P_U(U - grad_U L)||_inf``,
    which is zero exactly when ``U`` minimises the Lagrangian over the local
    sets. ``complementarity`` is ``max |lam_j d_j|``.
    """
    U = np.asarray(U, dtype=float)
    lam = np.asarray(lam, dtype=float)
    g = grad_u(problem, U, lam)
    nat = U - project_box_hyperplane_rows(U - g, problem.e)
    d = constraint_values(problem, U)
    local = max(
        float(np.abs(U.sum(axis=1) - problem.e).max(initial=0.0)),
        float(np.maximum(-U, 0).max(initial=0.0)),
        float(np.maximum(U - 1, 0).max(initial=0.0)),
    )
    return {
        "stationarity": float(np.abs(nat).max(initial=0.0)),
        "primal_feasibility": max(float(np.maximum(d, 0).max(initial=0.0)), local),
        "complementarity": float(np.abs(lam * d).max(initial=0.0)),
        "dual_feasibility": float(np.maximum(-lam, 0).max(initial=0.0)),
    }


def _max_residual(res: dict) -> float:
    return max(res.values())


def _lifted_qp(problem: ChargingProblem):
    n, K, h = problem.n, problem.K, problem.h
    nu = n * K
    nx = nu + K
    P = sp.diags(np.r_[np.full(nu, problem.rho), np.ones(K)], format="csc")
    q = np.zeros(nx)

    # a_k - sum_i pbar_i u_ik = P_b[k]
    rows = np.repeat(np.arange(K), n)
    cols = (np.arange(n)[None, :] * K + np.arange(K)[:, None]).reshape(-1)
    vals = -np.tile(problem.p_bar, K)
    A_agg = sp.csc_matrix(
        (np.r_[vals, np.ones(K)], (np.r_[rows, np.arange(K)], np.r_[cols, nu + np.arange(K)])),
        shape=(K, nx),
    )
    # sum_k u_ik = e_i
    A_sum = sp.csc_matrix(
        (np.ones(nu), (np.repeat(np.arange(n), K), np.arange(nu))), shape=(n, nx)
    )
    # -D_d u <= -y_b, rows ordered (k, node)
    D = problem.d_matrix
    r_idx = (np.arange(K)[:, None, None] * h + np.arange(h)[None, :, None]) * np.ones((1, 1, n))
    c_idx = np.arange(n)[None, None, :] * K + np.arange(K)[:, None, None] + np.zeros((1, h, 1))
    v = np.broadcast_to(-D[None, :, :], (K, h, n))
    A_volt = sp.csc_matrix(
        (v.reshape(-1), (r_idx.reshape(-1).astype(int), c_idx.reshape(-1).astype(int))),
        shape=(K * h, nx),
    )
    eye = sp.eye(nu, nx, format="csc")
    A = sp.vstack([A_agg, A_sum, A_volt, -eye, eye], format="csc")
    b = np.r_[problem.p_b, problem.e, -problem.y_b.reshape(-1), np.zeros(nu), np.ones(nu)]
    cones = [
        clarabel.ZeroConeT(K + n),
        clarabel.NonnegativeConeT(K * h + 2 * nu),
    ]
    return P, q, A, b, cones


def _interior_point(problem: ChargingProblem, tol: float):
    P, q, A, b, cones = _lifted_qp(problem)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = max(tol, 1e-12)
    settings.tol_feas = settings.tol_ktratio = max(tol, 1e-12)
    settings.max_iter = 400
    sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    status = str(sol.status)
    if "Solved" not in status:
        raise NumericError(f"interior-point solve ended with status {status}")
    n, K, h = problem.n, problem.K, problem.h
    U = np.asarray(sol.x)[: n * K].reshape(n, K)
    z = np.asarray(sol.z)
    lam = z[K + n : K + n + K * h].reshape(K, h)
    return np.clip(U, 0.0, 1.0), np.maximum(lam, 0.0), status


def _polish(problem: ChargingProblem, U, lam, active_tol=1e-6):
    """Solve the equality QP on the active set found by the interior point."""
    n, K, h = problem.n, problem.K, problem.h
    at_lo = U <= active_tol
    at_hi = U >= 1 - active_tol
    free = ~(at_lo | at_hi)
    fixed_val = np.where(at_hi, 1.0, 0.0)
    act = (lam > active_tol * max(1.0, float(lam.max(initial=0.0)))) | (
        np.abs(constraint_values(problem, U)) <= active_tol * 1e-3
    )
    fi = np.flatnonzero(free.reshape(-1))
    nf = fi.size
    if nf == 0:
        return None
    ev_of = fi // K
    step_of = fi % K
    pb = problem.p_bar
    # Hessian of F on free variables: pbar_i pbar_j [k == k'] + rho I
    same_k = step_of[:, None] == step_of[None, :]
    H = np.where(same_k, pb[ev_of][:, None] * pb[ev_of][None, :], 0.0) + problem.rho * np.eye(nf)
    A_fixed = problem.p_b + pb @ fixed_val  # aggregate from fixed entries
    c = pb[ev_of] * A_fixed[step_of] + problem.rho * fixed_val.reshape(-1)[fi]

    eq_rows, eq_rhs = [], []
    # row sums over free entries
    for i in np.unique(ev_of):
        row = np.zeros(nf)
        row[ev_of == i] = 1.0
        eq_rows.append(row)
        eq_rhs.append(problem.e[i] - fixed_val[i].sum())
    n_sum = len(eq_rows)
    act_idx = np.argwhere(act)  # (k, j)
    D = problem.d_matrix
    for k, j in act_idx:
        # y_b - sum_i D[j,i] U[i,k] = 0
        row = np.where(step_of == k, D[j, ev_of], 0.0)
        eq_rows.append(row)
        eq_rhs.append(problem.y_b[k, j] - D[j] @ fixed_val[:, k])
    C = np.array(eq_rows).reshape(-1, nf)
    m = C.shape[0]
    kkt = np.block([[H, C.T], [C, np.zeros((m, m))]])
    rhs = np.r_[-c, eq_rhs]
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    x = sol[:nf]
    mult = sol[nf:]
    U_new = fixed_val.copy().reshape(-1)
    U_new[fi] = x
    U_new = U_new.reshape(n, K)
    lam_new = np.zeros((K, h))
    # the multiplier of "d_j = 0" enters the Lagrangian as +mu * C x, and
    # C x corresponds to -(D U) so lam = -mu for the d <= 0 orientation
    for (k, j), mu in zip(act_idx, mult[n_sum:]):
        lam_new[k, j] = -mu
    if np.any(x < -1e-10) or np.any(x > 1 + 1e-10) or np.any(lam_new < -1e-10):
        return None
    return np.clip(U_new, 0.0, 1.0), np.maximum(lam_new, 0.0)


def run_centralized(problem: ChargingProblem, tol: float = 1e-8, polish: bool | None = None) -> SolveReport:
    """Solve the QP to ``tol`` on every KKT residual.

    Raises :class:`NumericError` if the residuals stay above ``tol``; the
    residual dict is attached to the exception message.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    t0 = time.perf_counter()
    U, lam, status = _interior_point(problem, tol)
    res = kkt_residuals(problem, U, lam)
    polish = problem.n * problem.K <= POLISH_MAX_VARS if polish is None else polish
    if polish and _max_residual(res) > 1e-13:
        out = _polish(problem, U, lam)
        if out is not None:
            res_p = kkt_residuals(problem, *out)
            if _max_residual(res_p) < _max_residual(res):
                U, lam, res = out[0], out[1], res_p
    elapsed = time.perf_counter() - t0
    report = SolveReport("centralized")
    d = constraint_values(problem, U)
    report.record(
        objective(problem, U),
        max(0.0, float(d.max())),
        0.0,
        float(np.linalg.norm(lam)),
        elapsed,
        aggregate=aggregate_load(problem, U),
        lam=lam,
    )
    report.u, report.lam, report.kkt = U, lam, res
    report.extra["interior_point_status"] = status
    worst = _max_residual(res)
    report.termination = "converged" if worst <= tol else "tolerance_not_met"
    log.info("centralized: F=%.10g worst KKT residual %.2e", report.objective[0], worst)
    return report


@dataclass(frozen=True)
class SlaterPoint:
    u: np.ndarray
    gamma: float  # min_j -d_j(u)
    objective: float


def slater_point(problem: ChargingProblem) -> SlaterPoint:
    """Point of the local sets maximising the smallest voltage-constraint slack.

    Linear program: minimise ``s`` subject to ``d(u) <= s`` and ``u`` in the
    local sets.
    """
    n, K, h = problem.n, problem.K, problem.h
    nu = n * K
    c = np.r_[np.zeros(nu), 1.0]
    _, _, A, _, _ = _lifted_qp(problem)
    A_volt = A[K + n : K + n + K * h, :nu]  # rows of -D_d
    A_ub = sp.hstack([A_volt, -sp.csc_matrix(np.ones((K * h, 1)))], format="csc")
    b_ub = -problem.y_b.reshape(-1)
    A_eq = sp.hstack(
        [A[K : K + n, :nu], sp.csc_matrix((n, 1))], format="csc"
    )
    bounds = [(0.0, 1.0)] * nu + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=problem.e, bounds=bounds, method="highs")
    if res.status != 0:
        raise NumericError(f"Slater LP failed: {res.message}")
    U = res.x[:nu].reshape(n, K)
    return SlaterPoint(U, float(-res.x[-1]), objective(problem, U))


def objective_lower_bound(problem: ChargingProblem, iters: int = 200) -> float:
    """Frank-Wolfe lower bound on ``min F`` over the local sets (voltage rows dropped)."""
    U = np.tile((problem.e / problem.K)[:, None], (1, problem.K))
    best = -np.inf
    for it in range(iters):
        g = grad_u(problem, U, np.zeros((problem.K, problem.h)))
        # linear minimiser over each box-hyperplane: fill cheapest slots
        S = _linear_min_rows(g, problem.e)
        gap = float(np.sum(g * (U - S)))
        best = max(best, objective(problem, U) - gap)
        U = U + 2.0 / (it + 2.0) * (S - U)
    return best


def _linear_min_rows(G, e):
    order = np.argsort(G, axis=1, kind="stable")
    S = np.zeros_like(G)
    for i, row in enumerate(order):
        whole = int(np.floor(e[i]))
        S[i, row[:whole]] = 1.0
        if whole < G.shape[1]:
            S[i, row[whole]] = e[i] - whole
    return S


def dual_bound_from_slater(problem: ChargingProblem, slack_pad: float = 0.0) -> float:
    """``(F(u_bar) - l) / gamma + sigma`` for the Slater point ``u_bar``."""
    sp_ = slater_point(problem)
    if sp_.gamma <= 0:
        raise DomainError("no strictly feasible point: Slater condition fails")
    return (sp_.objective - objective_lower_bound(problem)) / sp_.gamma + slack_pad
