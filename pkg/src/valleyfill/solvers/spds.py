"""
Shrunken primal-dual subgradient iteration and its regularised/classic cousins.

One SPDS iteration, with gradients taken at iteration ``l`` for every block::

    U_i <- P_Ui( P_Ui(tau_u U_i - alpha grad_Ui L) / tau_u )
    lam <- P_D ( P_D (tau_l lam + beta d(U))     / tau_l )

``P_Ui`` projects onto the vehicle's box-hyperplane set and ``P_D`` onto the
nonnegative part of the ball of radius ``d_lambda``. Setting both shrink
factors to 1 recovers the classic projected primal-dual update.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, NumericError
from ..proj import project_box_hyperplane_rows, project_nonneg_ball
from ..qp import ChargingProblem, aggregate_load, constraint_values, objective
from .report import SolveReport

log = logging.getLogger(__name__)

# Step sizes reported for the 700-vehicle study, stated in W, V^2 and W^2.
STUDY_ALPHA_SI = 2.8e-10
STUDY_BETA_SI = 1.8
STUDY_D_LAMBDA_SI = 5e5
STUDY_TAU = 0.974


@dataclass(frozen=True)
class SpdsConfig:
    alpha: float
    beta: float
    tau_u: float = STUDY_TAU
    tau_lambda: float = STUDY_TAU
    d_lambda: float = 1e6
    max_iters: int = 25
    tol: float = 1e-4
    rpds_dual_reg: float = 0.1

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError("step sizes must be positive")
        if not (0 < self.tau_u < 1 and 0 < self.tau_lambda < 1):
            raise DomainError("shrink factors must lie in (0, 1)")
        if not self.d_lambda > 0:
            raise DomainError("d_lambda must be positive")
        if self.max_iters < 1:
            raise DomainError("max_iters must be at least 1")
        if self.rpds_dual_reg < 0:
            raise DomainError("rpds_dual_reg must be nonnegative")


def study_config(v_base_volts: float = 4160.0 / np.sqrt(3.0), **overrides) -> SpdsConfig:
    """Step sizes of the 700-vehicle study converted to kW and p.u.^2.

    With powers in kW the objective shrinks by 1e6 relative to W^2, and a
    squared voltage of ``V_b^2`` volts^2 is 1 p.u.^2. Matching both updates
    term by term gives ``alpha_kW = 1e6 alpha_SI``,
    ``beta = beta_SI V_b^4 / 1e6`` and ``d_lambda = d_SI V_b^2 / 1e6``.
    """
    vb2 = float(v_base_volts) ** 2
    params = dict(
        alpha=STUDY_ALPHA_SI * 1e6,
        beta=STUDY_BETA_SI * vb2**2 / 1e6,
        tau_u=STUDY_TAU,
        tau_lambda=STUDY_TAU,
        d_lambda=STUDY_D_LAMBDA_SI * vb2 / 1e6,
        max_iters=25,
        tol=1e-4,
        rpds_dual_reg=0.1,
    )
    params.update(overrides)
    return SpdsConfig(**params)


@dataclass
class IterationState:
    u: np.ndarray  # (n, K)
    lam: np.ndarray  # (K, h)
    iter: int = 0
    eps: float = np.inf


def initial_state(problem: ChargingProblem) -> IterationState:
    return IterationState(problem.zeros_primal(), problem.zeros_dual())


def shrunken_projection_rows(V_shrunk_step, e, tau):
    """``P(P(x) / tau)`` row-wise for the box-hyperplane sets."""
    inner = project_box_hyperplane_rows(V_shrunk_step, e)
    return project_box_hyperplane_rows(inner / tau, e)


def primal_update(U, grad, e, alpha, tau_u):
    """SPDS primal update for a block of rows; ``tau_u = 1`` gives plain PDS."""
    return shrunken_projection_rows(tau_u * U - alpha * grad, e, tau_u)


def dual_update(lam, d, beta, tau_lambda, d_lambda):
    """SPDS dual update on a ``(K, h)`` multiplier array."""
    shape = lam.shape
    inner = project_nonneg_ball((tau_lambda * lam + beta * d).reshape(-1), d_lambda)
    return project_nonneg_ball(inner / tau_lambda, d_lambda).reshape(shape)


def ev_gradient(p_bar_i, aggregate, u_i, rho, lam, d_col):
    """Gradient block of one vehicle from the broadcast aggregate and multipliers.

    Works on row blocks: ``p_bar_i`` is ``(m,)``, ``u_i`` is ``(m, K)`` and
    ``d_col`` is the matching ``(h, m)`` slice of ``D``.
    """
    pull = np.zeros_like(u_i)
    for k in range(d_col.shape[0]):
        pull += d_col[k][:, None] * lam[:, k][None, :]
    return p_bar_i[:, None] * aggregate[None, :] + rho * u_i - pull


def spds_primal_step(problem: ChargingProblem, state: IterationState, config: SpdsConfig, i: int):
    """Next charging profile of vehicle ``i`` (a K-vector)."""
    A = aggregate_load(problem, state.u)
    g = ev_gradient(
        problem.p_bar[i : i + 1], A, state.u[i : i + 1], problem.rho, state.lam,
        problem.d_matrix[:, i : i + 1],
    )
    return primal_update(state.u[i : i + 1], g, problem.e[i : i + 1], config.alpha, config.tau_u)[0]


def spds_dual_step(problem: ChargingProblem, state: IterationState, config: SpdsConfig):
    """Next multiplier array ``(K, h)`` from the current primal iterate."""
    d = constraint_values(problem, state.u)
    return dual_update(state.lam, d, config.beta, config.tau_lambda, config.d_lambda)


def _all_gradients(problem, U, lam):
    A = aggregate_load(problem, U)
    return ev_gradient(problem.p_bar, A, U, problem.rho, lam, problem.d_matrix)


def _check_finite(U, lam, it):
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(lam))):
        raise NumericError(f"non-finite iterate at iteration {it}", iteration=it)


def _iterate(problem, config, step, name, state=None, callback=None):
    state = state if state is not None else initial_state(problem)
    report = SolveReport(name)
    U, lam = state.u, state.lam
    report.termination = "max_iters"
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        # a diverging step shows up as non-finite input to the projections
        _check_finite(U, lam, it)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                U_new, lam_new = step(U, lam)
        except NumericError as exc:
            raise NumericError(f"{exc} at iteration {it}", iteration=it) from exc
        _check_finite(U_new, lam_new, it)
        eps = float(np.linalg.norm(U_new - U))
        elapsed = time.perf_counter() - t0
        U, lam = U_new, lam_new
        d = constraint_values(problem, U)
        report.record(
            objective(problem, U),
            max(0.0, float(d.max())),
            eps,
            float(np.linalg.norm(lam)),
            elapsed,
            aggregate=aggregate_load(problem, U),
            lam=lam,
        )
        if callback is not None:
            callback(IterationState(U, lam, it, eps))
        log.debug("%s iter %d: F=%.6g eps=%.3e", name, it, report.objective[-1], eps)
        if eps <= config.tol:
            report.termination = "converged"
            break
    report.u, report.lam = U, lam
    return report


def run_spds(problem: ChargingProblem, config: SpdsConfig, state=None, callback=None) -> SolveReport:
    """Synchronous in-process SPDS (every charger steps, then the operator)."""
    if problem.baseline_margin < 0:
        raise DomainError("baseline violates the voltage floor; no Slater point at idle")

    def step(U, lam):
        g = _all_gradients(problem, U, lam)
        U_new = primal_update(U, g, problem.e, config.alpha, config.tau_u)
        lam_new = dual_update(
            lam, constraint_values(problem, U), config.beta, config.tau_lambda, config.d_lambda
        )
        return U_new, lam_new

    return _iterate(problem, config, step, "spds", state, callback)


def run_pds(problem: ChargingProblem, config: SpdsConfig, state=None, callback=None) -> SolveReport:
    """Classic projected primal-dual iteration (no shrinkage), same dual set."""

    def step(U, lam):
        g = _all_gradients(problem, U, lam)
        U_new = project_box_hyperplane_rows(U - config.alpha * g, problem.e)
        lam_new = project_nonneg_ball(
            (lam + config.beta * constraint_values(problem, U)).reshape(-1), config.d_lambda
        ).reshape(lam.shape)
        return U_new, lam_new

    return _iterate(problem, config, step, "pds", state, callback)


def run_rpds(problem: ChargingProblem, config: SpdsConfig, state=None, callback=None) -> SolveReport:
    """Projected primal-dual on ``L(U, lam) - (eps_d / 2) ||lam||^2``.

    Only the dual is regularised; with ``rpds_dual_reg = 0`` this is
    :func:`run_pds`.
    """
    reg = config.rpds_dual_reg

    def step(U, lam):
        g = _all_gradients(problem, U, lam)
        U_new = project_box_hyperplane_rows(U - config.alpha * g, problem.e)
        ascent = constraint_values(problem, U) - reg * lam
        lam_new = project_nonneg_ball(
            (lam + config.beta * ascent).reshape(-1), config.d_lambda
        ).reshape(lam.shape)
        return U_new, lam_new

    return _iterate(problem, config, step, "rpds", state, callback)
