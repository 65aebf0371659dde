"""
Valley-filling quadratic program.

Decision variable ``U`` is an ``(n, K)`` array of charging rates, one row per
vehicle. Voltage constraints and multipliers are ``(K, h)`` arrays, one row
per step. Flattening either in C order gives the stacked vectors of the
usual block notation (per-vehicle blocks for ``U``, per-step blocks for the
constraints), which is what the ``*_stacked`` helpers return.

    F(U)    = 1/2 ||P_b + sum_i pbar_i U_i||^2 + rho/2 ||U||^2
    d(U)    = y_b - D_d U            (feasible iff d(U) <= 0)
    L(U, l) = F(U) + l^T d(U)

``D = -2 R G diag(pbar) / S_base`` maps rates to squared-voltage change in
p.u.^2 and ``y_b = nu^2 V0 - (V0 - baseline drop)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import BaselineViolationError, DomainError
from .fleet import FleetScenario, zero_baseline
from .grid import FeederModel

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ChargingProblem:
    n: int
    h: int
    K: int
    p_bar: np.ndarray  # (n,) kW
    node_of_ev: np.ndarray  # (n,) node ids (1-based)
    d_matrix: np.ndarray  # (h, n) p.u.^2 per unit rate
    y_b: np.ndarray  # (K, h)
    e: np.ndarray  # (n,) slot requirements
    rho: float
    p_b: np.ndarray  # (K,) kW
    nu_lower: float
    v0_squared: float

    @property
    def y_b_stacked(self) -> np.ndarray:
        return self.y_b.reshape(-1)

    @property
    def baseline_margin(self) -> float:
        """Smallest slack of the voltage constraints with every charger idle."""
        return float(-self.y_b.max())

    @property
    def baseline_strictly_feasible(self) -> bool:
        return self.baseline_margin > 0

    def zeros_primal(self):
        return np.zeros((self.n, self.K))

    def zeros_dual(self):
        return np.zeros((self.K, self.h))

    def with_rho(self, rho: float) -> "ChargingProblem":
        return _replace(self, rho=float(rho))

    def to_json(self) -> str:
        """Debug dump; arrays become nested lists."""
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return json.dumps(out)


def _replace(problem, **kw):
    fields = dict(problem.__dict__)
    fields.update(kw)
    return ChargingProblem(**fields)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def assemble_problem(
    feeder: FeederModel,
    scenario: FleetScenario,
    rho: float = 1e-3,
    nu_lower: float = 0.954,
    on_violation: str = "error",
) -> ChargingProblem:
    """Build the coupled QP for a fleet on a feeder.

    ``on_violation`` decides what happens when the baseline alone breaks the
    voltage floor: ``"error"`` raises, ``"warn"`` logs and proceeds.
    """
    if not 0 < nu_lower < 1:
        raise DomainError("nu_lower must lie in (0, 1)")
    if rho < 0:
        raise DomainError("rho must be nonnegative")
    h, K = feeder.h, scenario.horizon.steps_K
    nodes = np.array([ev.node for ev in scenario.evs], dtype=int)
    if nodes.size and (nodes.min() < 1 or nodes.max() > h):
        raise DomainError(f"vehicles attached to nodes outside 1..{h}")
    p_bar = np.array([ev.max_power_kw for ev in scenario.evs], dtype=float)
    # D = -2 R G Pbar, with powers taken to per-unit
    d_matrix = -2.0 * feeder.r_matrix[:, nodes - 1] * feeder.kw_to_pu(p_bar)[None, :]

    baseline = scenario.baseline if scenario.baseline is not None else zero_baseline(h, K)
    if baseline.h != h or baseline.K != K:
        raise DomainError(f"baseline is {baseline.h}x{baseline.K}, expected {h}x{K}")
    y_dk = baseline.voltages(feeder).T  # (K, h)
    y_b = nu_lower**2 * feeder.v0_squared - y_dk
    if np.any(y_b > 0):
        worst = float(y_b.max())
        msg = f"baseline violates the voltage floor by {worst:.3e} p.u.^2"
        if on_violation == "error":
            raise BaselineViolationError(msg)
        log.warning(msg)

    e = scenario.slot_requirements()
    p_b = baseline.aggregate_kw.copy()
    _freeze(p_bar, nodes, d_matrix, y_b, e, p_b)
    return ChargingProblem(
        n=scenario.n,
        h=h,
        K=K,
        p_bar=p_bar,
        node_of_ev=nodes,
        d_matrix=d_matrix,
        y_b=y_b,
        e=e,
        rho=float(rho),
        p_b=p_b,
        nu_lower=float(nu_lower),
        v0_squared=feeder.v0_squared,
    )


def aggregate_load(problem: ChargingProblem, U) -> np.ndarray:
    """Total feeder load per step, ``P_b + sum_i pbar_i U_i`` (kW)."""
    return problem.p_b + problem.p_bar @ U


def voltage_change(problem: ChargingProblem, U) -> np.ndarray:
    """``D_d U`` reshaped to ``(K, h)``."""
    return (problem.d_matrix @ U).T


def dual_pullback(problem: ChargingProblem, lam) -> np.ndarray:
    """``D_d^T lambda`` as an ``(n, K)`` array.

    Accumulated node by node so that a single column of ``D`` gives bitwise
    the same numbers as the full matrix.
    """
    D = problem.d_matrix
    lam = np.asarray(lam, dtype=float)
    out = np.zeros((D.shape[1], lam.shape[0]))
    for k in range(D.shape[0]):
        out += D[k][:, None] * lam[:, k][None, :]
    return out


def objective(problem: ChargingProblem, U) -> float:
    U = np.asarray(U, dtype=float)
    A = aggregate_load(problem, U)
    return 0.5 * float(A @ A) + 0.5 * problem.rho * float(np.sum(U * U))


def constraint_values(problem: ChargingProblem, U) -> np.ndarray:
    """``d(U) = y_b - D_d U`` as a ``(K, h)`` array."""
    return problem.y_b - voltage_change(problem, np.asarray(U, dtype=float))


def lagrangian(problem: ChargingProblem, U, lam) -> float:
    return objective(problem, U) + float(np.sum(np.asarray(lam) * constraint_values(problem, U)))


def grad_u(problem: ChargingProblem, U, lam) -> np.ndarray:
    """``P~^T (P_b + P~ U) + rho U - D_d^T lambda`` as ``(n, K)``."""
    U = np.asarray(U, dtype=float)
    A = aggregate_load(problem, U)
    return problem.p_bar[:, None] * A[None, :] + problem.rho * U - dual_pullback(problem, lam)


def grad_lambda(problem: ChargingProblem, U) -> np.ndarray:
    return constraint_values(problem, U)


def max_violation(problem: ChargingProblem, U) -> float:
    """Largest positive entry of ``d(U)`` (0 when feasible)."""
    return max(0.0, float(constraint_values(problem, U).max()))


def objective_hessian_bound(problem: ChargingProblem) -> float:
    """Exact largest eigenvalue of the objective Hessian, ``sum pbar^2 + rho``."""
    return float(problem.p_bar @ problem.p_bar) + problem.rho
