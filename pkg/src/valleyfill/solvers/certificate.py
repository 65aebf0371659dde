"""
Sufficient-condition check for linear convergence of the shrunken iteration.

All constants come from the problem data and the step/shrink tuple:

* ``c``: strong-monotonicity constant of the shrink-augmented saddle map,
  ``min(rho + (1 - tau_u) / alpha, (1 - tau_lambda) / beta)``.
* ``L_gradG = n K max(pbar)^2`` and ``L_d = h K max_j ||row_j(D)||``.
* ``L_Phi`` is the norm of ``(L_U, L_lambda)`` with
  ``L_U = rho + (1 - tau_u) / alpha + L_gradG + L_d`` and
  ``L_lambda = (1 - tau_lambda) / beta + L_d``.

``varrho`` bounds the squared contraction factor of the iterates towards the
saddle point. The step-size condition guarantees ``varrho < 1``; when it
fails the report still carries ``varrho`` so callers can see by how much.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..qp import ChargingProblem
from .spds import SpdsConfig


@dataclass(frozen=True)
class CertificateReport:
    c: float
    l_grad_g: float
    l_d: float
    l_phi: float
    varrho: float
    condition_28_holds: bool
    l_u: float
    l_lambda: float
    alpha_hat: float
    beta_hat: float
    tau_hat: float
    delta: float
    phi: float
    lhs: float  # left side of the step-size condition
    rhs: float  # right side

    @property
    def contraction_factor(self) -> float:
        """``sqrt(varrho)``; meaningful as a rate only when ``varrho < 1``."""
        return math.sqrt(max(self.varrho, 0.0))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["contraction_factor"] = self.contraction_factor
        return out

    def lines(self) -> list[str]:
        verdict = "holds" if self.condition_28_holds else "FAILS"
        return [
            f"c          = {self.c:.6e}",
            f"L_gradG    = {self.l_grad_g:.6e}",
            f"L_d        = {self.l_d:.6e}",
            f"L_Phi      = {self.l_phi:.6e}",
            f"varrho     = {self.varrho:.6e}",
            f"condition  : {self.lhs:.6e} < {self.rhs:.6e} -> {verdict}",
        ]


def _sgn(x: float) -> float:
    # sgn(0) = 0: the equal-step case sits between the two proof branches
    return float(np.sign(x))


def certificate_constants(
    n, h, K, p_bar_max, d_row_norm_max, rho, alpha, beta, tau_u, tau_lambda
) -> CertificateReport:
    """Scalar form of :func:`certify`, usable without assembling a problem."""
    l_grad_g = n * K * p_bar_max**2
    l_d = h * K * d_row_norm_max
    prim = rho + (1.0 - tau_u) / alpha
    dual = (1.0 - tau_lambda) / beta
    c = min(prim, dual)
    l_u = prim + l_grad_g + l_d
    l_lambda = dual + l_d
    l_phi = math.hypot(l_u, l_lambda)

    a_hat = alpha / tau_u**2
    b_hat = beta / tau_lambda**2
    t_hat = a_hat - b_hat
    if a_hat > b_hat:
        delta = alpha
    elif a_hat < b_hat:
        delta = beta
    else:
        delta = max(alpha, beta)
    s = _sgn(t_hat)
    phi = max(l_d**2, 1.0 - (1.0 - s) * dual - (1.0 + s) * prim)
    hi, lo = max(a_hat, b_hat), min(a_hat, b_hat)

    varrho = (
        max(a_hat / alpha, b_hat / beta)
        + delta * hi * l_phi**2
        - 2.0 * c * lo
        + abs(t_hat) * phi
    )
    lhs = max(1.0 / tau_u**2, 1.0 / tau_lambda**2) + delta * hi * l_phi**2 - 1.0
    rhs = 2.0 * c * hi
    return CertificateReport(
        c=c,
        l_grad_g=l_grad_g,
        l_d=l_d,
        l_phi=l_phi,
        varrho=varrho,
        condition_28_holds=bool(lhs < rhs),
        l_u=l_u,
        l_lambda=l_lambda,
        alpha_hat=a_hat,
        beta_hat=b_hat,
        tau_hat=t_hat,
        delta=delta,
        phi=phi,
        lhs=lhs,
        rhs=rhs,
    )


def certify(problem: ChargingProblem, config: SpdsConfig) -> CertificateReport:
    """Evaluate the convergence constants for ``problem`` under ``config``."""
    row_norms = np.linalg.norm(problem.d_matrix, axis=1)
    return certificate_constants(
        problem.n,
        problem.h,
        problem.K,
        float(problem.p_bar.max()),
        float(row_norms.max()),
        problem.rho,
        config.alpha,
        config.beta,
        config.tau_u,
        config.tau_lambda,
    )
