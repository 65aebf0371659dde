"""
Euclidean projections used by every solver.

``project_box_hyperplane`` maps onto ``{u in [0,1]^K : sum(u) = e}``. The
solution is ``clip(v - s, 0, 1)`` for the unique shift ``s`` that restores the
sum. The clipped sum is continuous, piecewise linear and nonincreasing in
``s`` with breakpoints at ``v_j`` and ``v_j - 1``; evaluating it at the sorted
breakpoints brackets the root on one linear segment, where a single division
gives the shift exactly.

``project_nonneg_ball`` maps onto ``{y >= 0, ||y|| <= r}``. Clipping at zero
and then scaling radially is exact: the set is a convex cone cut by a ball
centred at the cone's apex, and scaling a point of the cone keeps it there.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, NumericError

_CHUNK = 256


def project_box_hyperplane_rows(V, e) -> np.ndarray:
    """Row-wise projection of ``V`` (``(n, K)``) with per-row sums ``e`` (``(n,)``)."""
    V = np.ascontiguousarray(V, dtype=float)
    if V.ndim != 2:
        raise DomainError("expected a 2-D array of rows")
    n, K = V.shape
    e = np.broadcast_to(np.asarray(e, dtype=float), (n,))
    if np.any(e < 0) or np.any(e > K) or not np.all(np.isfinite(e)):
        raise DomainError(f"row sums must lie in [0, {K}]")
    if not np.all(np.isfinite(V)):
        raise NumericError("cannot project non-finite values")

    out = np.empty_like(V)
    at_zero = e == 0
    at_full = e == K
    feasible = (
        np.all(V >= 0, axis=1) & np.all(V <= 1, axis=1) & (np.abs(V.sum(axis=1) - e) <= 1e-13 * K)
    )
    out[at_zero] = 0.0
    out[at_full] = 1.0
    out[feasible & ~at_zero & ~at_full] = V[feasible & ~at_zero & ~at_full]
    todo = ~(at_zero | at_full | feasible)
    if not np.any(todo):
        return out

    W = V[todo]
    et = e[todo]
    out[todo] = _solve_rows(W, et)
    return out


def _solve_rows(W, e):
    m, K = W.shape
    # the clipped sum changes slope only where some entry crosses 0 or 1
    bp = np.sort(np.concatenate([W - 1.0, W], axis=1), axis=1)  # (m, 2K)
    S = np.empty_like(bp)
    for lo in range(0, m, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        S[sl] = np.clip(W[sl, None, :] - bp[sl, :, None], 0.0, 1.0).sum(axis=2)
    # first breakpoint whose clipped sum is already at or below the target
    j = np.argmax(S <= e[:, None], axis=1)
    j = np.maximum(j, 1)
    rows = np.arange(m)
    b0, b1 = bp[rows, j - 1], bp[rows, j]
    s0, s1 = S[rows, j - 1], S[rows, j]
    with np.errstate(invalid="ignore", divide="ignore"):
        interp = np.where(s0 > s1, b0 + (s0 - e) * (b1 - b0) / (s0 - s1), b1)
    # exact shift from the free set of the bracketing segment
    mid = 0.5 * (b0 + b1)
    Z = W - mid[:, None]
    free = (Z > 0) & (Z < 1)
    n_free = free.sum(axis=1)
    n_upper = (Z >= 1).sum(axis=1)
    v_free = np.where(free, W, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = (v_free + n_upper - e) / n_free
    shift = np.where(n_free > 0, exact, interp)
    U = np.clip(W - shift[:, None], 0.0, 1.0)
    U_alt = np.clip(W - interp[:, None], 0.0, 1.0)
    worse = np.abs(U.sum(axis=1) - e) > np.abs(U_alt.sum(axis=1) - e)
    return np.where(worse[:, None], U_alt, U)


def project_box_hyperplane(v, e: float) -> np.ndarray:
    """Project a K-vector onto ``{u in [0,1]^K : sum(u) = e}``.

    Examples
    --------
    >>> project_box_hyperplane([0.5, 0.5], 1.6)
    array([0.8, 0.8])
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DomainError("expected a 1-D vector")
    return project_box_hyperplane_rows(v[None, :], np.array([e], dtype=float))[0]


def project_nonneg_ball(v, radius: float) -> np.ndarray:
    """Project onto the nonnegative part of the origin-centred ball of ``radius``."""
    if not radius > 0:
        raise DomainError("radius must be positive")
    y = np.maximum(np.asarray(v, dtype=float), 0.0)
    norm = np.linalg.norm(y)
    if norm <= radius:
        return y
    return y * (radius / norm)
