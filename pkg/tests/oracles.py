"""Independent brute-force references for the projection operators."""

import itertools

import numpy as np


def _labellings(K):
    return np.array(list(itertools.product((0, 1, 2), repeat=K)))


def box_hyperplane_bruteforce(v, e, tol=1e-12):
    """Enumerate every lower/upper/free labelling of the coordinates.

    For each labelling the free coordinates share one shift that restores the
    sum; the closest feasible candidate is the projection.
    """
    v = np.asarray(v, dtype=float)
    lab = _labellings(v.size)  # (3^K, K)
    free = lab == 2
    n_free = free.sum(axis=1)
    n_up = (lab == 1).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        shift = ((free * v).sum(axis=1) + n_up - e) / n_free
    U = np.where(lab == 1, 1.0, 0.0)
    U = np.where(free, v[None, :] - np.nan_to_num(shift)[:, None], U)
    ok = (
        np.all(U >= -tol, axis=1)
        & np.all(U <= 1 + tol, axis=1)
        & (np.abs(U.sum(axis=1) - e) <= 1e-9)
    )
    dist = np.where(ok, np.linalg.norm(U - v, axis=1), np.inf)
    return np.clip(U[int(np.argmin(dist))], 0, 1)


def nonneg_ball_kkt(v, radius, tol=1e-12):
    """Enumerate supports and ball activity, keep the point satisfying KKT.

    Stationarity ``y - v + mu y - w = 0`` with ``w >= 0`` on the zero set,
    ``mu >= 0`` and ``mu (||y|| - r) = 0``.
    """
    v = np.asarray(v, dtype=float)
    m = v.size
    sols = []
    for support in itertools.product((False, True), repeat=m):
        S = np.array(support)
        for active in (False, True):
            y = np.zeros(m)
            if active:
                nv = np.linalg.norm(v[S])
                if nv == 0:
                    continue
                y[S] = radius * v[S] / nv
                mu = nv / radius - 1.0
            else:
                y[S] = v[S]
                mu = 0.0
            w = -v[~S]  # multipliers of y_j >= 0 on the zero set
            ok = (
                mu >= -tol
                and np.all(y[S] >= -tol)
                and np.all(w >= -tol)
                and np.linalg.norm(y) <= radius * (1 + tol)
            )
            if ok:
                sols.append(y)
    if not sols:
        raise AssertionError("no KKT point found")
    return sols[0]
