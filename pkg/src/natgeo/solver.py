"""Damped linear solves against a Fisher operator, plus Marquardt damping."""

from dataclasses import dataclass, replace

import numpy as np

from .errors import Breakdown
from .geometry import cholesky_solver


@dataclass(frozen=True)
class DampingState:
    """Damping coefficient and its adaptation constants.

    Corrections (midpoint, geodesic) are switched off while
    ``epsilon > threshold``.
    """

    epsilon: float = 45.0
    threshold: float = 5.0
    grow: float = 1.5
    shrink: float = 2.0 / 3.0

    def __post_init__(self):
        if self.epsilon < 0 or self.threshold < 0:
            raise ValueError("epsilon and threshold must be non-negative")
        if not 0 < self.shrink < 1 < self.grow:
            raise ValueError("need 0 < shrink < 1 < grow")

    @property
    def corrections_active(self):
        return self.epsilon <= self.threshold


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 50
    tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0:
            raise ValueError("max_iters must be >= 1 and tol > 0")


def _eps(damping):
    return damping.epsilon if isinstance(damping, DampingState) else float(damping)


def damped_solve(matvec, diag, rhs, damping, cfg=CgConfig()):
    """Truncated CG on ``v -> matvec(v) + epsilon * diag * v``.

    Starts from zero and stops once the residual norm drops below
    ``cfg.tol * |rhs|`` or after ``cfg.max_iters`` iterations.

    Returns
    -------
    x : ndarray
        The iterate with the smallest residual seen (never worse than zero).
    iters : int
        CG iterations performed.
    residual : float
        Residual norm of the returned iterate.

    Raises
    ------
    Breakdown
        If a curvature denominator ``p^T A p`` is non-positive beyond round-off.
    """
    eps = _eps(damping)
    rhs = np.asarray(rhs, dtype=float)
    diag = np.asarray(diag, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs must be finite")

    def op(v):
        return np.asarray(matvec(v), dtype=float) + eps * diag * v

    x = np.zeros_like(rhs)
    r = rhs.copy()
    rr = float(r @ r)
    rhs_norm = np.sqrt(rr)
    best_x, best_res = x.copy(), rhs_norm
    if rhs_norm == 0.0:
        return x, 0, 0.0
    target = cfg.tol * rhs_norm
    p = r.copy()
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        ap = op(p)
        curv = float(p @ ap)
        scale = float(np.linalg.norm(p) * np.linalg.norm(ap))
        if curv <= 1e-14 * scale:
            if curv < -1e-10 * scale:
                raise Breakdown(f"non-positive curvature {curv!r} at CG iteration {iters}")
            break
        step = rr / curv
        x = x + step * p
        r = r - step * ap
        rr_new = float(r @ r)
        res = np.sqrt(rr_new)
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= target:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return best_x, iters, float(best_res)


def dense_damped_solve(g, diag, rhs, damping):
    """Cholesky solve of ``(g + epsilon diag(diag)) x = rhs`` for small systems."""
    eps = _eps(damping)
    a = np.asarray(g, dtype=float) + eps * np.diag(np.asarray(diag, dtype=float))
    x = cholesky_solver(a)(np.asarray(rhs, dtype=float))
    return x, 0, float(np.linalg.norm(a @ x - rhs))


def diag_estimate(matvec, n_params, mode="exact_probes"):
    """Diagonal used for damping.

    ``exact_probes`` reads ``e_i^T G e_i`` with ``n_params`` products;
    ``ones`` gives identity damping.
    """
    if mode == "ones":
        return np.ones(n_params)
    if mode != "exact_probes":
        raise ValueError(f"unknown diag mode {mode!r}")
    out = np.empty(n_params)
    e = np.zeros(n_params)
    for i in range(n_params):
        e[i] = 1.0
        out[i] = matvec(e)[i]
        e[i] = 0.0
    return out


def marquardt_adapt(damping, rho):
    """Levenberg-Marquardt update of ``epsilon`` from the reduction ratio ``rho``.

    ``rho > 3/4`` shrinks, ``rho < 1/4`` grows, anything between is kept.
    """
    if rho > 0.75:
        return replace(damping, epsilon=damping.epsilon * damping.shrink)
    if rho < 0.25:
        return replace(damping, epsilon=damping.epsilon * damping.grow)
    return damping
