"""Coordinate-level Riemannian primitives.

Conventions
-----------
* points and tangent vectors are 1-D float arrays of length ``n``;
* a metric is an ``(n, n)`` SPD array ``g[mu, nu]``;
* metric partials are ``dg[sigma, mu, nu] = d_sigma g[mu, nu]``;
* a connection is ``gamma[mu, alpha, beta]`` (upper index first).

The inverse metric is never formed; it is applied through a solve callable.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DomainError, DomainExit, NonFiniteState, SingularMetric

DEFAULT_EXP_SUBSTEPS = 128


@dataclass(frozen=True)
class GeodesicState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        if np.shape(self.position) != np.shape(self.velocity):
            raise ValueError("position and velocity must have equal dimension")


def cholesky_solver(g):
    """Return ``rhs -> g^{-1} rhs`` backed by a Cholesky factorization.

    Raises :class:`SingularMetric` if ``g`` is not numerically SPD.
    """
    g = np.asarray(g, dtype=float)
    if not np.isfinite(g).all():
        raise SingularMetric("metric contains non-finite entries")
    if g.shape == (2, 2):
        return _solver_2x2(g)
    try:
        factor = cho_factor(g, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularMetric(str(exc)) from exc

    def solve(rhs):
        return cho_solve(factor, rhs, check_finite=False)

    return solve


def _solver_2x2(g):
    # closed-form Cholesky; the LAPACK wrappers dominate the cost at this size
    a, b, c = float(g[0, 0]), float(g[0, 1]), float(g[1, 1])
    if not a > 0:
        raise SingularMetric("metric is not positive definite")
    l00 = math.sqrt(a)
    l10 = b / l00
    d = c - l10 * l10
    if not d > 1e-300 or d <= 1e-15 * abs(c):
        raise SingularMetric("metric is not positive definite")
    l11 = math.sqrt(d)

    def solve(rhs):
        rhs = np.asarray(rhs, dtype=float)
        out = np.empty_like(rhs)
        y0 = rhs[0] / l00
        out[1] = (rhs[1] - l10 * y0) / (l11 * l11)
        out[0] = (y0 - l10 * out[1]) / l00
        return out

    return solve


def lowered_connection(dg):
    """Christoffel symbols of the first kind.

    ``out[nu, alpha, beta] = 0.5 * (d_alpha g[nu, beta] + d_beta g[nu, alpha]
    - d_nu g[alpha, beta])``
    """
    dg = np.asarray(dg, dtype=float)
    # transpose(1, 0, 2)[n, a, b] = d_a g[n, b]; transpose(1, 2, 0)[n, a, b] = d_b g[n, a]
    return 0.5 * (dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg)


def christoffel_from_metric(g_inv_applier, dg):
    """Assemble the Levi-Civita connection from metric partials.

    Parameters
    ----------
    g_inv_applier : callable
        Maps an ``(n, k)`` right-hand side to ``g^{-1} rhs``.  See
        :func:`cholesky_solver`.
    dg : array_like, shape (n, n, n)
        ``dg[sigma, mu, nu] = d_sigma g[mu, nu]``.

    Returns
    -------
    ndarray, shape (n, n, n)
        ``gamma[mu, alpha, beta]``, exactly symmetric in ``alpha, beta``.
    """
    dg = np.asarray(dg, dtype=float)
    n = dg.shape[0]
    low = lowered_connection(dg).reshape(n, n * n)
    try:
        gamma = np.asarray(g_inv_applier(low), dtype=float).reshape(n, n, n)
    except LinAlgError as exc:
        raise SingularMetric(str(exc)) from exc
    if not np.isfinite(gamma).all():
        raise SingularMetric("connection solve produced non-finite values")
    return 0.5 * (gamma + gamma.transpose(0, 2, 1))


def contract_connection(gamma, v, w=None):
    """``gamma[mu, a, b] v^a w^b`` (``w`` defaults to ``v``)."""
    w = v if w is None else w
    return np.einsum("mab,a,b->m", gamma, v, w)


def geodesic_rhs(gamma_provider, state):
    """First-order form of the geodesic equation.

    Returns the time derivative of ``state`` as a new :class:`GeodesicState`:
    position moves with the velocity, velocity changes by
    ``-gamma(x)[mu, a, b] v^a v^b``.
    """
    v = np.asarray(state.velocity, dtype=float)
    gamma = gamma_provider(np.asarray(state.position, dtype=float))
    return GeodesicState(v.copy(), -contract_connection(gamma, v))


def rk4_integrate(field, x0, t0, t1, n_steps, callback=None):
    """Classical fourth-order Runge-Kutta with a uniform step.

    Parameters
    ----------
    field : callable
        ``field(t, x) -> dx/dt``.
    x0 : array_like
        Initial state.
    t0, t1 : float
        Integration interval, ``t1 >= t0``.
    n_steps : int
        Number of uniform steps, at least 1.
    callback : callable, optional
        Called as ``callback(t, x)`` at the initial point and after every step.

    Returns
    -------
    ndarray
        State at ``t1``.
    """
    if int(n_steps) < 1:
        raise ValueError("n_steps must be >= 1")
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    n_steps = int(n_steps)
    x = np.array(x0, dtype=float)
    h = (t1 - t0) / n_steps
    t = float(t0)
    if callback is not None:
        callback(t, x)
    for i in range(n_steps):
        k1 = np.asarray(field(t, x), dtype=float)
        k2 = np.asarray(field(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(field(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(field(t + h, x + h * k3), dtype=float)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (i + 1) * h
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"non-finite state at t={t!r}")
        if callback is not None:
            callback(t, x)
    return x


def exponential_map(gamma_provider, p, v, n_substeps=DEFAULT_EXP_SUBSTEPS,
                    in_domain=None, callback=None):
    """Numerical exponential map ``Exp(p, v)``.

    Integrates the geodesic through ``p`` with initial velocity ``v`` for
    unit time using :func:`rk4_integrate`.  ``Exp(p, h v)`` is the geodesic
    evaluated at time ``h``.

    ``in_domain(x) -> bool`` is checked after every substep; leaving the
    domain, or a :class:`DomainError` from ``gamma_provider``, raises
    :class:`DomainExit`.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    n = p.shape[0]
    if not np.any(v):
        return p.copy()

    def field(_t, z):
        x = z[:n]
        if in_domain is not None and not in_domain(x):
            raise DomainExit(f"geodesic left the domain at {x!r}")
        try:
            d = geodesic_rhs(gamma_provider, GeodesicState(x, z[n:]))
        except DomainExit:
            raise
        except DomainError as exc:
            raise DomainExit(str(exc)) from exc
        return np.concatenate([d.position, d.velocity])

    z = rk4_integrate(field, np.concatenate([p, v]), 0.0, 1.0, n_substeps,
                      callback=callback)
    x = z[:n]
    if in_domain is not None and not in_domain(x):
        raise DomainExit(f"geodesic endpoint outside the domain: {x!r}")
    return x
