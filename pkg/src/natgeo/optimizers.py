"""Natural gradient update rules and their higher-order variants.

Every rule approximates one step of the flow ``theta' = -lambda g^{-1} dL``
with step ``h``.  ``h * lambda`` is a single knob (``h_lambda``); ``lambda``
is fixed to one so ``h = h_lambda`` sets the discretization.

=============  =============================================================
``ng``         forward Euler
``mid``        explicit midpoint (two solves)
``geo``        Euler plus the geodesic correction ``-h^2/2 Gamma(v, v)``
``geo_f``      geodesic correction evaluated at the previous velocity (one solve)
``geo_exact``  Riemannian Euler: ``Exp(theta, h v)`` (needs the full connection)
``perturb``    Gauss-Newton perturbation correction (network objectives)
=============  =============================================================

All rules share damping, the damping switch (corrections off while
``epsilon > threshold``), backtracking and Marquardt adaptation.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol

import numpy as np

from .errors import DomainError, DomainExit
from .geometry import DEFAULT_EXP_SUBSTEPS, exponential_map
from .solver import (CgConfig, DampingState, damped_solve, dense_damped_solve,
                     diag_estimate, marquardt_adapt)

DENSE_MAX_DIM = 64


class ManifoldObjective(Protocol):
    dim: int

    def loss(self, theta) -> float: ...

    def grad(self, theta) -> np.ndarray: ...

    def metric_vp(self, theta, v) -> np.ndarray: ...

    def connection_vp_lowered(self, theta, v) -> np.ndarray:
        """``g[nu, mu] Gamma[mu, a, b] v^a v^b``."""


@dataclass(frozen=True)
class OptimizerConfig:
    cg: CgConfig = field(default_factory=CgConfig)
    solver: str = "auto"  # auto | cg | dense
    diag_mode: str = "exact_probes"
    backtracking: bool = True
    max_halvings: int = 10
    adapt_damping: bool = True
    exp_substeps: int = DEFAULT_EXP_SUBSTEPS

    def __post_init__(self):
        if self.solver not in ("auto", "cg", "dense"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.max_halvings < 0 or self.exp_substeps < 1:
            raise ValueError("max_halvings must be >= 0 and exp_substeps >= 1")


EXACT = OptimizerConfig(solver="dense", backtracking=False, adapt_damping=False)


@dataclass(frozen=True)
class OptimizerState:
    theta: np.ndarray
    prev_delta: Optional[np.ndarray] = None
    damping: DampingState = field(default_factory=DampingState)
    h_lambda: float = 1.0
    iter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", np.array(self.theta, dtype=float))
        if self.h_lambda <= 0:
            raise ValueError("h_lambda must be positive")
        if self.prev_delta is not None and np.shape(self.prev_delta) != self.theta.shape:
            raise ValueError("prev_delta must match theta")


@dataclass(frozen=True)
class StepReport:
    loss_before: float
    loss_after: float
    step_norm: float
    cg_iters: int
    epsilon: float
    corrections_active: bool
    backtrack_count: int
    scale: float = 1.0


class DampedMetric:
    """Damped metric solves at a fixed point."""

    def __init__(self, obj, theta, damping, cfg):
        self.obj = obj
        self.theta = theta
        self.eps = damping.epsilon
        self.cfg = cfg
        self.iters = 0
        dense = hasattr(obj, "metric") and (
            cfg.solver == "dense" or (cfg.solver == "auto" and obj.dim <= DENSE_MAX_DIM))
        if dense:
            self.g = np.asarray(obj.metric(theta), dtype=float)
            self.diag = np.diag(self.g).copy()
        else:
            self.g = None
            self.diag = diag_estimate(self.matvec, obj.dim, cfg.diag_mode) if self.eps else np.ones(obj.dim)

    def matvec(self, v):
        if self.g is not None:
            return self.g @ v
        return np.asarray(self.obj.metric_vp(self.theta, v), dtype=float)

    def damped_matvec(self, v):
        return self.matvec(v) + self.eps * self.diag * v

    def solve(self, rhs):
        if self.g is not None:
            x, it, _ = dense_damped_solve(self.g, self.diag, rhs, self.eps)
        else:
            x, it, _ = damped_solve(self.matvec, self.diag, rhs, self.eps, self.cfg.cg)
        self.iters += it
        return x


def _safe_loss(obj, theta):
    try:
        value = float(obj.loss(theta))
    except DomainError:
        return np.inf
    return value if np.isfinite(value) else np.inf


def _proposal(theta, delta):
    if callable(delta):
        return delta
    if isinstance(delta, tuple):
        lin, quad = delta
        return lambda s: theta + (s * lin + (s * s) * quad)
    return lambda s: theta + s * delta


def backtrack(obj, theta, delta, max_halvings=10, loss_before=None):
    """Largest ``s`` in ``1, 1/2, 1/4, ...`` whose step strictly lowers the loss.

    ``delta`` is either a displacement (scaled linearly), a pair
    ``(linear, correction)`` where the correction scales with ``s**2``, or a
    callable ``s -> new theta``.  Points outside the domain count as rejected.

    Returns ``(scale, loss_after, count)``; ``count`` is the number of
    halvings.  ``scale == 0`` means no trial step was accepted and
    ``loss_after`` is the starting loss.
    """
    theta = np.asarray(theta, dtype=float)
    base = _safe_loss(obj, theta) if loss_before is None else loss_before
    propose = _proposal(theta, delta)
    scale = 1.0
    for count in range(max_halvings + 1):
        try:
            trial = _safe_loss(obj, propose(scale))
        except DomainError:
            trial = np.inf
        if trial < base:
            return scale, trial, count
        scale *= 0.5
    return 0.0, base, max_halvings


def _finish(state, obj, cfg, metric, loss0, grad0, delta, corrections_active):
    theta = state.theta
    h = state.h_lambda
    propose = _proposal(theta, delta)
    if cfg.backtracking:
        scale, loss1, count = backtrack(obj, theta, propose, cfg.max_halvings, loss0)
        new_theta = propose(scale) if scale > 0 else theta.copy()
    else:
        scale, count = 1.0, 0
        new_theta = propose(1.0)
        try:
            loss1 = float(obj.loss(new_theta))
        except DomainExit:
            raise
        except DomainError as exc:
            raise DomainExit(str(exc)) from exc
    step = new_theta - theta

    damping = state.damping
    if cfg.adapt_damping:
        predicted = float(grad0 @ step + 0.5 * step @ metric.damped_matvec(step))
        if scale == 0 or predicted >= 0:
            rho = -np.inf
        else:
            rho = (loss1 - loss0) / predicted
        damping = marquardt_adapt(damping, rho)

    report = StepReport(
        loss_before=loss0,
        loss_after=loss1,
        step_norm=float(np.linalg.norm(step)),
        cg_iters=metric.iters,
        epsilon=state.damping.epsilon,
        corrections_active=corrections_active,
        backtrack_count=count,
        scale=scale,
    )
    new_state = replace(state, theta=new_theta, prev_delta=step / h,
                        damping=damping, iter=state.iter + 1)
    return new_state, report


def natural_velocity(obj, theta, metric, grad=None):
    """``-g^{-1} dL`` with the damped metric (lambda = 1)."""
    grad = obj.grad(theta) if grad is None else grad
    return -metric.solve(np.asarray(grad, dtype=float))


def geodesic_correction(obj, theta, velocity, metric, h):
    """``-h^2/2 Gamma(v, v)`` computed as a damped solve of the lowered product."""
    u = np.asarray(obj.connection_vp_lowered(theta, velocity), dtype=float)
    return -0.5 * h * h * metric.solve(u)


def perturbation_correction(obj, theta, delta1, metric, small_curvature=False):
    """Second-order Gauss-Newton correction ``delta2`` for a displacement ``delta1``.

    With ``small_curvature=True`` only the term that survives the
    small-curvature approximation is kept.
    """
    rhs = np.asarray(obj.perturbation_rhs(theta, delta1, small_curvature), dtype=float)
    return -metric.solve(rhs)


def _start(state, obj, cfg):
    theta = state.theta
    loss0 = float(obj.loss(theta))
    grad0 = np.asarray(obj.grad(theta), dtype=float)
    metric = DampedMetric(obj, theta, state.damping, cfg)
    return theta, loss0, grad0, metric


def step_ng(state, obj, cfg=OptimizerConfig()):
    """Plain natural gradient: ``theta - h g^{-1} dL``."""
    theta, loss0, grad0, metric = _start(state, obj, cfg)
    lin = state.h_lambda * natural_velocity(obj, theta, metric, grad0)
    return _finish(state, obj, cfg, metric, loss0, grad0, lin,
                   state.damping.corrections_active)


def step_mid(state, obj, cfg=OptimizerConfig()):
    """Explicit midpoint rule; same damping at both evaluation points."""
    if not state.damping.corrections_active:
        return step_ng(state, obj, cfg)
    theta, loss0, grad0, metric = _start(state, obj, cfg)
    h = state.h_lambda
    half = theta + 0.5 * h * natural_velocity(obj, theta, metric, grad0)
    try:
        half_metric = DampedMetric(obj, half, state.damping, cfg)
        lin = h * natural_velocity(obj, half, half_metric)
    except DomainExit:
        raise
    except DomainError as exc:
        raise DomainExit(f"midpoint evaluation left the domain: {exc}") from exc
    metric.iters += half_metric.iters
    return _finish(state, obj, cfg, metric, loss0, grad0, lin, True)


def step_geo(state, obj, cfg=OptimizerConfig()):
    """Natural gradient with geodesic correction (two solves)."""
    if not state.damping.corrections_active:
        return step_ng(state, obj, cfg)
    theta, loss0, grad0, metric = _start(state, obj, cfg)
    h = state.h_lambda
    v = natural_velocity(obj, theta, metric, grad0)
    corr = geodesic_correction(obj, theta, v, metric, h)
    return _finish(state, obj, cfg, metric, loss0, grad0, (h * v, corr), True)


def step_geo_fast(state, obj, cfg=OptimizerConfig()):
    """Faster geodesic correction: a single solve using the previous velocity.

    Solves ``G d = -dL - (h/2) u(prev)`` where ``u`` is the lowered connection
    product, then moves by ``h d``.  Falls back to :func:`step_ng` when there
    is no previous step or corrections are switched off.
    """
    if state.prev_delta is None or not state.damping.corrections_active:
        return step_ng(state, obj, cfg)
    theta, loss0, grad0, metric = _start(state, obj, cfg)
    h = state.h_lambda
    u = np.asarray(obj.connection_vp_lowered(theta, state.prev_delta), dtype=float)
    d = metric.solve(-grad0 - 0.5 * h * u)
    return _finish(state, obj, cfg, metric, loss0, grad0, h * d, True)


def step_riemannian_euler(state, obj, cfg=OptimizerConfig()):
    """``Exp(theta, h v)`` with the numerical exponential map.

    ``obj`` must expose ``full_connection(theta)``; ``in_domain(theta)`` is
    used when present.
    """
    theta, loss0, grad0, metric = _start(state, obj, cfg)
    h = state.h_lambda
    v = natural_velocity(obj, theta, metric, grad0)
    in_dom = getattr(obj, "in_domain", None)

    def propose(s):
        return exponential_map(obj.full_connection, theta, (s * h) * v,
                               cfg.exp_substeps, in_domain=in_dom)

    return _finish(state, obj, cfg, metric, loss0, grad0, propose,
                   state.damping.corrections_active)


def step_perturb(state, obj, cfg=OptimizerConfig(), small_curvature=False):
    """Natural gradient step plus the Gauss-Newton perturbation correction.

    ``delta1`` is the natural gradient displacement and ``delta2`` the
    correction from :func:`perturbation_correction`; the step is
    ``delta1 + delta2``.
    """
    if not state.damping.corrections_active:
        return step_ng(state, obj, cfg)
    theta, loss0, grad0, metric = _start(state, obj, cfg)
    delta1 = state.h_lambda * natural_velocity(obj, theta, metric, grad0)
    delta2 = perturbation_correction(obj, theta, delta1, metric, small_curvature)
    return _finish(state, obj, cfg, metric, loss0, grad0, (delta1, delta2), True)


STEPPERS: dict[str, Callable] = {
    "ng": step_ng,
    "mid": step_mid,
    "geo": step_geo,
    "geo_f": step_geo_fast,
    "geo_exact": step_riemannian_euler,
    "perturb": step_perturb,
}


def run(method, state, obj, n_iters, cfg=OptimizerConfig(), callback=None):
    """Apply ``n_iters`` steps of ``method``; returns the final state and reports."""
    stepper = STEPPERS[method]
    reports = []
    for _ in range(n_iters):
        state, report = stepper(state, obj, cfg)
        reports.append(report)
        if callback is not None:
            callback(state, report)
    return state, reports
