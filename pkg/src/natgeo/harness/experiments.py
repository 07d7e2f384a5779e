"""The reproducible experiments.

Each ``run_*`` function takes a validated :class:`ExperimentConfig` and returns
an :class:`ExperimentOutput` whose ``files`` map CSV file names to their text.
Nothing here touches the filesystem; the CLI writes the files.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, DomainExit, NatGeoError
from ..gamma import GammaObjective, GammaParams, Parameterization, from_base, gamma_sample
from ..geometry import cholesky_solver, rk4_integrate
from ..network import Batch, Loss, Network, NetworkObjective, flatten, forward
from ..optimizers import (STEPPERS, DampedMetric, OptimizerConfig, OptimizerState,
                          geodesic_correction, natural_velocity, perturbation_correction)
from ..solver import CgConfig, DampingState
from .records import ORDER_HEADER, RunRecord, runs_csv, to_csv

ORDER_PAIRS = (
    ("ng", "geo_exact"),
    ("geo", "geo_exact"),
    ("geo_f", "geo_exact"),
    ("ng", "ng_exact"),
    ("mid", "ng_exact"),
)


@dataclass
class ExperimentOutput:
    files: dict
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _status(exc):
    return f"error:{type(exc).__name__}"


def _optimizer_config(cfg, **overrides):
    kw = dict(
        cg=CgConfig(cfg.cg.max_iters, cfg.cg.tol),
        solver=cfg.solver,
        diag_mode=cfg.diag_mode,
        backtracking=cfg.backtracking,
        max_halvings=cfg.max_halvings,
        adapt_damping=cfg.damping.adapt,
        exp_substeps=cfg.exp_substeps,
    )
    kw.update(overrides)
    return OptimizerConfig(**kw)


def _damping(cfg):
    d = cfg.damping
    return DampingState(d.epsilon, d.threshold, d.grow, d.shrink)


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def lap(self):
        if not self.enabled:
            return 0
        now = time.perf_counter()
        out = int(round((now - self.t0) * 1e6))
        self.t0 = now
        return out


# --- Gamma experiments ----------------------------------------------------

def gamma_data(cfg):
    return gamma_sample(GammaParams(cfg.data.alpha, cfg.data.beta), cfg.data.n, cfg.seed)


def natural_flow(obj):
    """Vector field of the undamped natural gradient flow (lambda = 1)."""
    def field_fn(_t, theta):
        try:
            return -cholesky_solver(obj.metric(theta))(obj.grad(theta))
        except DomainExit:
            raise
        except DomainError as exc:
            raise DomainExit(str(exc)) from exc
    return field_fn


def exact_flow(obj, theta0, times, steps_per_interval):
    """RK4 solution of the natural gradient flow at each time in ``times``."""
    field_fn = natural_flow(obj)
    out = [np.array(theta0, dtype=float)]
    x = out[0]
    for t0, t1 in zip(times[:-1], times[1:]):
        x = rk4_integrate(field_fn, x, t0, t1, steps_per_interval)
        out.append(x)
    return out


def _gamma_cell(cfg, method, chart, data, clock):
    obj = GammaObjective(data, chart)
    theta0 = from_base(np.array(cfg.init, dtype=float), chart)
    name = chart.value
    records = []

    def rec(k, theta, loss, step, eps):
        base = obj.to_base(theta)
        records.append(RunRecord(cfg.experiment, method, name, k, float(base[0]), float(base[1]),
                                 float(loss), float(step), float(eps), clock.lap()))

    rec(0, theta0, obj.loss(theta0), 0.0, cfg.damping.epsilon)
    k = 0
    try:
        if method == "ng_exact":
            h = cfg.h_lambda
            steps = max(1, int(round(cfg.exact_steps / cfg.iters)))
            times = [h * i for i in range(cfg.iters + 1)]
            path = exact_flow(obj, theta0, times, steps)
            for k in range(1, cfg.iters + 1):
                rec(k, path[k], obj.loss(path[k]), np.linalg.norm(path[k] - path[k - 1]), 0.0)
        else:
            ocfg = _optimizer_config(cfg)
            state = OptimizerState(theta0, damping=_damping(cfg), h_lambda=cfg.h_lambda)
            stepper = STEPPERS[method]
            for k in range(1, cfg.iters + 1):
                state, report = stepper(state, obj, ocfg)
                rec(k, state.theta, report.loss_after, report.step_norm, report.epsilon)
    except (NatGeoError, ArithmeticError, ValueError) as exc:
        records.append(RunRecord(cfg.experiment, method, name, k, None, None, None, None,
                                 None, clock.lap(), _status(exc)))
    return records


def cross_chart_gaps(records, method):
    """Max pairwise cross-chart loss gap per iteration for ``method``.

    Iterations where any chart has no successful row map to ``inf``.
    """
    by_iter = {}
    charts = set()
    for r in records:
        if r.method != method:
            continue
        charts.add(r.chart)
        by_iter.setdefault(r.iteration, {})[r.chart] = r.loss if r.status == "ok" else None
    gaps = {}
    for it, losses in sorted(by_iter.items()):
        vals = [losses.get(c) for c in charts]
        if any(v is None for v in vals):
            gaps[it] = float("inf")
        else:
            gaps[it] = max(vals) - min(vals)
    return gaps


def run_invariance(cfg):
    """Every method in every chart from the same base-chart start point."""
    data = gamma_data(cfg)
    clock = _Clock(cfg.timing)
    records = []
    for method, chart in itertools.product(cfg.methods, cfg.charts):
        records.extend(_gamma_cell(cfg, method, Parameterization.parse(chart), data, clock))
    summary = {"max_gap": {}, "max_gap_late": {}, "gap_at_10": {}}
    for method in cfg.methods:
        gaps = cross_chart_gaps(records, method)
        late = [g for it, g in gaps.items() if it >= 5]
        summary["max_gap"][method] = max(gaps.values())
        summary["max_gap_late"][method] = max(late) if late else None
        summary["gap_at_10"][method] = gaps.get(10)
    return ExperimentOutput({cfg.output_name: runs_csv(records)}, records, summary)


def _run_to(method, obj, theta0, h, n_steps, ocfg):
    state = OptimizerState(theta0, damping=DampingState(0.0), h_lambda=h)
    stepper = STEPPERS[method]
    for _ in range(n_steps):
        state, _ = stepper(state, obj, ocfg)
    return state.theta


def fit_slope(hs, errors):
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def run_order_study(cfg):
    """Terminal error at ``T`` of each method against its reference, over ``h = 2**-k``."""
    data = gamma_data(cfg)
    chart = Parameterization.parse(cfg.charts[0])
    obj = GammaObjective(data, chart)
    theta0 = from_base(np.array(cfg.init, dtype=float), chart)
    T = cfg.order.T
    ocfg = _optimizer_config(cfg, solver="dense", backtracking=False, adapt_damping=False)
    pairs = [(m, ref) for m, ref in ORDER_PAIRS if m in cfg.methods]
    exact = None
    if any(ref == "ng_exact" for _, ref in pairs):
        exact = obj.to_base(rk4_integrate(natural_flow(obj), theta0, 0.0, T, cfg.exact_steps))

    hs = [2.0 ** -k for k in cfg.order.h_exponents]
    errors = {p: [] for p in pairs}
    for h in hs:
        n_steps = int(round(T / h))
        finals = {}
        needed = {m for m, _ in pairs} | {ref for _, ref in pairs if ref != "ng_exact"}
        for m in sorted(needed):
            finals[m] = obj.to_base(_run_to(m, obj, theta0, h, n_steps, ocfg))
        for m, ref in pairs:
            target = exact if ref == "ng_exact" else finals[ref]
            errors[(m, ref)].append(float(np.linalg.norm(finals[m] - target)))

    rows, slopes = [], {}
    for (m, ref), errs in errors.items():
        label = f"{m}_vs_{ref}"
        slopes[label] = fit_slope(hs, errs)
        rows.extend((label, h, e, slopes[label]) for h, e in zip(hs, errs))
    return ExperimentOutput({cfg.output_name: to_csv(ORDER_HEADER, rows)}, rows,
                            {"slopes": slopes})


# --- network experiments --------------------------------------------------

def network_problem(cfg):
    """Seeded synthetic dataset and initial network for the configured network settings."""
    spec = cfg.net
    sizes, acts = list(spec.sizes), list(spec.activations)
    rng = np.random.default_rng([cfg.seed, 0])
    x = rng.uniform(-1.0, 1.0, size=(spec.n_samples, sizes[0]))
    if spec.task == "autoencoder":
        z = x.copy()
    else:
        teacher = Network.init(sizes, acts[:-1] + ["identity"], seed=[cfg.seed, 2], variance=2.0)
        z = forward(teacher, x)
    # labels are drawn from the model family itself, so classification data
    # is never separable and outputs do not saturate
    if spec.loss == "squared":
        t = z + spec.noise * rng.standard_normal(z.shape) if spec.task == "teacher" else z
    elif spec.loss == "bce":
        prob = 0.5 * (z + 1.0) if spec.task == "autoencoder" else 1.0 / (1.0 + np.exp(-z))
        t = (rng.random(z.shape) < prob).astype(float)
    else:
        prob = np.exp(z - z.max(axis=1, keepdims=True))
        prob /= prob.sum(axis=1, keepdims=True)
        u = rng.random((z.shape[0], 1))
        idx = np.minimum((np.cumsum(prob, axis=1) < u).sum(axis=1), z.shape[1] - 1)
        t = np.eye(sizes[-1])[idx]
    net = Network.init(sizes, acts, seed=[cfg.seed, 1], variance=spec.init_variance)
    loss = Loss(spec.loss, sigma2=spec.sigma2)
    return net, loss, Batch(x, t)


@dataclass(frozen=True)
class NetStepDetail:
    method: str
    iteration: int
    cg_iters: int
    backtrack_count: int
    scale: float
    corrections_active: bool
    decreased: bool


DETAIL_HEADER = ("method", "iteration", "cg_iters", "backtrack_count", "scale",
                 "corrections_active", "decreased")


def _train(cfg, method, obj, theta0, clock, chart, ocfg):
    records, details = [], []
    state = OptimizerState(theta0, damping=_damping(cfg), h_lambda=cfg.h_lambda)
    records.append(RunRecord(cfg.experiment, method, chart, 0, None, None, float(obj.loss(theta0)),
                             0.0, state.damping.epsilon, clock.lap()))
    stepper = STEPPERS[method]
    k = 0
    try:
        for k in range(1, cfg.iters + 1):
            state, rep = stepper(state, obj, ocfg)
            records.append(RunRecord(cfg.experiment, method, chart, k, None, None, rep.loss_after,
                                     rep.step_norm, rep.epsilon, clock.lap()))
            decreased = rep.scale == 0 or rep.loss_after < rep.loss_before
            details.append(NetStepDetail(method, k, rep.cg_iters, rep.backtrack_count, rep.scale,
                                         rep.corrections_active, decreased))
    except (NatGeoError, ArithmeticError, ValueError) as exc:
        records.append(RunRecord(cfg.experiment, method, chart, k, None, None, None, None, None,
                                 clock.lap(), _status(exc)))
    return records, details


def _details_csv(details):
    return to_csv(DETAIL_HEADER, ((getattr(d, k) for k in DETAIL_HEADER) for d in details))


def _net_summary(records, details):
    final, failed = {}, []
    for r in records:
        if r.status != "ok":
            failed.append(r.method)
        else:
            final[r.method] = r.loss
    return {
        "final_loss": final,
        "failed": sorted(set(failed)),
        "all_decreasing": all(d.decreased for d in details),
    }


def run_mlp_benchmark(cfg):
    """Train the toy network with each method from the same initialization."""
    net, loss, batch = network_problem(cfg)
    obj = NetworkObjective(net, loss, batch)
    theta0 = flatten(net)
    clock = _Clock(cfg.timing)
    ocfg = _optimizer_config(cfg)
    chart = f"net:{loss.kind}"
    records, details = [], []
    for method in cfg.methods:
        r, d = _train(cfg, method, obj, theta0, clock, chart, ocfg)
        records.extend(r)
        details.extend(d)
    stem = cfg.output_name.rsplit(".", 1)[0]
    files = {cfg.output_name: runs_csv(records), f"{stem}_detail.csv": _details_csv(details)}
    return ExperimentOutput(files, records, _net_summary(records, details))


GAP_HEADER = ("iteration", "correction_norm", "small_curvature_gap", "relative_gap",
              "full_perturb_gap")


def correction_gaps(obj, theta, damping, h, ocfg):
    """Geodesic correction against the two perturbation corrections at ``theta``.

    Both use the same damped metric and the natural gradient displacement
    ``h v``.  Returns ``(|geo|, |small - geo|, |full - geo|)``.
    """
    metric = DampedMetric(obj, theta, damping, ocfg)
    v = natural_velocity(obj, theta, metric)
    geo = geodesic_correction(obj, theta, v, metric, h)
    small = perturbation_correction(obj, theta, h * v, metric, small_curvature=True)
    full = perturbation_correction(obj, theta, h * v, metric, small_curvature=False)
    return (float(np.linalg.norm(geo)), float(np.linalg.norm(small - geo)),
            float(np.linalg.norm(full - geo)))


def run_small_curvature(cfg):
    """geo against perturb from the same state, plus per-iteration correction gaps.

    The gaps are measured along the geo trajectory, before each step.
    """
    net, loss, batch = network_problem(cfg)
    obj = NetworkObjective(net, loss, batch)
    theta0 = flatten(net)
    clock = _Clock(cfg.timing)
    ocfg = _optimizer_config(cfg)
    chart = f"net:{loss.kind}"
    records, details = [], []
    for method in cfg.methods:
        r, d = _train(cfg, method, obj, theta0, clock, chart, ocfg)
        records.extend(r)
        details.extend(d)

    gap_rows = []
    state = OptimizerState(theta0, damping=_damping(cfg), h_lambda=cfg.h_lambda)
    try:
        for k in range(cfg.iters):
            norm, gap, full_gap = correction_gaps(obj, state.theta, state.damping, cfg.h_lambda, ocfg)
            gap_rows.append((k, norm, gap, gap / norm if norm > 0 else 0.0, full_gap))
            state, _ = STEPPERS["geo"](state, obj, ocfg)
    except (NatGeoError, ArithmeticError, ValueError):
        pass

    stem = cfg.output_name.rsplit(".", 1)[0]
    files = {
        cfg.output_name: runs_csv(records),
        f"{stem}_gaps.csv": to_csv(GAP_HEADER, gap_rows),
    }
    summary = _net_summary(records, details)
    summary["max_relative_gap"] = max((r[3] for r in gap_rows), default=float("nan"))
    summary["min_gap"] = min((r[2] for r in gap_rows), default=float("nan"))
    return ExperimentOutput(files, records, summary)


RUNNERS = {
    "invariance": run_invariance,
    "order": run_order_study,
    "mlp": run_mlp_benchmark,
    "small_curvature": run_small_curvature,
}


def run_experiment(cfg):
    return RUNNERS[cfg.experiment](cfg)
