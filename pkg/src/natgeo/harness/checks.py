"""Oracle check suite: every closed-form or brute-force cross-check in one report.

Each check compares an implementation against an independent oracle
(finite differences, brute-force tensor assembly, analytic values) and
reports the observed discrepancy next to its tolerance.  Failures are data,
not exceptions.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NatGeoError
from ..gamma import (ALL_CHARTS, GammaDataset, GammaObjective, Parameterization, chart_hessian,
                     chart_jacobian, from_base, gamma_connection, gamma_metric,
                     gamma_metric_partials, gamma_nll, gamma_nll_grad, gamma_sample, reparam,
                     to_base)
from ..geometry import (christoffel_from_metric, cholesky_solver, exponential_map,
                        lowered_connection, rk4_integrate)
from ..network import (Batch, Loss, Network, connection_vp, fisher_vp, flatten, forward,
                       loss_and_grad, output_coefficients, rs_pass, term3_vp, unflatten)
from ..optimizers import (EXACT, DampedMetric, backtrack, geodesic_correction,
                          perturbation_correction)
from ..solver import CgConfig, DampingState, damped_solve, marquardt_adapt
from ..special import polygamma
from .config import parse_config
from .experiments import run_invariance, run_mlp_benchmark
from .records import to_csv

CHECK_HEADER = ("name", "tolerance", "observed", "verdict")
EULER_GAMMA = 0.57721566490153286


@dataclass(frozen=True)
class CheckResult:
    name: str
    tolerance: float
    observed: float
    passed: bool

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"


def _at_most(name, observed, tol):
    observed = float(observed)
    return CheckResult(name, tol, observed, bool(observed <= tol))


def _at_least(name, observed, tol):
    observed = float(observed)
    return CheckResult(name, tol, observed, bool(observed > tol))


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b))) / scale


def fd_jacobian(f, x, step=1e-5):
    """Central differences; the parameter axis is appended last."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def fd_hessian(f, x, step=1e-4):
    """Four-point mixed central differences; two parameter axes appended last."""
    x = np.asarray(x, dtype=float)
    n = x.size
    f0 = np.asarray(f(x))
    out = np.empty(f0.shape + (n, n))
    eye = np.eye(n) * step
    for j in range(n):
        for k in range(j, n):
            v = (np.asarray(f(x + eye[j] + eye[k])) - np.asarray(f(x + eye[j] - eye[k]))
                 - np.asarray(f(x - eye[j] + eye[k])) + np.asarray(f(x - eye[j] - eye[k])))
            out[..., j, k] = out[..., k, j] = v / (4 * step * step)
    return out


# --- fixtures -------------------------------------------------------------

def small_network(kind, seed=0):
    """Seed-pinned 2-3-2 sigmoid network with a batch matched to ``kind``."""
    out_act = {"squared": "identity", "bce": "sigmoid", "mce": "softmax"}[kind]
    net = Network.init([2, 3, 2], ["sigmoid", out_act], seed=seed, variance=4.0)
    rng = np.random.default_rng(seed + 100)
    x = rng.uniform(-1.0, 1.0, size=(5, 2))
    for layer in net.layers:
        layer.b[:] = rng.normal(0.0, 0.5, size=layer.b.shape)
    if kind == "squared":
        t = rng.normal(size=(5, 2))
    elif kind == "bce":
        t = (rng.random((5, 2)) > 0.5).astype(float)
    else:
        t = np.eye(2)[rng.integers(0, 2, size=5)]
    return net, Loss(kind), Batch(x, t)


def _output_derivatives(net, batch):
    theta = flatten(net)

    def y(th):
        return forward(unflatten(net, th), batch.inputs)

    return theta, y(theta), fd_jacobian(y, theta), fd_hessian(y, theta)


def brute_force_products(net, loss, batch, v):
    """Fisher, connection and term-3 products assembled from explicit tensors."""
    theta, y, J, H = _output_derivatives(net, batch)
    lam1, lam2 = output_coefficients(y, loss)
    n = batch.inputs.shape[0]
    Jv = J @ v
    vHv = np.einsum("skab,a,b->sk", H, v, v)
    Hv = np.einsum("skab,b->ska", H, v)
    G = np.einsum("sk,ska,skb->ab", lam1, J, J) / n
    conn = np.einsum("sk,ska->a", lam1 * vHv + lam2 * Jv ** 2, J) / n
    term3 = np.einsum("sk,ska->a", lam1 * Jv, Hv) / n
    return G @ v, conn, term3, G


# --- individual check groups ----------------------------------------------

def _special_checks():
    yield _at_most("polygamma_trigamma_1", abs(polygamma(1, 1.0) - math.pi ** 2 / 6), 1e-10)
    yield _at_most("polygamma_digamma_1", abs(polygamma(0, 1.0) + EULER_GAMMA), 1e-10)
    yield _at_most("polygamma_tetragamma_recurrence",
                   abs(polygamma(2, 2.0) - (polygamma(2, 1.0) + 2.0)), 1e-10)
    x, h = 3.7, 1e-4
    fd = (polygamma(1, x + h) - polygamma(1, x - h)) / (2 * h)
    yield _at_most("polygamma_tetragamma_fd", abs(polygamma(2, x) - fd), 1e-7)


def _integrator_checks():
    e = rk4_integrate(lambda t, x: x, np.array([1.0]), 0.0, 1.0, 100)
    yield _at_most("rk4_exponential", abs(e[0] - math.e), 1e-8)
    r = rk4_integrate(lambda t, x: np.array([-x[1], x[0]]), np.array([1.0, 0.0]), 0.0,
                      2 * math.pi, 1000)
    yield _at_most("rk4_rotation", float(np.max(np.abs(r - [1.0, 0.0]))), 1e-9)
    ns = [4, 8, 16, 32]
    errs = [abs(rk4_integrate(lambda t, x: x, np.array([1.0]), 0.0, 1.0, n)[0] - math.e)
            for n in ns]
    slope = np.polyfit(np.log([1.0 / n for n in ns]), np.log(errs), 1)[0]
    yield _at_most("rk4_order_slope", abs(slope - 4.0), 0.2)


def _geometry_checks():
    # flat plane in polar coordinates at r = 2
    r = 2.0
    g = np.diag([1.0, r * r])
    dg = np.zeros((2, 2, 2))
    dg[0, 1, 1] = 2 * r
    gamma = christoffel_from_metric(cholesky_solver(g), dg)
    expected = np.zeros((2, 2, 2))
    expected[0, 1, 1] = -r
    expected[1, 0, 1] = expected[1, 1, 0] = 1.0 / r
    yield _at_most("christoffel_polar", float(np.max(np.abs(gamma - expected))), 1e-12)

    p = np.array([1.0, 1.0])
    fd_dg = np.moveaxis(fd_jacobian(lambda q: gamma_metric(q, "original"), p), -1, 0)
    fd_gamma = christoffel_from_metric(cholesky_solver(gamma_metric(p, "original")), fd_dg)
    yield _at_most("christoffel_gamma_fd", rel_err(gamma_connection(p, "original"), fd_gamma), 1e-6)

    p = np.array([0.7, 1.9])
    for chart in ("cube_rate",):
        g = gamma_metric(p, chart)
        low = np.einsum("nm,mab->nab", g, gamma_connection(p, chart))
        yield _at_most("christoffel_contracts_back",
                       rel_err(low, lowered_connection(gamma_metric_partials(p, chart))), 1e-10)


def _gamma_checks(data):
    rng = np.random.default_rng(11)
    points = rng.uniform(0.5, 3.0, size=(20, 2))
    for chart in ALL_CHARTS:
        worst_grad = worst_dg = 0.0
        spd = True
        for p in points:
            g = gamma_nll_grad(p, chart, data)
            fd = fd_jacobian(lambda q: gamma_nll(q, chart, data), p, 1e-6)
            worst_grad = max(worst_grad, rel_err(g, fd))
            fd_dg = np.moveaxis(fd_jacobian(lambda q: gamma_metric(q, chart), p), -1, 0)
            worst_dg = max(worst_dg, rel_err(gamma_metric_partials(p, chart), fd_dg))
            try:
                np.linalg.cholesky(gamma_metric(p, chart))
            except np.linalg.LinAlgError:
                spd = False
        yield _at_most(f"gamma_grad_fd_{chart.value}", worst_grad, 1e-6)
        yield _at_most(f"gamma_metric_partials_fd_{chart.value}", worst_dg, 1e-6)
        yield _at_most(f"gamma_metric_spd_{chart.value}", 0.0 if spd else 1.0, 0.0)

    worst_rt = worst_nll = worst_cov = 0.0
    for p in points:
        for a in ALL_CHARTS:
            pa = from_base(p, a)
            va = -np.linalg.solve(gamma_metric(pa, a), gamma_nll_grad(pa, a, data))
            base_va = chart_jacobian(pa, a) @ va
            for b in ALL_CHARTS:
                pb = reparam(pa, a, b)
                worst_rt = max(worst_rt, rel_err(reparam(pb, b, a), pa))
                worst_nll = max(worst_nll, abs(gamma_nll(pb, b, data) - gamma_nll(pa, a, data))
                                / abs(gamma_nll(pa, a, data)))
                vb = -np.linalg.solve(gamma_metric(pb, b), gamma_nll_grad(pb, b, data))
                worst_cov = max(worst_cov, rel_err(chart_jacobian(pb, b) @ vb, base_va))
    yield _at_most("chart_roundtrip", worst_rt, 1e-12)
    yield _at_most("nll_chart_invariance", worst_nll, 1e-12)
    yield _at_most("ng_direction_covariance", worst_cov, 1e-8)

    # connection transformation law from the base chart into InverseRate
    q = np.array([1.3, 0.6])
    base = to_base(q, "inverse_rate")
    J = chart_jacobian(q, "inverse_rate")
    K = chart_hessian(q, "inverse_rate")
    G = gamma_connection(base, "original")
    transformed = np.linalg.solve(J, (np.einsum("cde,da,eb->cab", G, J, J) + K).reshape(2, 4))
    yield _at_most("connection_transformation_law",
                   rel_err(gamma_connection(q, "inverse_rate"), transformed.reshape(2, 2, 2)), 1e-6)

    # speed conservation along an exponential-map trajectory
    obj = GammaObjective(data, Parameterization.ORIGINAL)
    p = np.array([1.0, 1.0])
    v = -np.linalg.solve(obj.metric(p), obj.grad(p))
    speeds = []

    def record(_t, z):
        speeds.append(float(z[2:] @ obj.metric(z[:2]) @ z[2:]))

    exponential_map(obj.full_connection, p, v, 128, obj.in_domain, callback=record)
    yield _at_most("geodesic_speed_conservation", (max(speeds) - min(speeds)) / speeds[0], 1e-5)


def _network_checks(inject_fault):
    rng = np.random.default_rng(5)
    for kind in ("squared", "bce", "mce"):
        net, loss, batch = small_network(kind)
        theta = flatten(net)
        v = rng.normal(size=theta.size)
        Gv, conn, t3, _ = brute_force_products(net, loss, batch, v)
        tested = net
        if inject_fault:
            tested = net.copy()
            tested.layers[0].w[0, 0] += 0.05
        yield _at_most(f"fisher_vp_bruteforce_{kind}", rel_err(fisher_vp(tested, loss, batch, v), Gv), 1e-5)
        yield _at_most(f"connection_vp_bruteforce_{kind}", rel_err(connection_vp(net, loss, batch, v), conn), 1e-5)
        yield _at_most(f"term3_vp_bruteforce_{kind}", rel_err(term3_vp(net, loss, batch, v), t3), 1e-4)
        value, grad = loss_and_grad(net, loss, batch)
        fd = fd_jacobian(lambda th: loss_and_grad(unflatten(net, th), loss, batch)[0], theta, 1e-6)
        yield _at_most(f"loss_grad_fd_{kind}", rel_err(grad, fd), 1e-6)

    net, loss, batch = small_network("bce")
    theta = flatten(net)
    v = rng.normal(size=theta.size)

    def y(th):
        return forward(unflatten(net, th), batch.inputs)

    p = rs_pass(net, batch.inputs, v)
    eps = 1e-5
    yield _at_most("r_op_fd", rel_err(p.Ry, (y(theta + eps * v) - y(theta - eps * v)) / (2 * eps)), 1e-6)
    eps = 1e-3
    sy = (y(theta + eps * v) - 2 * y(theta) + y(theta - eps * v)) / eps ** 2
    yield _at_most("s_op_fd", rel_err(p.Sy, sy), 1e-4)

    w = rng.normal(size=theta.size)
    a = v @ fisher_vp(net, loss, batch, w)
    b = w @ fisher_vp(net, loss, batch, v)
    yield _at_most("fisher_symmetry", abs(a - b) / max(abs(a), abs(b)), 1e-10)
    worst = min(float(u @ fisher_vp(net, loss, batch, u)) / float(u @ u)
                for u in rng.normal(size=(10, theta.size)))
    yield _at_most("fisher_psd", -worst, 1e-12)
    c1 = connection_vp(net, loss, batch, v)
    c3 = connection_vp(net, loss, batch, 3.0 * v)
    yield _at_most("connection_quadratic_scaling", rel_err(c3, 9.0 * c1), 1e-10)


def correction_pair(kind, seed):
    """Geodesic and small-curvature perturbation corrections on :func:`small_network`."""
    from ..network import NetworkObjective
    net, loss, batch = small_network(kind, seed)
    obj = NetworkObjective(net, loss, batch)
    theta = flatten(net)
    metric = DampedMetric(obj, theta, DampingState(1e-3), EXACT)
    v = -metric.solve(obj.grad(theta))
    h = 0.5
    geo = geodesic_correction(obj, theta, v, metric, h)
    pert = perturbation_correction(obj, theta, h * v, metric, small_curvature=True)
    return geo, pert


def _optimizer_checks():
    worst = 0.0
    for seed in range(5):
        geo, pert = correction_pair("squared", seed)
        worst = max(worst, rel_err(pert, geo))
    yield _at_most("perturb_equals_geo_squared", worst, 1e-8)
    least = min(float(np.linalg.norm(np.subtract(*correction_pair("bce", s)))) for s in range(5))
    yield _at_least("perturb_differs_geo_bce", least, 1e-6)

    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    x, _, _ = damped_solve(lambda v: a @ v, np.diag(a), np.array([1.0, 2.0]), 0.0, CgConfig())
    yield _at_most("damped_solve_2x2", float(np.max(np.abs(x - [1 / 11, 7 / 11]))), 1e-12)
    x, _, _ = damped_solve(lambda v: a @ v, np.diag(a), np.array([1.0, 2.0]), 1.0, CgConfig())
    yield _at_most("damped_solve_damped_2x2",
                   float(np.max(np.abs(x - np.linalg.solve([[8.0, 1.0], [1.0, 6.0]], [1.0, 2.0])))), 1e-12)
    d = marquardt_adapt(DampingState(45.0), 0.9)
    yield _at_most("marquardt_shrink", abs(d.epsilon - 30.0), 1e-12)

    class Bowl:
        def loss(self, x):
            return 0.5 * float(x[0] ** 2)

    scale, _, count = backtrack(Bowl(), np.array([1.0]), np.array([-3.0]))
    yield _at_most("backtrack_halving", abs(scale - 0.5) + abs(count - 1), 0.0)


def _determinism_checks():
    inv = parse_config({"experiment": "invariance", "methods": ["ng", "geo", "geo_exact"],
                        "charts": ["original", "square_both"], "iters": 3,
                        "data": {"alpha": 20.0, "beta": 20.0, "n": 500}, "exp_substeps": 16})
    a = run_invariance(inv).files
    b = run_invariance(inv).files
    yield _at_most("byte_determinism_invariance", 0.0 if a == b else 1.0, 0.0)
    mlp = parse_config({"experiment": "mlp", "methods": ["ng", "geo"], "iters": 3,
                        "net": {"sizes": [3, 4, 3], "activations": ["sigmoid", "identity"],
                                "n_samples": 40}})
    a = run_mlp_benchmark(mlp).files
    b = run_mlp_benchmark(mlp).files
    yield _at_most("byte_determinism_mlp", 0.0 if a == b else 1.0, 0.0)
    d1 = gamma_sample((20.0, 20.0), 1000, 7)
    d2 = GammaDataset.from_csv(d1.to_csv())
    yield _at_most("dataset_csv_roundtrip", 0.0 if np.array_equal(d1.samples, d2.samples) else 1.0, 0.0)


def run_checks(inject_fault=False, data=None):
    """Run every oracle check.

    Parameters
    ----------
    inject_fault : bool
        Perturb one weight of the network handed to ``fisher_vp`` so the
        brute-force Fisher checks must fail (sensitivity of the oracle).
    data : GammaDataset, optional
        Gamma data for the model checks; defaults to 2000 draws of
        ``Gamma(20, 20)`` with seed 7.
    """
    data = gamma_sample((20.0, 20.0), 2000, 7) if data is None else data
    groups = [
        _special_checks, _integrator_checks, _geometry_checks, lambda: _gamma_checks(data),
        lambda: _network_checks(inject_fault), _optimizer_checks, _determinism_checks,
    ]
    results = []
    for group in groups:
        try:
            results.extend(group())
        except (NatGeoError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            name = getattr(group, "__name__", "group").strip("_<>")
            results.append(CheckResult(f"{name}_raised_{type(exc).__name__}", 0.0, math.inf, False))
    return results


def checks_csv(results):
    return to_csv(CHECK_HEADER, ((r.name, r.tolerance, r.observed, r.verdict) for r in results))
