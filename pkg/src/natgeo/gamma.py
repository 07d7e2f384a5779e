"""Maximum-likelihood fitting of a univariate Gamma distribution.

The density is ``beta^alpha / Gamma(alpha) x^(alpha-1) exp(-beta x)`` with
shape ``alpha`` and rate ``beta``.  Everything geometric (Fisher metric, its
partials, the Levi-Civita connection) is derived analytically in the base
chart ``(alpha, beta)`` and pulled back exactly to the other charts, so every
chart describes the same Riemannian manifold.

Charts (chart coordinates ``(a', b')`` mapped to the base chart):

=============  ======================
ORIGINAL       alpha = a', beta = b'
INVERSE_RATE   alpha = a', beta = 1/b'
CUBE_RATE      alpha = a', beta = b'^3
SQUARE_BOTH    alpha = a'^2, beta = b'^2
=============  ======================
"""

import csv
import enum
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import christoffel_from_metric, cholesky_solver, lowered_connection
from .special import polygamma

PARAM_FLOOR = 1e-8


class Parameterization(enum.Enum):
    ORIGINAL = "original"
    INVERSE_RATE = "inverse_rate"
    CUBE_RATE = "cube_rate"
    SQUARE_BOTH = "square_both"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(c.value for c in cls)
            raise ValueError(f"unknown parameterization {value!r}; expected one of {names}") from None


ALL_CHARTS = tuple(Parameterization)


@dataclass(frozen=True)
class GammaParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"Gamma parameters must be positive, got a={self.a!r}, b={self.b!r}")

    @property
    def mean(self):
        return self.a / self.b


@dataclass(frozen=True, eq=False)
class GammaDataset:
    samples: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if x.size == 0 or not np.all(x > 0) or not np.all(np.isfinite(x)):
            raise DomainError("Gamma samples must be finite and strictly positive")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "mean_x", float(np.mean(x)))
        object.__setattr__(self, "mean_log_x", float(np.mean(np.log(x))))

    def __len__(self):
        return self.samples.size

    def to_csv(self):
        """Single column ``x`` with header, 17 significant digits, LF endings."""
        buf = io.StringIO()
        buf.write("x\n")
        for v in self.samples:
            buf.write(f"{v:.17g}\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text, seed=None):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["x"]:
            raise ValueError(f"expected header ['x'], got {header!r}")
        values = [float(row[0]) for row in reader if row]
        return cls(np.array(values), seed)

    @classmethod
    def read_csv(cls, path, seed=None):
        with open(path, encoding="utf-8", newline="") as fh:
            return cls.from_csv(fh.read(), seed)


def _standard_gamma_mt(rng, shape, n):
    # Marsaglia & Tsang (2000), valid for shape >= 1
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, int(1.2 * (n - filled)) + 16)
        z = rng.standard_normal(m)
        u = rng.random(m)
        v = (1.0 + c * z) ** 3
        ok = v > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = ok & (np.log(u) < 0.5 * z * z + d - d * v + d * np.log(np.where(ok, v, 1.0)))
        got = d * v[accept]
        take = min(got.size, n - filled)
        out[filled:filled + take] = got[:take]
        filled += take
    return out


def gamma_sample(params, n, seed):
    """Draw ``n`` samples from ``Gamma(shape=params.a, rate=params.b)``.

    Deterministic for a fixed ``seed`` (PCG64 via :func:`numpy.random.default_rng`).
    Shapes below one use the boost ``X * U^(1/a)`` with ``X ~ Gamma(a + 1)``.
    """
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(params, GammaParams):
        params = GammaParams(*params)
    rng = np.random.default_rng(seed)
    a = params.a
    if a >= 1.0:
        x = _standard_gamma_mt(rng, a, int(n))
    else:
        x = _standard_gamma_mt(rng, a + 1.0, int(n))
        x *= rng.random(int(n)) ** (1.0 / a)
    return GammaDataset(x / params.b, seed)


# --- charts ---------------------------------------------------------------

def _base_pair(p, chart):
    a, b = float(p[0]), float(p[1])
    if chart is Parameterization.ORIGINAL:
        return a, b
    if chart is Parameterization.INVERSE_RATE:
        return a, (1.0 / b if b != 0.0 else math.inf)
    if chart is Parameterization.CUBE_RATE:
        return a, b ** 3
    return a * a, b * b


def to_base(p, chart):
    """Map chart coordinates to ``(alpha, beta)``; rejects non-positive results."""
    chart = Parameterization.parse(chart)
    alpha, beta = _base_pair(p, chart)
    if not (PARAM_FLOOR < alpha < math.inf and PARAM_FLOOR < beta < math.inf):
        raise DomainError(f"point {tuple(np.asarray(p).tolist())!r} in chart {chart.value} "
                          f"maps outside alpha, beta > {PARAM_FLOOR}")
    return np.array([alpha, beta])


def from_base(base, chart):
    """Inverse of :func:`to_base` (positive root for ``SQUARE_BOTH``)."""
    chart = Parameterization.parse(chart)
    alpha, beta = (float(t) for t in np.asarray(base, dtype=float))
    if not (alpha > PARAM_FLOOR and beta > PARAM_FLOOR):
        raise DomainError(f"base parameters must exceed {PARAM_FLOOR}, got {(alpha, beta)!r}")
    if chart is Parameterization.ORIGINAL:
        return np.array([alpha, beta])
    if chart is Parameterization.INVERSE_RATE:
        return np.array([alpha, 1.0 / beta])
    if chart is Parameterization.CUBE_RATE:
        return np.array([alpha, np.cbrt(beta)])
    return np.array([math.sqrt(alpha), math.sqrt(beta)])


def reparam(p, src, dst):
    """Express the point with coordinates ``p`` in chart ``src`` in chart ``dst``."""
    return from_base(to_base(p, src), dst)


def _chart_scalars(p, chart):
    # every chart map here is coordinate-wise, so J and K are diagonal:
    # returns (j_a, j_b, k_a, k_b)
    a, b = float(p[0]), float(p[1])
    if chart is Parameterization.ORIGINAL:
        return 1.0, 1.0, 0.0, 0.0
    if chart is Parameterization.INVERSE_RATE:
        return 1.0, -1.0 / (b * b), 0.0, 2.0 / b ** 3
    if chart is Parameterization.CUBE_RATE:
        return 1.0, 3.0 * b * b, 0.0, 6.0 * b
    return 2.0 * a, 2.0 * b, 2.0, 2.0


def _chart_derivs(p, chart):
    ja, jb, ka, kb = _chart_scalars(p, Parameterization.parse(chart))
    return np.array([ja, jb]), np.array([ka, kb])


def chart_jacobian(p, chart):
    """``J[a, mu] = d base^a / d p^mu`` (diagonal for all four charts)."""
    return np.diag(_chart_derivs(p, chart)[0])


def chart_hessian(p, chart):
    """``K[a, mu, sigma] = d^2 base^a / d p^mu d p^sigma``."""
    k = np.zeros((2, 2, 2))
    k[[0, 1], [0, 1], [0, 1]] = _chart_derivs(p, chart)[1]
    return k


# --- loss and geometry ----------------------------------------------------

def gamma_nll(p, chart, data):
    """Mean negative log-likelihood of ``data`` at chart point ``p``."""
    alpha, beta = to_base(p, chart)
    return -(alpha * math.log(beta) - math.lgamma(alpha)
             + (alpha - 1.0) * data.mean_log_x - beta * data.mean_x)


def gamma_nll_grad(p, chart, data):
    """Gradient covector of :func:`gamma_nll` in chart coordinates."""
    alpha, beta = to_base(p, chart)
    base_grad = np.array([
        polygamma(0, alpha) - math.log(beta) - data.mean_log_x,
        -alpha / beta + data.mean_x,
    ])
    return _chart_derivs(p, chart)[0] * base_grad


def _pullback(p, chart, with_partials):
    # scalar arithmetic: this sits on the exponential-map hot path
    chart = Parameterization.parse(chart)
    alpha, beta = to_base(p, chart)
    ja, jb, ka, kb = _chart_scalars(p, chart)
    g00, g01, g11 = polygamma(1, alpha), -1.0 / beta, alpha / (beta * beta)
    metric = np.array([[ja * ja * g00, ja * jb * g01], [ja * jb * g01, jb * jb * g11]])
    if not with_partials:
        return metric, None
    ib2 = 1.0 / (beta * beta)
    # base partials: d_alpha g = [[psi2, 0], [0, ib2]], d_beta g = [[0, ib2], [ib2, -2 alpha ib2 / beta]]
    d0 = (polygamma(2, alpha), 0.0, ib2)
    d1 = (0.0, ib2, -2.0 * alpha * ib2 / beta)
    # dg'[s, m, n] = dg[s, m, n] j_s j_m j_n + k_s (delta_sm g_sn j_n + delta_sn g_ms j_m)
    out = np.array([
        [[d0[0] * ja ** 3 + 2.0 * ka * g00 * ja, d0[1] * ja * ja * jb + ka * g01 * jb],
         [d0[1] * ja * ja * jb + ka * g01 * jb, d0[2] * ja * jb * jb]],
        [[d1[0] * jb * ja * ja, d1[1] * jb * ja * jb + kb * g01 * ja],
         [d1[1] * jb * ja * jb + kb * g01 * ja, d1[2] * jb ** 3 + 2.0 * kb * g11 * jb]],
    ])
    return metric, out


def gamma_metric(p, chart):
    """Fisher metric at ``p``: base-chart closed form pulled back by ``J^T g J``."""
    return _pullback(p, chart, False)[0]


def gamma_metric_partials(p, chart):
    """``dg[sigma, mu, nu] = d_sigma g[mu, nu]`` in chart coordinates.

    Chain rule on the pullback, including the second derivatives of the chart
    map.  Symmetric in the last two indices by construction.
    """
    return _pullback(p, chart, True)[1]


def gamma_connection(p, chart):
    """Levi-Civita connection ``gamma[mu, a, b]`` at ``p``."""
    g, dg = _pullback(p, chart, True)
    return christoffel_from_metric(cholesky_solver(g), dg)


def in_domain(p, chart):
    try:
        to_base(p, chart)
    except DomainError:
        return False
    return True


class GammaObjective:
    """The Gamma NLL seen as an objective on a Riemannian manifold.

    Exposes the dense metric and the full connection in addition to the
    matrix-free products, so every optimizer (including the Riemannian Euler
    method) can run on it.
    """

    def __init__(self, data, chart=Parameterization.ORIGINAL):
        self.data = data
        self.chart = Parameterization.parse(chart)
        self.dim = 2

    def loss(self, theta):
        return gamma_nll(theta, self.chart, self.data)

    def grad(self, theta):
        return gamma_nll_grad(theta, self.chart, self.data)

    def metric(self, theta):
        return gamma_metric(theta, self.chart)

    def metric_vp(self, theta, v):
        return self.metric(theta) @ np.asarray(v, dtype=float)

    def connection_vp_lowered(self, theta, v):
        """``g[nu, mu] gamma[mu, a, b] v^a v^b`` without any solve."""
        low = lowered_connection(gamma_metric_partials(theta, self.chart))
        return np.einsum("nab,a,b->n", low, v, v)

    def full_connection(self, theta):
        return gamma_connection(theta, self.chart)

    def in_domain(self, theta):
        return in_domain(theta, self.chart)

    def to_base(self, theta):
        return to_base(theta, self.chart)
