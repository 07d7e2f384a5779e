"""Experiment configuration: a JSON document validated into frozen dataclasses.

Schema (every key optional unless stated; unknown keys are rejected)::

    experiment      "invariance" | "order" | "mlp" | "small_curvature"   (required)
    seed            non-negative int (default 7)
    methods         list of method names
    charts          list of chart names (Gamma experiments)
    data            {alpha, beta, n}                 Gamma data, default Gamma(20, 20), 10000 points
    init            [a, b]                           base-chart start point, default [1, 1]
    h_lambda        step size, default 0.5
    iters           optimizer iterations, default 20
    damping         {epsilon, threshold, grow, shrink, adapt}
    cg              {max_iters, tol}
    solver          "auto" | "cg" | "dense"
    diag_mode       "exact_probes" | "ones"
    backtracking    bool
    max_halvings    int
    exp_substeps    RK4 substeps of the exponential map, default 128
    exact_steps     total RK4 steps for the exact natural gradient flow, default 4096
    order           {T, h_exponents}                 step sizes are 2**-k
    net             {sizes, activations, loss, sigma2, task, n_samples, noise, init_variance}
    timing          bool; when false wall_micros is written as 0 so output is byte-stable
    output          CSV file name
"""

import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, replace

from ..errors import ConfigError
from ..gamma import Parameterization
from ..network import ACTIVATIONS, REQUIRED_OUTPUT

EXPERIMENTS = ("invariance", "order", "mlp", "small_curvature")
GAMMA_METHODS = ("ng", "mid", "geo", "geo_f", "geo_exact", "ng_exact")
NET_METHODS = ("ng", "mid", "geo", "geo_f", "perturb")


@dataclass(frozen=True)
class DataSpec:
    alpha: float = 20.0
    beta: float = 20.0
    n: int = 10000


@dataclass(frozen=True)
class DampingSpec:
    epsilon: float = 0.0
    threshold: float = 5.0
    grow: float = 1.5
    shrink: float = 2.0 / 3.0
    adapt: bool = True


@dataclass(frozen=True)
class CgSpec:
    max_iters: int = 50
    tol: float = 1e-8


@dataclass(frozen=True)
class OrderSpec:
    T: float = 2.0
    h_exponents: tuple = (3, 4, 5, 6, 7, 8)


@dataclass(frozen=True)
class NetSpec:
    sizes: tuple = (8, 16, 8)
    activations: tuple = ("sigmoid", "identity")
    loss: str = "squared"
    sigma2: float = 1.0
    task: str = "autoencoder"  # autoencoder | teacher
    n_samples: int = 500
    noise: float = 0.1
    init_variance: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 7
    methods: tuple = ()
    charts: tuple = ("original", "inverse_rate", "cube_rate", "square_both")
    data: DataSpec = field(default_factory=DataSpec)
    init: tuple = (1.0, 1.0)
    h_lambda: float = 0.5
    iters: int = 20
    damping: DampingSpec = field(default_factory=DampingSpec)
    cg: CgSpec = field(default_factory=CgSpec)
    solver: str = "auto"
    diag_mode: str = "exact_probes"
    backtracking: bool = True
    max_halvings: int = 10
    exp_substeps: int = 128
    exact_steps: int = 4096
    order: OrderSpec = field(default_factory=OrderSpec)
    net: NetSpec = field(default_factory=NetSpec)
    timing: bool = False
    output: str = ""

    def to_dict(self):
        return asdict(self)

    def with_seed(self, seed):
        cfg = replace(self, seed=seed)
        cfg.validate()
        return cfg

    @property
    def output_name(self):
        if self.output:
            return self.output
        return {"order": "order_study.csv", "small_curvature": "small_curvature.csv"}.get(
            self.experiment, f"{self.experiment}.csv")

    def validate(self):
        """Cross-field checks; raises :class:`ConfigError` naming the key."""
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}", key)

        need(self.experiment in EXPERIMENTS, "experiment", f"must be one of {EXPERIMENTS}")
        need(self.seed >= 0, "seed", "must be non-negative")
        allowed = NET_METHODS if self.experiment in ("mlp", "small_curvature") else GAMMA_METHODS
        for m in self.methods:
            need(m in allowed, "methods", f"unknown method {m!r} for {self.experiment}")
        for c in self.charts:
            try:
                Parameterization.parse(c)
            except ValueError as exc:
                raise ConfigError(f"charts: {exc}", "charts") from None
        need(len(self.charts) > 0 or self.experiment in ("mlp", "small_curvature"),
             "charts", "at least one chart is required")
        need(self.data.alpha > 0 and self.data.beta > 0, "data", "alpha and beta must be positive")
        need(self.data.n >= 1, "data.n", "must be >= 1")
        need(len(self.init) == 2 and all(v > 0 for v in self.init), "init", "must be two positive numbers")
        need(self.h_lambda > 0 and math.isfinite(self.h_lambda), "h_lambda", "must be positive")
        need(self.iters >= 1, "iters", "must be >= 1")
        d = self.damping
        need(d.epsilon >= 0, "damping.epsilon", "must be >= 0")
        need(d.threshold >= 0, "damping.threshold", "must be >= 0")
        need(d.grow > 1, "damping.grow", "must exceed 1")
        need(0 < d.shrink < 1, "damping.shrink", "must lie in (0, 1)")
        need(self.cg.max_iters >= 1, "cg.max_iters", "must be >= 1")
        need(self.cg.tol > 0, "cg.tol", "must be positive")
        need(self.solver in ("auto", "cg", "dense"), "solver", "must be auto, cg or dense")
        need(self.diag_mode in ("exact_probes", "ones"), "diag_mode", "must be exact_probes or ones")
        need(self.max_halvings >= 0, "max_halvings", "must be >= 0")
        need(self.exp_substeps >= 1, "exp_substeps", "must be >= 1")
        need(self.exact_steps >= 1, "exact_steps", "must be >= 1")
        need(self.order.T > 0, "order.T", "must be positive")
        need(len(self.order.h_exponents) >= 2 and all(k >= 0 for k in self.order.h_exponents),
             "order.h_exponents", "need at least two non-negative exponents")
        n = self.net
        need(len(n.sizes) >= 2 and all(s >= 1 for s in n.sizes), "net.sizes", "need >= 2 positive widths")
        need(len(n.activations) == len(n.sizes) - 1, "net.activations", "need one activation per layer")
        need(n.loss in ("squared", "bce", "mce"), "net.loss", "must be squared, bce or mce")
        need(all(a in ACTIVATIONS for a in n.activations), "net.activations",
             f"activations must be among {ACTIVATIONS}")
        need("softmax" not in n.activations[:-1], "net.activations", "softmax is output-only")
        need(n.activations[-1] == REQUIRED_OUTPUT[n.loss], "net.activations",
             f"{n.loss} loss needs a {REQUIRED_OUTPUT[n.loss]} output layer")
        need(n.task != "autoencoder" or n.loss != "mce", "net.task", "autoencoders cannot use mce")
        need(n.sigma2 > 0, "net.sigma2", "must be positive")
        need(n.task in ("autoencoder", "teacher"), "net.task", "must be autoencoder or teacher")
        need(n.task != "autoencoder" or n.sizes[0] == n.sizes[-1], "net.task",
             "an autoencoder needs equal input and output widths")
        need(n.n_samples >= 1, "net.n_samples", "must be >= 1")
        need(n.noise >= 0, "net.noise", "must be >= 0")
        need(n.init_variance > 0, "net.init_variance", "must be positive")
        if self.experiment == "order":
            need(self.damping.epsilon == 0, "damping.epsilon", "the order study runs undamped (0)")
            need(not self.backtracking, "backtracking", "the order study runs without backtracking")
        need("/" not in self.output and "\\" not in self.output, "output", "must be a bare file name")


_NESTED = {"data": DataSpec, "damping": DampingSpec, "cg": CgSpec, "order": OrderSpec, "net": NetSpec}


def _coerce(value, default, key):
    """Type-check ``value`` against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}", key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}", key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}", key)
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}", key)
        if default:
            return tuple(_coerce(v, default[0], key) for v in value)
        return tuple(_coerce(v, "", key) for v in value)
    return value


def _build(cls, raw, prefix=""):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object", prefix or None)
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            full = f"{prefix}{key}"
            raise ConfigError(f"unknown key {full!r}", full)
    kwargs = {}
    for name, f in known.items():
        full = f"{prefix}{name}"
        if name not in raw:
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"missing required key {full!r}", full)
            continue
        value = raw[name]
        if name in _NESTED and cls is ExperimentConfig:
            kwargs[name] = _build(_NESTED[name], value, full + ".")
            continue
        default = f.default if f.default is not MISSING else (
            f.default_factory() if f.default_factory is not MISSING else "")
        if name == "init":
            default = (1.0,)
        kwargs[name] = _coerce(value, default, full)
    return cls(**kwargs)


def parse_config(raw):
    """Validate a decoded JSON object into an :class:`ExperimentConfig`."""
    cfg = _build(ExperimentConfig, raw)
    if not cfg.methods:
        defaults = {
            "invariance": GAMMA_METHODS,
            "order": ("ng", "mid", "geo", "geo_f"),
            "mlp": ("ng", "mid", "geo", "geo_f"),
            "small_curvature": ("geo", "perturb"),
        }
        cfg = replace(cfg, methods=defaults.get(cfg.experiment, ()))
    cfg.validate()
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}", "config") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}", "config") from None
    return parse_config(raw)
