"""A small fully-connected network with forward-mode R/S passes.

Layers compute ``s_i = W_i a_{i-1} + b_i`` and ``a_i = phi_i(s_i)``; the
network output ``y`` is the post-activation ``a_l``.  Arrays are batched
along the first axis, so activations are ``(n_samples, width)``.

Curvature products are means over the batch of per-sample quantities:

* ``fisher_vp``       ``sum_i lam1_i dy_i (dy_i . v)``
* ``connection_vp``   ``sum_i (lam1_i S(y_i) + lam2_i R(y_i)^2) dy_i``
* ``term3_vp``        ``sum_i lam1_i R(y_i) d(R(y_i))``

where ``R``/``S`` are first/second directional derivatives along ``v`` and
``lam1``/``lam2`` are the loss-specific output coefficients (see
:func:`output_coefficients`).  Every product is one R/S forward pass followed
by one backward pass with the coefficients held constant.

Parameters are flattened layer-major: ``W_1`` (row-major), ``b_1``, ``W_2``, ...
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NumericalUnderflow, ShapeMismatch

ACTIVATIONS = ("sigmoid", "tanh", "identity", "softmax")
LOSSES = ("squared", "bce", "mce")
CLAMP = 1e-12


@dataclass(eq=False)
class Layer:
    w: np.ndarray
    b: np.ndarray
    act: str = "sigmoid"

    def __post_init__(self):
        self.w = np.array(self.w, dtype=float, ndmin=2)
        self.b = np.array(self.b, dtype=float, ndmin=1)
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")
        if self.b.shape != (self.w.shape[0],):
            raise ShapeMismatch(f"bias shape {self.b.shape} does not match weights {self.w.shape}")


@dataclass(eq=False)
class Network:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.w.shape[1] != prev.w.shape[0]:
                raise ShapeMismatch(f"layer widths {prev.w.shape} -> {nxt.w.shape} are incompatible")
        for layer in self.layers[:-1]:
            if layer.act == "softmax":
                raise ValueError("softmax is only allowed on the output layer")

    @property
    def sizes(self):
        return [self.layers[0].w.shape[1]] + [layer.w.shape[0] for layer in self.layers]

    @property
    def activations(self):
        return [layer.act for layer in self.layers]

    @property
    def n_params(self):
        return sum(layer.w.size + layer.b.size for layer in self.layers)

    @classmethod
    def init(cls, sizes, activations, seed=0, variance=0.5):
        """Gaussian weights with variance ``variance / fan_in`` and zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(variance / fan_in)
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    def copy(self):
        return Network([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def __eq__(self, other):
        if not isinstance(other, Network) or len(self.layers) != len(other.layers):
            return False
        return all(a.act == b.act and np.array_equal(a.w, b.w) and np.array_equal(a.b, b.b)
                   for a, b in zip(self.layers, other.layers))

    def to_dict(self):
        return {
            "sizes": self.sizes,
            "layers": [{"w": l.w.tolist(), "b": l.b.tolist(), "act": l.act} for l in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        net = cls([Layer(np.array(l["w"], dtype=float), np.array(l["b"], dtype=float), l["act"])
                   for l in d["layers"]])
        if "sizes" in d and list(d["sizes"]) != net.sizes:
            raise ShapeMismatch(f"declared sizes {d['sizes']} disagree with weights {net.sizes}")
        return net

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def flatten(net):
    return np.concatenate([np.concatenate([l.w.ravel(), l.b]) for l in net.layers])


def unflatten(net, vec):
    """A new network shaped like ``net`` holding the parameters ``vec``."""
    vec = np.asarray(vec, dtype=float)
    if vec.ndim != 1 or vec.size != net.n_params:
        raise LengthMismatch(f"expected {net.n_params} parameters, got shape {vec.shape}")
    layers, k = [], 0
    for l in net.layers:
        nw = l.w.size
        w = vec[k:k + nw].reshape(l.w.shape).copy()
        k += nw
        b = vec[k:k + l.b.size].copy()
        k += l.b.size
        layers.append(Layer(w, b, l.act))
    return Network(layers)


def _split(net, vec):
    """View ``vec`` as per-layer ``(W, b)`` pairs without copying."""
    out, k = [], 0
    for l in net.layers:
        nw = l.w.size
        out.append((vec[k:k + nw].reshape(l.w.shape), vec[k + nw:k + nw + l.b.size]))
        k += nw + l.b.size
    return out


def _join(parts):
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in parts])


@dataclass(frozen=True)
class Loss:
    """Output distribution: ``squared`` (Gaussian, variance ``sigma2``),
    ``bce`` (independent Bernoulli) or ``mce`` (categorical).

    ``max_clamp_fraction`` bounds the share of samples whose outputs may be
    clamped into ``[1e-12, 1 - 1e-12]`` before :class:`NumericalUnderflow`.
    """

    kind: str = "squared"
    sigma2: float = 1.0
    max_clamp_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


REQUIRED_OUTPUT = {"squared": "identity", "bce": "sigmoid", "mce": "softmax"}


def check_compatible(net, loss):
    want = REQUIRED_OUTPUT[loss.kind]
    if net.layers[-1].act != want:
        raise ValueError(f"{loss.kind} loss requires a {want} output layer, got {net.layers[-1].act}")


@dataclass(eq=False)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.array(self.inputs, dtype=float, ndmin=2)
        self.targets = np.array(self.targets, dtype=float, ndmin=2)
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeMismatch("inputs and targets need the same number of rows")

    def __len__(self):
        return self.inputs.shape[0]

    def validate(self, net, loss):
        if self.inputs.shape[1] != net.sizes[0] or self.targets.shape[1] != net.sizes[-1]:
            raise ShapeMismatch(f"batch shapes {self.inputs.shape}/{self.targets.shape} "
                                f"do not fit network sizes {net.sizes}")
        t = self.targets
        if loss.kind == "bce" and not np.all((t == 0) | (t == 1)):
            raise ValueError("binary cross-entropy targets must be 0 or 1")
        if loss.kind == "mce" and not (np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)):
            raise ValueError("multi-class targets must be one-hot rows")


@dataclass(frozen=True)
class DirectionalPass:
    y: np.ndarray
    Ry: np.ndarray
    Sy: np.ndarray


# --- activations ----------------------------------------------------------

def _elementwise(act, s):
    """Returns ``phi(s), phi'(s), phi''(s)``."""
    if act == "sigmoid":
        a = 0.5 * (1.0 + np.tanh(0.5 * s))
        d1 = a * (1.0 - a)
        return a, d1, d1 * (1.0 - 2.0 * a)
    if act == "tanh":
        a = np.tanh(s)
        d1 = 1.0 - a * a
        return a, d1, -2.0 * a * d1
    return s.copy(), np.ones_like(s), np.zeros_like(s)


def _softmax(s):
    z = np.exp(s - s.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _rowdot(a, b):
    return np.sum(a * b, axis=1, keepdims=True)


def _act_forward_dir(act, cache_i, rs, ss=None):
    """R (and S) of the activation output given R(s), S(s)."""
    a, d1, d2 = cache_i
    if act == "softmax":
        u = rs - _rowdot(a, rs)
        ra = a * u
        if ss is None:
            return ra, None
        sa = ra * u + a * (ss - _rowdot(a, ss) - _rowdot(ra, rs))
        return ra, sa
    ra = d1 * rs
    if ss is None:
        return ra, None
    return ra, d2 * rs * rs + d1 * ss


def _act_backward(act, cache_i, da):
    a, d1, _ = cache_i
    if act == "softmax":
        return a * (da - _rowdot(a, da))
    return da * d1


def _act_backward_r(act, cache_i, ra, rs, da, rda):
    """R of :func:`_act_backward`."""
    a, d1, d2 = cache_i
    if act == "softmax":
        return (ra * (da - _rowdot(a, da))
                + a * (rda - _rowdot(ra, da) - _rowdot(a, rda)))
    return rda * d1 + da * d2 * rs


# --- passes ---------------------------------------------------------------

class _Forward:
    """Cached forward pass: ``a[i]`` (``a[0]`` is the input) and activation derivatives."""

    def __init__(self, net, inputs):
        x = np.array(inputs, dtype=float, ndmin=2)
        if x.shape[1] != net.sizes[0]:
            raise ShapeMismatch(f"input width {x.shape[1]} != network input {net.sizes[0]}")
        self.net = net
        self.a = [x]
        self.cache = []
        for layer in net.layers:
            s = self.a[-1] @ layer.w.T + layer.b
            if layer.act == "softmax":
                y = _softmax(s)
                c = (y, None, None)
            else:
                c = _elementwise(layer.act, s)
            self.cache.append(c)
            self.a.append(c[0])

    @property
    def y(self):
        return self.a[-1]

    @property
    def n(self):
        return self.a[0].shape[0]


class _Directional:
    """R/S forward pass along a flat parameter direction."""

    def __init__(self, fwd, v, second=True):
        net = fwd.net
        v = np.asarray(v, dtype=float)
        if v.shape != (net.n_params,):
            raise LengthMismatch(f"direction must have length {net.n_params}, got {v.shape}")
        self.fwd = fwd
        self.dirs = _split(net, v)
        ra = np.zeros_like(fwd.a[0])
        sa = np.zeros_like(fwd.a[0]) if second else None
        self.rs, self.ra, self.ss, self.sa = [], [ra], [], [sa]
        for i, layer in enumerate(net.layers):
            rw, rb = self.dirs[i]
            a_prev = fwd.a[i]
            rs = a_prev @ rw.T + ra @ layer.w.T + rb
            ss = None
            if second:
                # S(W) = S(b) = 0
                ss = 2.0 * (ra @ rw.T) + sa @ layer.w.T
            ra, sa = _act_forward_dir(layer.act, fwd.cache[i], rs, ss)
            self.rs.append(rs)
            self.ss.append(ss)
            self.ra.append(ra)
            self.sa.append(sa)

    @property
    def Ry(self):
        return self.ra[-1]

    @property
    def Sy(self):
        return self.sa[-1]


def _backprop(fwd, d_out, from_preactivation=False):
    """Batch mean of ``sum_k d_out[:, k] * d(out_k)/d(theta)``.

    ``out`` is the network output, or the last pre-activation when
    ``from_preactivation`` is set.  ``d_out`` is held constant.
    """
    net = fwd.net
    grads = [None] * len(net.layers)
    da = d_out
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if from_preactivation and i == len(net.layers) - 1:
            ds = da
        else:
            ds = _act_backward(layer.act, fwd.cache[i], da)
        grads[i] = (ds.T @ fwd.a[i], ds.sum(axis=0))
        da = ds @ layer.w
    return _join(grads) / fwd.n


def _r_backprop(dirpass, d_out, from_preactivation=False):
    """R along the pass direction of :func:`_backprop` with ``d_out`` constant.

    Gives the batch mean of ``sum_k d_out[:, k] * d(R out_k)/d(theta)``.
    """
    fwd = dirpass.fwd
    net = fwd.net
    grads = [None] * len(net.layers)
    da = d_out
    rda = np.zeros_like(d_out)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        rw, _ = dirpass.dirs[i]
        if from_preactivation and i == len(net.layers) - 1:
            ds, rds = da, rda
        else:
            ds = _act_backward(layer.act, fwd.cache[i], da)
            rds = _act_backward_r(layer.act, fwd.cache[i], dirpass.ra[i + 1], dirpass.rs[i], da, rda)
        grads[i] = (rds.T @ fwd.a[i] + ds.T @ dirpass.ra[i], rds.sum(axis=0))
        da, rda = ds @ layer.w, ds @ rw + rds @ layer.w
    return _join(grads) / fwd.n


# --- loss-specific coefficients -------------------------------------------

def _clamped(y, loss):
    if loss.kind == "squared":
        return y
    hi = 1.0 - CLAMP if loss.kind == "bce" else 1.0
    yc = np.clip(y, CLAMP, hi)
    if loss.kind == "bce":
        clamped = (y < CLAMP) | (y > hi)
    else:
        clamped = y < CLAMP
    frac = float(np.mean(np.any(clamped, axis=1)))
    if frac > loss.max_clamp_fraction:
        raise NumericalUnderflow(f"{frac:.1%} of samples have outputs clamped at the loss poles")
    return yc


def output_coefficients(y, loss):
    """``(lam1, lam2)``: the metric weight and the extra connection weight.

    ======== ================ =========================
    loss      lam1             lam2
    ======== ================ =========================
    squared   1/sigma2         0
    bce       1/(y(1-y))       (2y-1)/(2 y^2 (1-y)^2)
    mce       1/y              -1/(2 y^2)
    ======== ================ =========================
    """
    yc = _clamped(y, loss)
    if loss.kind == "squared":
        return np.full_like(y, 1.0 / loss.sigma2), np.zeros_like(y)
    if loss.kind == "bce":
        q = yc * (1.0 - yc)
        return 1.0 / q, (2.0 * yc - 1.0) / (2.0 * q * q)
    return 1.0 / yc, -0.5 / (yc * yc)


def _preactivation_residual(y, t, loss):
    # dL/dz for the matching output activation
    if loss.kind == "squared":
        return (y - t) / loss.sigma2
    return y - t


def _preactivation_hessian_apply(y, u, loss):
    # d2L/dz2 applied to u (per row)
    if loss.kind == "squared":
        return u / loss.sigma2
    if loss.kind == "bce":
        return y * (1.0 - y) * u
    return y * u - y * _rowdot(y, u)


# --- public operations ----------------------------------------------------

def forward(net, inputs):
    return _Forward(net, inputs).y


def loss_value(net, loss, batch, fwd=None):
    fwd = _Forward(net, batch.inputs) if fwd is None else fwd
    y, t = fwd.y, batch.targets
    if loss.kind == "squared":
        per = 0.5 * np.sum((t - y) ** 2, axis=1) / loss.sigma2
    else:
        yc = _clamped(y, loss)
        if loss.kind == "bce":
            per = -np.sum(t * np.log(yc) + (1.0 - t) * np.log1p(-yc), axis=1)
        else:
            per = -np.sum(t * np.log(yc), axis=1)
    return float(np.mean(per))


def loss_and_grad(net, loss, batch):
    """Mean negative log-likelihood over the batch and its gradient (flat)."""
    check_compatible(net, loss)
    batch.validate(net, loss)
    fwd = _Forward(net, batch.inputs)
    value = loss_value(net, loss, batch, fwd)
    d = _preactivation_residual(fwd.y, batch.targets, loss)
    return value, _backprop(fwd, d, from_preactivation=True)


def rs_pass(net, inputs, v):
    """Outputs and their first and second directional derivatives along ``v``."""
    fwd = _Forward(net, inputs)
    dp = _Directional(fwd, v)
    return DirectionalPass(fwd.y, dp.Ry, dp.Sy)


def fisher_vp(net, loss, batch, v, fwd=None):
    """Fisher (metric) vector product ``G v``."""
    fwd = _Forward(net, batch.inputs) if fwd is None else fwd
    dp = _Directional(fwd, v, second=False)
    lam1, _ = output_coefficients(fwd.y, loss)
    return _backprop(fwd, lam1 * dp.Ry)


def connection_vp(net, loss, batch, v, fwd=None):
    """Lowered connection product ``u_nu = g_{nu mu} Gamma^mu_{ab} v^a v^b``."""
    fwd = _Forward(net, batch.inputs) if fwd is None else fwd
    dp = _Directional(fwd, v)
    lam1, lam2 = output_coefficients(fwd.y, loss)
    return _backprop(fwd, lam1 * dp.Sy + lam2 * dp.Ry ** 2)


def term3_vp(net, loss, batch, v, fwd=None):
    """``sum_i lam1_i d_nu d_a y_i d_b y_i v^a v^b``: R-differentiated backprop."""
    fwd = _Forward(net, batch.inputs) if fwd is None else fwd
    dp = _Directional(fwd, v, second=False)
    lam1, _ = output_coefficients(fwd.y, loss)
    return _r_backprop(dp, lam1 * dp.Ry)


def perturbation_rhs(net, loss, batch, delta, small_curvature=False, fwd=None):
    """Right-hand side of the second-order Gauss-Newton correction.

    Works with the last pre-activation ``z`` and the loss Hessian ``H`` in
    ``z``.  For a displacement ``delta`` (``Rz``, ``Sz`` along it) the full
    right-hand side is

        sum (H Rz + dL/dz) . d(Rz)  +  1/2 sum (H Sz) . dz

    i.e. the mixed second-derivative term, the residual-weighted term and
    half the curvature term.  With ``small_curvature`` only the last term is
    kept.
    """
    fwd = _Forward(net, batch.inputs) if fwd is None else fwd
    dp = _Directional(fwd, delta)
    y = fwd.y
    _clamped(y, loss)
    half_curv = _backprop(fwd, 0.5 * _preactivation_hessian_apply(y, dp.ss[-1], loss),
                          from_preactivation=True)
    if small_curvature:
        return half_curv
    c = _preactivation_hessian_apply(y, dp.rs[-1], loss) + _preactivation_residual(y, batch.targets, loss)
    return half_curv + _r_backprop(dp, c, from_preactivation=True)


class NetworkObjective:
    """Network training loss as a :class:`~natgeo.optimizers.ManifoldObjective`.

    ``theta`` is the flat parameter vector.  The forward pass at the most
    recent ``theta`` is cached, since CG calls ``metric_vp`` many times at
    the same point.
    """

    def __init__(self, net, loss, batch):
        check_compatible(net, loss)
        batch.validate(net, loss)
        self.template = net
        self.loss_kind = loss
        self.batch = batch
        self.dim = net.n_params
        self._key = None
        self._net = None
        self._fwd = None

    def _at(self, theta):
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key != self._key:
            net = unflatten(self.template, theta)
            self._fwd = _Forward(net, self.batch.inputs)
            self._net = net
            self._key = key
        return self._net, self._fwd

    def loss(self, theta):
        net, fwd = self._at(theta)
        return loss_value(net, self.loss_kind, self.batch, fwd)

    def grad(self, theta):
        net, fwd = self._at(theta)
        d = _preactivation_residual(fwd.y, self.batch.targets, self.loss_kind)
        return _backprop(fwd, d, from_preactivation=True)

    def metric_vp(self, theta, v):
        net, fwd = self._at(theta)
        return fisher_vp(net, self.loss_kind, self.batch, v, fwd)

    def connection_vp_lowered(self, theta, v):
        net, fwd = self._at(theta)
        return connection_vp(net, self.loss_kind, self.batch, v, fwd)

    def term3_vp(self, theta, v):
        net, fwd = self._at(theta)
        return term3_vp(net, self.loss_kind, self.batch, v, fwd)

    def perturbation_rhs(self, theta, delta, small_curvature=False):
        net, fwd = self._at(theta)
        return perturbation_rhs(net, self.loss_kind, self.batch, delta, small_curvature, fwd)
