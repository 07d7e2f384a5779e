import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natgeo.errors import LengthMismatch, NumericalUnderflow, ShapeMismatch
from natgeo.harness.checks import brute_force_products, fd_jacobian, small_network
from natgeo.network import (Batch, Layer, Loss, Network, NetworkObjective, check_compatible,
                            connection_vp, fisher_vp, flatten, forward, loss_and_grad,
                            output_coefficients, perturbation_rhs, rs_pass, term3_vp, unflatten)


def rel(a, b):
    return np.max(np.abs(np.asarray(a) - b)) / max(np.max(np.abs(b)), 1e-300)


def test_forward_examples():
    net = Network([Layer([[2.0]], [1.0], "identity")])
    assert forward(net, [[3.0]])[0, 0] == 7.0
    net = Network([Layer(np.zeros((2, 3)), np.zeros(2), "sigmoid")])
    assert np.all(forward(net, np.ones((4, 3))) == 0.5)
    net = Network([Layer(np.zeros((3, 2)), np.zeros(3), "softmax")])
    np.testing.assert_allclose(forward(net, np.ones((1, 2))), [[1 / 3] * 3])


def test_network_validation():
    with pytest.raises(ShapeMismatch):
        Network([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.zeros((2, 4)), np.zeros(2))])
    with pytest.raises(ValueError):
        Network([Layer(np.zeros((3, 2)), np.zeros(3), "softmax"), Layer(np.zeros((2, 3)), np.zeros(2))])
    with pytest.raises(ValueError):
        Layer(np.zeros((2, 2)), np.zeros(2), "relu")
    with pytest.raises(ShapeMismatch):
        Layer(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(ShapeMismatch):
        forward(Network([Layer(np.zeros((2, 2)), np.zeros(2))]), np.ones((1, 3)))


def test_loss_compatibility():
    net = Network.init([2, 3, 2], ["sigmoid", "sigmoid"])
    with pytest.raises(ValueError):
        check_compatible(net, Loss("squared"))
    check_compatible(net, Loss("bce"))
    with pytest.raises(ValueError):
        Loss("squared", sigma2=0.0)
    with pytest.raises(ValueError):
        Loss("hinge")


def test_batch_validation():
    net = Network.init([2, 3, 2], ["sigmoid", "softmax"])
    with pytest.raises(ValueError):
        Batch(np.zeros((2, 2)), [[0.3, 0.7], [1.0, 0.0]]).validate(net, Loss("mce"))
    with pytest.raises(ValueError):
        Batch(np.zeros((1, 2)), [[0.5, 1.0]]).validate(net, Loss("bce"))
    with pytest.raises(ShapeMismatch):
        Batch(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ShapeMismatch):
        Batch(np.zeros((2, 3)), np.zeros((2, 2))).validate(net, Loss("mce"))


def test_flatten_layout():
    net = Network.init([2, 3, 2], ["sigmoid", "sigmoid"], seed=3)
    theta = flatten(net)
    assert theta.size == 17 == net.n_params
    assert theta[0] == net.layers[0].w[0, 0]
    assert theta[1] == net.layers[0].w[0, 1]
    np.testing.assert_array_equal(theta[6:9], net.layers[0].b)
    assert unflatten(net, theta) == net
    with pytest.raises(LengthMismatch):
        unflatten(net, theta[:-1])


@given(st.lists(st.integers(1, 4), min_size=2, max_size=4), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_flatten_roundtrip(sizes, seed):
    net = Network.init(sizes, ["tanh"] * (len(sizes) - 1), seed=seed)
    theta = np.random.default_rng(seed).normal(size=net.n_params)
    assert np.array_equal(flatten(unflatten(net, theta)), theta)


def test_json_roundtrip():
    net = Network.init([2, 3, 2], ["tanh", "softmax"], seed=1)
    d = json.loads(net.to_json())
    assert set(d["layers"][0]) == {"w", "b", "act"}
    assert Network.from_json(net.to_json()) == net


def test_init_variance():
    net = Network.init([400, 300], ["identity"], seed=0, variance=0.5)
    assert net.layers[0].w.var() == pytest.approx(0.5 / 400, rel=0.02)
    assert np.all(net.layers[0].b == 0)


def test_loss_examples():
    net = Network([Layer([[1.0]], [0.0], "identity")])
    value, grad = loss_and_grad(net, Loss("squared"), Batch([[2.0]], [[2.0]]))
    assert value == 0.0 and np.all(grad == 0)
    net = Network([Layer([[0.0]], [0.0], "sigmoid")])
    value, _ = loss_and_grad(net, Loss("bce"), Batch([[1.0]], [[1.0]]))
    assert value == pytest.approx(np.log(2.0), abs=1e-15)


def test_grad_matches_fd(tiny_net):
    net, loss, batch = tiny_net
    theta = flatten(net)
    _, grad = loss_and_grad(net, loss, batch)
    fd = fd_jacobian(lambda th: loss_and_grad(unflatten(net, th), loss, batch)[0], theta, 1e-6)
    assert rel(grad, fd) <= 1e-6


def test_rs_pass_zero_direction(tiny_net):
    net, _, batch = tiny_net
    p = rs_pass(net, batch.inputs, np.zeros(net.n_params))
    assert np.all(p.Ry == 0) and np.all(p.Sy == 0)
    np.testing.assert_array_equal(p.y, forward(net, batch.inputs))


def test_single_linear_layer_has_no_second_derivative(rng):
    net = Network([Layer(rng.normal(size=(2, 3)), rng.normal(size=2), "identity")])
    p = rs_pass(net, rng.normal(size=(4, 3)), rng.normal(size=8))
    assert np.all(p.Sy == 0)


def test_rs_pass_matches_fd(tiny_net, rng):
    net, _, batch = tiny_net
    theta = flatten(net)
    v = rng.normal(size=theta.size)

    def y(th):
        return forward(unflatten(net, th), batch.inputs)

    p = rs_pass(net, batch.inputs, v)
    assert rel(p.Ry, (y(theta + 1e-5 * v) - y(theta - 1e-5 * v)) / 2e-5) <= 1e-6
    e = 1e-3
    assert rel(p.Sy, (y(theta + e * v) - 2 * y(theta) + y(theta - e * v)) / e ** 2) <= 1e-4


def test_rs_pass_length_check():
    net = Network.init([2, 3, 2], ["sigmoid", "sigmoid"])
    with pytest.raises(LengthMismatch):
        rs_pass(net, np.zeros((1, 2)), np.zeros(5))


def test_products_match_brute_force(tiny_net, rng):
    net, loss, batch = tiny_net
    v = rng.normal(size=net.n_params)
    Gv, conn, t3, _ = brute_force_products(net, loss, batch, v)
    assert rel(fisher_vp(net, loss, batch, v), Gv) <= 1e-5
    assert rel(connection_vp(net, loss, batch, v), conn) <= 1e-5
    assert rel(term3_vp(net, loss, batch, v), t3) <= 1e-4


def test_products_vanish_at_zero(tiny_net):
    net, loss, batch = tiny_net
    z = np.zeros(net.n_params)
    for f in (fisher_vp, connection_vp, term3_vp):
        assert np.all(f(net, loss, batch, z) == 0)


def test_scalar_fisher():
    # y = w x, squared loss: G = x^2 / sigma2
    net = Network([Layer([[0.7]], [0.0], "identity")])
    batch = Batch([[3.0]], [[1.0]])
    out = fisher_vp(net, Loss("squared", sigma2=2.0), batch, np.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [9.0 / 2.0, 3.0 / 2.0])


def test_linear_net_has_zero_connection_and_term3(rng):
    net = Network([Layer(rng.normal(size=(2, 3)), rng.normal(size=2), "identity")])
    batch = Batch(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
    v = rng.normal(size=8)
    assert np.all(connection_vp(net, Loss("squared"), batch, v) == 0)
    # d_nu d_a y is non-zero only for (w, x) cross terms which vanish for one layer
    assert np.max(np.abs(term3_vp(net, Loss("squared"), batch, v))) == 0


def test_fisher_symmetric_psd(tiny_net, rng):
    net, loss, batch = tiny_net
    for _ in range(5):
        v, w = rng.normal(size=(2, net.n_params))
        a = v @ fisher_vp(net, loss, batch, w)
        b = w @ fisher_vp(net, loss, batch, v)
        assert abs(a - b) <= 1e-10 * max(abs(a), abs(b))
        assert v @ fisher_vp(net, loss, batch, v) >= -1e-12 * (v @ v)


def test_connection_quadratic_and_polarization(tiny_net, rng):
    net, loss, batch = tiny_net
    v, w = rng.normal(size=(2, net.n_params))
    c = connection_vp(net, loss, batch, v)
    assert rel(connection_vp(net, loss, batch, -2.5 * v), 6.25 * c) <= 1e-10
    # bilinear oracle B(v, w) = mean of [lam1 v^T H w + lam2 (Jv)(Jw)] dy
    from natgeo.harness.checks import _output_derivatives
    _, y, J, H = _output_derivatives(net, batch)
    lam1, lam2 = output_coefficients(y, loss)
    Jv, Jw = J @ v, J @ w
    vHw = np.einsum("skab,a,b->sk", H, v, w)
    bilinear = np.einsum("sk,ska->a", lam1 * vHw + lam2 * Jv * Jw, J) / len(batch)
    cross = connection_vp(net, loss, batch, v + w) - c - connection_vp(net, loss, batch, w)
    assert rel(cross, 2 * bilinear) <= 1e-5


def test_squared_identity_connection_is_term1_only(rng):
    net = Network.init([3, 4, 2], ["tanh", "identity"], seed=2, variance=2.0)
    loss = Loss("squared", sigma2=0.5)
    batch = Batch(rng.normal(size=(6, 3)), rng.normal(size=(6, 2)))
    v = rng.normal(size=net.n_params)
    p = rs_pass(net, batch.inputs, v)
    obj = NetworkObjective(net, loss, batch)
    # term 1 alone: backprop of Sy / sigma2
    from natgeo.network import _Forward, _backprop
    term1 = _backprop(_Forward(net, batch.inputs), p.Sy / 0.5)
    np.testing.assert_allclose(obj.connection_vp_lowered(flatten(net), v), term1, rtol=1e-13)


def test_mce_fisher_has_no_sigma(rng):
    net, _, batch = small_network("mce")
    v = rng.normal(size=net.n_params)
    np.testing.assert_array_equal(fisher_vp(net, Loss("mce", sigma2=7.0), batch, v),
                                  fisher_vp(net, Loss("mce"), batch, v))


def test_perturbation_rhs_squared_small_curvature_is_half_connection(rng):
    net = Network.init([3, 5, 2], ["sigmoid", "identity"], seed=4, variance=2.0)
    loss = Loss("squared", sigma2=0.8)
    batch = Batch(rng.normal(size=(7, 3)), rng.normal(size=(7, 2)))
    d = rng.normal(size=net.n_params)
    small = perturbation_rhs(net, loss, batch, d, small_curvature=True)
    assert rel(small, 0.5 * connection_vp(net, loss, batch, d)) <= 1e-12


def test_perturbation_rhs_bce_small_curvature_uses_one_connection(rng):
    net, loss, batch = small_network("bce")
    d = rng.normal(size=net.n_params)
    p = rs_pass(net, batch.inputs, d)
    lam1, lam2 = output_coefficients(p.y, loss)
    from natgeo.network import _Forward, _backprop
    want = _backprop(_Forward(net, batch.inputs), 0.5 * (lam1 * p.Sy + 2 * lam2 * p.Ry ** 2))
    assert rel(perturbation_rhs(net, loss, batch, d, small_curvature=True), want) <= 1e-10


def test_full_perturbation_rhs_squared_decomposition(rng):
    # squared loss, identity output: rhs = term3 + 1/2 connection + residual-weighted term
    net = Network.init([2, 3, 2], ["sigmoid", "identity"], seed=6, variance=3.0)
    loss = Loss("squared")
    batch = Batch(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
    d = rng.normal(size=net.n_params)
    theta = flatten(net)

    def ry(th):
        return rs_pass(unflatten(net, th), batch.inputs, d).Ry

    resid = forward(net, batch.inputs) - batch.targets
    dRy = fd_jacobian(ry, theta, 1e-5)
    residual_term = np.einsum("sk,ska->a", resid, dRy) / len(batch)
    want = term3_vp(net, loss, batch, d) + 0.5 * connection_vp(net, loss, batch, d) + residual_term
    assert rel(perturbation_rhs(net, loss, batch, d), want) <= 1e-6


def test_clamping_guard():
    net = Network([Layer([[80.0]], [0.0], "sigmoid")])
    batch = Batch([[1.0], [1.0]], [[1.0], [0.0]])
    with pytest.raises(NumericalUnderflow):
        loss_and_grad(net, Loss("bce"), batch)
    value, _ = loss_and_grad(net, Loss("bce", max_clamp_fraction=1.0), batch)
    assert np.isfinite(value)


def test_objective_cache_consistency(tiny_net, rng):
    net, loss, batch = tiny_net
    obj = NetworkObjective(net, loss, batch)
    theta = flatten(net)
    other = theta + 0.1 * rng.normal(size=theta.size)
    v = rng.normal(size=theta.size)
    a = obj.metric_vp(theta, v)
    obj.metric_vp(other, v)
    np.testing.assert_array_equal(obj.metric_vp(theta, v), a)
    np.testing.assert_array_equal(a, fisher_vp(net, loss, batch, v))
    assert obj.loss(theta) == loss_and_grad(net, loss, batch)[0]
