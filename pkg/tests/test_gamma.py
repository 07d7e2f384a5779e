import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from natgeo.errors import DomainError
from natgeo.gamma import (ALL_CHARTS, GammaDataset, GammaObjective, GammaParams, Parameterization,
                          chart_hessian, chart_jacobian, from_base, gamma_connection, gamma_metric,
                          gamma_metric_partials, gamma_nll, gamma_nll_grad, gamma_sample, reparam,
                          to_base)
from natgeo.special import polygamma

positive = st.floats(min_value=0.3, max_value=5.0)


def fd_grad(f, p, h=1e-6):
    return np.array([(f(p + h * e) - f(p - h * e)) / (2 * h) for e in np.eye(2)])


def fd_partials(chart, p, h=1e-5):
    return np.stack([(gamma_metric(p + h * e, chart) - gamma_metric(p - h * e, chart)) / (2 * h)
                     for e in np.eye(2)])


def rel(a, b):
    return np.max(np.abs(np.asarray(a) - b)) / np.max(np.abs(b))


def test_parameterization_parse():
    assert Parameterization.parse("Inverse_Rate") is Parameterization.INVERSE_RATE
    assert Parameterization.parse(Parameterization.CUBE_RATE) is Parameterization.CUBE_RATE
    with pytest.raises(ValueError):
        Parameterization.parse("polar")
    assert len(ALL_CHARTS) == 4


def test_params_validation():
    assert GammaParams(2.0, 4.0).mean == 0.5
    with pytest.raises(DomainError):
        GammaParams(0.0, 1.0)


def test_sample_moments():
    d = gamma_sample(GammaParams(20.0, 20.0), 10000, 7)
    se = math.sqrt(20.0) / 20.0 / math.sqrt(10000)
    assert abs(d.mean_x - 1.0) <= 3 * se
    e = gamma_sample((1.0, 1.0), 10000, 7)
    assert abs(e.samples.mean() - 1.0) <= 3 * 0.01
    # var of the sample variance of Exp(1) is (mu4 - sigma^4) / n = 8 / n
    assert abs(e.samples.var() - 1.0) <= 3 * math.sqrt(8.0 / 10000)


def test_sample_small_shape_moments():
    d = gamma_sample((0.5, 2.0), 20000, 3)
    se = math.sqrt(0.5) / 2.0 / math.sqrt(20000)
    assert abs(d.samples.mean() - 0.25) <= 3 * se


def test_sample_determinism():
    a = gamma_sample((20.0, 20.0), 1000, 7)
    b = gamma_sample((20.0, 20.0), 1000, 7)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert gamma_sample((20.0, 20.0), 1000, 8).samples.tobytes() != a.samples.tobytes()


def test_dataset_csv_roundtrip(tmp_path):
    d = gamma_sample((3.0, 2.0), 50, 1)
    text = d.to_csv()
    assert text.startswith("x\n") and "\r" not in text
    path = tmp_path / "d.csv"
    d.write_csv(path)
    back = GammaDataset.read_csv(path)
    assert np.array_equal(back.samples, d.samples)
    assert path.read_text() == text


def test_dataset_rejects_bad_samples():
    with pytest.raises(DomainError):
        GammaDataset(np.array([1.0, -2.0]))
    with pytest.raises(ValueError):
        GammaDataset.from_csv("y\n1.0\n")
    d = GammaDataset(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        d.samples[0] = 3.0


def test_nll_values():
    data = GammaDataset(np.array([1.0, 2.0]))
    assert gamma_nll([1.0, 1.0], "original", data) == pytest.approx(1.5, abs=1e-15)
    assert gamma_nll([1.0, 1.0], "inverse_rate", data) == pytest.approx(1.5, abs=1e-15)
    assert gamma_nll([2.0, 1.0], "original", GammaDataset(np.array([1.0]))) == pytest.approx(1.0)


def test_grad_value():
    g = gamma_nll_grad([1.0, 1.0], "original", GammaDataset(np.array([1.0])))
    np.testing.assert_allclose(g, [-0.5772156649015329, 0.0], atol=1e-12)


def test_grad_square_both_is_jacobian_scaled(small_data):
    g0 = gamma_nll_grad([1.0, 1.0], "original", small_data)
    np.testing.assert_allclose(gamma_nll_grad([1.0, 1.0], "square_both", small_data), 2 * g0)


def test_grad_vanishes_at_mle(small_data):
    res = minimize(lambda p: gamma_nll(np.exp(p), "original", small_data), [0.0, 0.0],
                   method="BFGS", options={"gtol": 1e-12})
    mle = np.exp(res.x)
    # polish with Newton steps on the analytic gradient
    for _ in range(5):
        g = gamma_nll_grad(mle, "original", small_data)
        mle = mle - np.linalg.solve(gamma_metric(mle, "original"), g)
    assert np.linalg.norm(gamma_nll_grad(mle, "original", small_data)) <= 1e-8


@pytest.mark.parametrize("chart", ALL_CHARTS)
def test_grad_matches_fd(chart, small_data, rng):
    for p in rng.uniform(0.5, 3.0, size=(20, 2)):
        fd = fd_grad(lambda q: gamma_nll(q, chart, small_data), p)
        assert rel(gamma_nll_grad(p, chart, small_data), fd) <= 1e-6


def test_metric_values():
    np.testing.assert_allclose(gamma_metric([1.0, 1.0], "original"),
                               [[math.pi ** 2 / 6, -1.0], [-1.0, 1.0]], rtol=1e-14)
    np.testing.assert_allclose(gamma_metric([20.0, 20.0], "original"),
                               [[polygamma(1, 20.0), -0.05], [-0.05, 0.05]], rtol=1e-14)
    np.testing.assert_allclose(gamma_metric([1.0, 1.0], "inverse_rate"),
                               [[math.pi ** 2 / 6, 1.0], [1.0, 1.0]], rtol=1e-14)


def test_metric_matches_monte_carlo_score_covariance():
    # score of log p(x | alpha, beta) = (log beta - psi(alpha) + log x, alpha / beta - x)
    x = gamma_sample((1.0, 1.0), 400000, 99).samples
    score = np.stack([-polygamma(0, 1.0) + np.log(x), 1.0 - x])
    cov = score @ score.T / x.size
    se = np.sqrt(np.var(score[:, None, :] * score[None, :, :], axis=-1) / x.size)
    assert np.all(np.abs(cov - gamma_metric([1.0, 1.0], "original")) <= 3.5 * se)


def test_metric_partials_values():
    dg = gamma_metric_partials([1.0, 1.0], "original")
    assert dg[0, 0, 0] == pytest.approx(-2.4041138063191885, abs=1e-12)
    assert dg[1, 1, 1] == pytest.approx(-2.0, abs=1e-15)


@pytest.mark.parametrize("chart", ALL_CHARTS)
def test_metric_partials_match_fd(chart, rng):
    for p in rng.uniform(0.5, 3.0, size=(10, 2)):
        dg = gamma_metric_partials(p, chart)
        assert np.array_equal(dg, dg.transpose(0, 2, 1))
        assert rel(dg, fd_partials(chart, p)) <= 1e-6


@pytest.mark.parametrize("chart", ALL_CHARTS)
def test_metric_spd(chart, rng):
    for p in rng.uniform(0.2, 4.0, size=(20, 2)):
        g = gamma_metric(p, chart)
        assert np.array_equal(g, g.T)
        np.linalg.cholesky(g)


def test_connection_symmetric_and_fd():
    p = np.array([20.0, 20.0])
    gamma = gamma_connection(p, "original")
    assert np.array_equal(gamma, gamma.transpose(0, 2, 1))
    dg = fd_partials("original", p, 1e-5)
    low = 0.5 * (dg.transpose(1, 0, 2) + np.einsum("bna->nab", dg) - dg)
    fd = np.linalg.solve(gamma_metric(p, "original"), low.reshape(2, 4)).reshape(2, 2, 2)
    assert rel(gamma, fd) <= 1e-6


@pytest.mark.parametrize("chart", ["inverse_rate", "cube_rate", "square_both"])
def test_connection_transformation_law(chart):
    q = np.array([1.4, 0.8])
    J = chart_jacobian(q, chart)
    K = chart_hessian(q, chart)
    G = gamma_connection(to_base(q, chart), "original")
    want = np.linalg.solve(J, (np.einsum("cde,da,eb->cab", G, J, J) + K).reshape(2, 4))
    assert rel(gamma_connection(q, chart), want.reshape(2, 2, 2)) <= 1e-6


def test_chart_jacobian_matches_fd():
    for chart in ALL_CHARTS:
        q = np.array([1.3, 0.7])
        fd = np.stack([(to_base(q + 1e-6 * e, chart) - to_base(q - 1e-6 * e, chart)) / 2e-6
                       for e in np.eye(2)], axis=1)
        np.testing.assert_allclose(chart_jacobian(q, chart), fd, rtol=1e-8, atol=1e-12)


def test_reparam_examples():
    np.testing.assert_allclose(reparam([1.0, 1.0], "original", "inverse_rate"), [1.0, 1.0])
    np.testing.assert_allclose(reparam([20.0, 20.0], "original", "cube_rate"),
                               [20.0, 2.7144176165949063], rtol=1e-14)
    np.testing.assert_allclose(reparam([20.0, 20.0], "original", "square_both"),
                               [math.sqrt(20.0)] * 2, rtol=1e-15)


@given(positive, positive, st.sampled_from(ALL_CHARTS), st.sampled_from(ALL_CHARTS))
@settings(max_examples=80, deadline=None)
def test_reparam_roundtrip_and_invariance(a, b, src, dst):
    data = GammaDataset(np.array([0.5, 1.0, 2.5]))
    p = from_base([a, b], src)
    q = reparam(p, src, dst)
    back = reparam(q, dst, src)
    assert np.max(np.abs(back - p) / np.abs(p)) <= 1e-12
    l1, l2 = gamma_nll(p, src, data), gamma_nll(q, dst, data)
    assert abs(l1 - l2) <= 1e-12 * max(1.0, abs(l1))


@given(positive, positive, st.sampled_from(ALL_CHARTS), st.sampled_from(ALL_CHARTS))
@settings(max_examples=60, deadline=None)
def test_natural_gradient_is_chart_covariant(a, b, src, dst):
    data = GammaDataset(np.array([0.5, 1.0, 2.5]))
    p = from_base([a, b], src)
    q = reparam(p, src, dst)
    vp = -np.linalg.solve(gamma_metric(p, src), gamma_nll_grad(p, src, data))
    vq = -np.linalg.solve(gamma_metric(q, dst), gamma_nll_grad(q, dst, data))
    pushed = np.linalg.solve(chart_jacobian(q, dst), chart_jacobian(p, src) @ vp)
    assert np.max(np.abs(pushed - vq)) <= 1e-8 * max(1.0, np.max(np.abs(vq)))


def test_domain_errors():
    data = GammaDataset(np.array([1.0]))
    with pytest.raises(DomainError):
        gamma_nll([-1.0, 1.0], "original", data)
    with pytest.raises(DomainError):
        gamma_metric([1.0, 0.0], "inverse_rate")
    with pytest.raises(DomainError):
        from_base([1e-9, 1.0], "original")
    assert not GammaObjective(data, "cube_rate").in_domain([1.0, -1.0])
    # square_both accepts negative coordinates: they map to positive base values
    assert GammaObjective(data, "square_both").in_domain([-1.0, -1.0])


def test_objective_lowered_connection_matches_full(small_data, rng):
    obj = GammaObjective(small_data, "cube_rate")
    p = np.array([1.2, 0.9])
    v = rng.normal(size=2)
    full = np.einsum("mab,a,b->m", obj.full_connection(p), v, v)
    np.testing.assert_allclose(obj.connection_vp_lowered(p, v), obj.metric(p) @ full, rtol=1e-10)
