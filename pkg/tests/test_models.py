import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpdiss.models import (REACTOR_INPUT_BOX, REACTOR_STATE_BOX, ReactorParams, economic_cost,
                            parse_polynomial, polynomial_system, polynomialize_reactor, reactor_system,
                            taylor_arrhenius)

PAPER_X = np.array([2.1756, 1.1049, 128.53])
PAPER_U = np.array([35.0, 142.76])


def test_pure_feed_without_reactant(reactor):
    sys, _ = reactor
    for u1 in (3.0, 20.0, 35.0):
        dx = sys.f(np.array([0.0, 0.0, 110.0]), np.array([u1, 50.0]))
        assert dx[0] == pytest.approx(ReactorParams().c_in * u1)
        assert dx[0] > 0


@pytest.mark.xfail(strict=True, reason="published point is off-equilibrium by 0.15 scaled units under the "
                                        "benchmark parameters; the computed optimum is within 0.2%")
def test_published_steady_state_is_stationary(reactor):
    sys, _ = reactor
    scaled = sys.f(PAPER_X, PAPER_U) / sys.state_halfwidth
    assert np.linalg.norm(scaled) <= 1e-3


def test_computed_steady_state_is_stationary_and_close_to_published(reactor, reactor_steady):
    sys, _ = reactor
    assert np.linalg.norm(sys.f(reactor_steady.x_bar, reactor_steady.u_bar)) <= 1e-8
    np.testing.assert_allclose(reactor_steady.x_bar, PAPER_X, rtol=1e-2)
    np.testing.assert_allclose(reactor_steady.u_bar, PAPER_U, rtol=1e-2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.lists(st.floats(0, 1), min_size=7, max_size=7))
def test_dynamics_affine_in_inputs(lam, r):
    sys = reactor_system()
    box_x, box_u = np.array(REACTOR_STATE_BOX), np.array(REACTOR_INPUT_BOX)
    x = box_x[:, 0] + np.array(r[:3]) * (box_x[:, 1] - box_x[:, 0])
    u = box_u[:, 0] + np.array(r[3:5]) * (box_u[:, 1] - box_u[:, 0])
    v = box_u[:, 0] + np.array(r[5:7]) * (box_u[:, 1] - box_u[:, 0])
    lhs = sys.f(x, lam * u + (1 - lam) * v)
    rhs = lam * sys.f(x, u) + (1 - lam) * sys.f(x, v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-8)


def test_taylor_center_and_order_zero():
    p = ReactorParams()
    c = taylor_arrhenius(p, 4, 110.0)
    np.testing.assert_allclose(c[:, 0], p.rates(110.0), rtol=1e-14)
    c0 = taylor_arrhenius(p, 0, 110.0)
    assert c0.shape == (3, 1)
    np.testing.assert_allclose(c0[:, 0], p.rates(110.0), rtol=1e-14)


def test_taylor_first_coefficient_matches_finite_difference():
    p = ReactorParams()
    c = taylor_arrhenius(p, 4, 110.0)
    s = 110.0 + p.theta0
    closed = np.array(p.rates(110.0)) * np.array(p.activations) / s ** 2
    np.testing.assert_allclose(c[:, 1], closed, rtol=1e-12)
    h = 1e-4
    fd = (np.array(p.rates(110.0 + h)) - np.array(p.rates(110.0 - h))) / (2 * h)
    np.testing.assert_allclose(c[:, 1], fd, rtol=1e-6)


def test_polynomial_reactor_exact_at_center(reactor_poly):
    exact = reactor_system()
    for cA in np.linspace(0, 6, 11):
        for cB in np.linspace(0, 4, 11):
            x = np.array([cA, cB, 110.0])
            u = np.array([20.0, 100.0])
            np.testing.assert_allclose(reactor_poly.f(x, u), exact.f(x, u), rtol=1e-12, atol=1e-9)


def test_polynomial_reactor_mismatch_is_finite(reactor_poly, reactor_steady):
    exact = reactor_system()
    g = [np.linspace(lo, hi, n) for (lo, hi), n in zip(REACTOR_STATE_BOX, (11, 11, 17))]
    X = np.stack(np.meshgrid(*g, indexing="ij"), -1).reshape(-1, 3)
    err = np.abs(reactor_poly.f(X, reactor_steady.u_bar) - exact.f(X, reactor_steady.u_bar))
    assert np.isfinite(err.max())


def test_input_affine_flag():
    assert polynomialize_reactor().input_affine
    sys = polynomial_system(["x"], ["u"], ["x*u^2"], [(-1, 1)], [(-1, 1)])
    assert not sys.polynomial.input_affine


def test_evaluation_is_pure(reactor, rng):
    sys, cost = reactor
    x = np.array([2.0, 1.0, 120.0])
    u = np.array([30.0, 100.0])
    assert sys.f(x, u).tobytes() == sys.f(x, u).tobytes()
    assert np.asarray(cost(x, u)).tobytes() == np.asarray(cost(x, u)).tobytes()


def test_reactor_jacobian_matches_finite_differences(reactor, rng):
    sys, _ = reactor
    for _ in range(10):
        x = np.array(REACTOR_STATE_BOX)[:, 0] + rng.random(3) * np.ptp(REACTOR_STATE_BOX, axis=1)
        u = np.array(REACTOR_INPUT_BOX)[:, 0] + rng.random(2) * np.ptp(REACTOR_INPUT_BOX, axis=1)
        fx, fu = sys.jacobian(x, u)
        for i in range(3):
            h = 1e-6 * (1 + abs(x[i]))
            e = np.zeros(3)
            e[i] = h
            np.testing.assert_allclose(fx[:, i], (sys.f(x + e, u) - sys.f(x - e, u)) / (2 * h), rtol=1e-5, atol=1e-6)
        for j in range(2):
            h = 1e-6 * (1 + abs(u[j]))
            e = np.zeros(2)
            e[j] = h
            np.testing.assert_allclose(fu[:, j], (sys.f(x, u + e) - sys.f(x, u - e)) / (2 * h), rtol=1e-5, atol=1e-6)


def test_economic_cost_and_lipschitz_bound(reactor):
    sys, cost = reactor
    assert cost(np.array([1.0, 2.0, 100.0]), np.array([10.0, 0.0])) == pytest.approx(-20.0)
    L = cost.lipschitz_bound(sys)
    # |grad F| = beta * sqrt(u1^2 + cB^2) <= sqrt(35^2 + 4^2)
    assert np.isfinite(L) and L >= np.hypot(35.0, 4.0) - 1e-9


@pytest.mark.parametrize("field", ["k10", "k20", "k30", "beta", "theta0"])
def test_params_reject_nonpositive(field):
    with pytest.raises(ValueError):
        ReactorParams(**{field: 0.0})


def test_box_validation():
    with pytest.raises(ValueError):
        polynomial_system(["x"], ["u"], ["u"], [(1, -1)], [(-1, 1)])
    with pytest.raises(ValueError):
        parse_polynomial("x + y", ("x",))
