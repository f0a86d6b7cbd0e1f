import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpdiss.models import polynomial_system
from ocpdiss.ocp import OcpSpec, SteadyStatePair, solve_ocp
from ocpdiss.sim import Trajectory
from ocpdiss.turnpike import (PAIR, STATE, ThetaQuery, arc_decomposition, exact_turnpike_flag,
                              exactness_measure, fit_exponential_envelope, nu_envelope,
                              reachability_probe, theta_error_bar, theta_measure)

GRID = 1e-3


def traj_from(times, x, u=None):
    x = np.asarray(x, float).reshape(len(times), -1)
    u = np.zeros((len(times), 1)) if u is None else np.asarray(u, float).reshape(len(times), -1)
    return Trajectory(np.asarray(times, float), x, u)


def test_at_reference_measures_zero():
    t = np.linspace(0, 1, 101)
    tr = traj_from(t, np.full(101, 0.5), np.full(101, 0.5))
    for e in (1e-9, 0.1, 1.0):
        assert theta_measure(tr, ThetaQuery(PAIR, [0.5, 0.5], e)) == 0.0


def test_constructed_indicator():
    t = np.linspace(0, 1, 1001)
    tr = traj_from(t, np.where((t < 0.2) | (t >= 0.9), 1.0, 0.0))
    q = ThetaQuery(STATE, [0.0], 0.5)
    assert theta_measure(tr, q) == pytest.approx(0.3, abs=2 * GRID)
    assert theta_error_bar(tr, q) == pytest.approx(2 * GRID)
    assert theta_measure(tr, ThetaQuery(STATE, [0.0], 2.0)) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(-3, 3).filter(lambda s: abs(s) > 1e-3)), st.floats(-2, 2), st.floats(0.01, 1.5))
def test_closed_form_linear_trajectories(slope, offset, eps):
    t = np.linspace(0, 1, 1001)
    tr = traj_from(t, offset + slope * t)
    # |offset + slope t| <= eps on an interval with analytic endpoints
    if slope == 0:
        inside = 1.0 if abs(offset) <= eps else 0.0
    else:
        a, b = sorted(((-eps - offset) / slope, (eps - offset) / slope))
        inside = max(0.0, min(b, 1.0) - max(a, 0.0))
    exact = 1.0 - inside
    assert abs(theta_measure(tr, ThetaQuery(STATE, [0.0], eps)) - exact) <= 2 * GRID


random_traj = st.integers(0, 2 ** 32 - 1).map(lambda s: np.random.default_rng(s))


@settings(max_examples=30, deadline=None)
@given(random_traj)
def test_measure_monotone_in_epsilon_and_kinds(rng):
    n = 200
    t = np.sort(np.concatenate([[0.0, 2.0], rng.uniform(0, 2, n - 2)]))
    tr = traj_from(t, np.cumsum(rng.normal(size=(n, 2)) * 0.1, axis=0), rng.normal(size=(n, 1)))
    eps = np.linspace(0.01, 3.0, 20)
    mx = [theta_measure(tr, ThetaQuery(STATE, [0, 0], e)) for e in eps]
    mz = [theta_measure(tr, ThetaQuery(PAIR, [0, 0, 0], e)) for e in eps]
    assert all(b <= a for a, b in zip(mx, mx[1:]))
    assert all(z >= x for x, z in zip(mx, mz))
    assert max(mz) <= tr.horizon + 1e-12


def test_reference_dimension_checked():
    tr = traj_from(np.linspace(0, 1, 3), np.zeros(3))
    with pytest.raises(ValueError):
        theta_measure(tr, ThetaQuery(PAIR, [0.0], 0.1))
    with pytest.raises(ValueError):
        ThetaQuery("w", [0.0], 0.1)


def sweep_with_initial_deviation(Ts):
    out = []
    for T in Ts:
        t = np.arange(0, T + GRID / 2, GRID)
        out.append((traj_from(t, np.where(t < 0.1, 1.0, 0.0)), T, [1.0]))
    return out


def test_envelope_of_constant_sweep():
    sweep = [(traj_from(np.linspace(0, T, 11), np.zeros(11)), T, [0.0]) for T in (1.0, 2.0)]
    rep = nu_envelope(sweep, [0.0], STATE, [0.1, 0.5])
    assert np.all(rep.nu_envelope == 0) and rep.turnpike_consistent


def test_envelope_with_fixed_excursion():
    rep = nu_envelope(sweep_with_initial_deviation([1.0, 2.0, 4.0]), [0.0], STATE, [0.1, 0.5, 0.9])
    np.testing.assert_allclose(rep.nu_envelope, 0.1, atol=2 * GRID)
    assert rep.turnpike_consistent
    assert np.all(np.diff(rep.nu_envelope) <= 0)
    assert np.all(rep.measures <= np.array([r["T"] for r in rep.runs])[:, None])


def test_growing_excursion_is_not_consistent():
    sweep = []
    for T in (1.0, 2.0, 4.0):
        t = np.arange(0, T + GRID / 2, GRID)
        sweep.append((traj_from(t, np.where(t < 0.5 * T, 1.0, 0.0)), T, [1.0]))
    assert not nu_envelope(sweep, [0.0], STATE, [0.5]).turnpike_consistent


def test_exactness_examples():
    T = 1.0
    t = np.linspace(0, T, 1001)
    x = np.where((t >= 0.2) & (t <= T - 0.1), 0.0, 1.0)
    assert exactness_measure(traj_from(t, x), [0.0], STATE, 0.0) == pytest.approx(0.3, abs=2 * GRID)
    far = traj_from(t, np.full(1001, 1e-2))
    assert exactness_measure(far, [0.0], STATE, 1e-9) == pytest.approx(T)
    assert exact_turnpike_flag([1, 2, 4], [0.3, 0.3, 0.3])
    assert not exact_turnpike_flag([1, 2, 4], [1, 2, 4])


def test_exactness_recorded_on_toy_ocp(toy, toy_steady):
    ss = toy_steady
    ms = []
    for T in (4.0, 8.0):
        sol = solve_ocp(OcpSpec(*toy, np.array([-1.5]), T, int(T / 0.2), step=0.01), u_guess=ss.u_bar)
        ms.append(exactness_measure(sol.trajectory, ss.z_bar, PAIR, 1e-6))
    assert all(0 <= m <= T for m, T in zip(ms, (4.0, 8.0)))


def test_arcs():
    t = np.linspace(0, 1, 1001)
    at_ref = arc_decomposition(traj_from(t, np.zeros(1001)), [0.0], STATE, 0.1)
    assert at_ref.approach is None and at_ref.middle == (0.0, 1.0) and at_ref.leaving is None
    never = arc_decomposition(traj_from(t, np.ones(1001)), [0.0], STATE, 0.1)
    assert not never.entered and never.middle is None
    tent = np.where(t < 0.3, 1 - t / 0.3, np.where(t > 0.8, (t - 0.8) / 0.2, 0.0))
    arcs = arc_decomposition(traj_from(t, tent), [0.0], STATE, 1e-9)
    assert arcs.middle[0] == pytest.approx(0.3, abs=GRID) and arcs.middle[1] == pytest.approx(0.8, abs=GRID)


def test_exponential_fit_recovers_rate():
    t = np.linspace(0, 5, 501)
    c, lam = fit_exponential_envelope(t, 2.0 * np.exp(-1.3 * t))
    assert lam == pytest.approx(1.3, rel=1e-9) and c == pytest.approx(2.0, rel=1e-9)
    assert fit_exponential_envelope(t, np.zeros_like(t))[1] == np.inf


def test_reachability_probe():
    sys = polynomial_system(["x"], ["u"], ["-x + u"], [(-2, 2)], [(-2, 2)], "stable")
    origin = SteadyStatePair(np.zeros(1), np.zeros(1), 0.0, 0.0)
    p = reachability_probe(sys, origin, [1.0], 5.0)
    assert p.evidence and p.lam >= 1.0 - 1e-2
    assert np.all(p.distances <= p.envelope(p.trajectory.times) * (1 + 1e-9) + 1e-12)
    at = reachability_probe(sys, origin, [0.0], 2.0)
    assert np.max(at.distances) <= 1e-6
