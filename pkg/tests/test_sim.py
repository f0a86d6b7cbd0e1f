import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpdiss.models import polynomial_system
from ocpdiss.sim import ControlSignal, Trajectory, admissibility_report, integrate, rk4_segments

DECAY = polynomial_system(["x"], ["u"], ["-x"], [(-10, 10)], [(-1, 1)], "decay")
ZERO = polynomial_system(["x", "y"], ["u"], ["0*x", "0*y"], [(-1, 1), (-1, 1)], [(-1, 1)], "zero")


def test_zero_field_keeps_state():
    traj = integrate(ZERO, [0.3, -0.2], ControlSignal.uniform(1.0, [[1.0], [-1.0], [0.5]]), 0.01)
    assert np.all(traj.states == np.array([0.3, -0.2]))


def test_exponential_decay_endpoint():
    traj = integrate(DECAY, [1.0], ControlSignal.constant(1.0, [0.0]), 1e-3)
    assert traj.times[-1] == 1.0
    assert traj.states[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-6)


def test_rk4_order():
    errs = []
    for h in (0.1, 0.05, 0.025):
        x = integrate(DECAY, [1.0], ControlSignal.constant(1.0, [0.0]), h).states[-1, 0]
        errs.append(abs(x - np.exp(-1.0)))
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def test_forward_backward_returns():
    fwd = integrate(DECAY, [1.0], ControlSignal.constant(1.0, [0.0]), 0.01)
    grow = polynomial_system(["x"], ["u"], ["x"], [(-10, 10)], [(-1, 1)], "grow")
    back = integrate(grow, fwd.states[-1], ControlSignal.constant(1.0, [0.0]), 0.01)
    fwd_err = abs(fwd.states[-1, 0] - np.exp(-1.0))
    assert abs(back.states[-1, 0] - 1.0) <= 10 * fwd_err


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6), st.floats(0.003, 0.3))
def test_breakpoints_on_time_grid(lengths, step):
    bp = np.concatenate([[0.0], np.cumsum(lengths)])
    sig = ControlSignal(bp, np.zeros((len(lengths), 1)))
    traj = integrate(DECAY, [1.0], sig, step)
    assert set(bp.tolist()) <= set(traj.times.tolist())
    assert traj.times[0] == 0.0 and traj.times[-1] == bp[-1]
    assert np.all(np.diff(traj.times) >= 0)


def test_signal_validation():
    with pytest.raises(ValueError):
        ControlSignal(np.array([0.0, 0.5, 0.5]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        ControlSignal(np.array([0.0]), np.zeros((0, 1)))
    assert not ControlSignal.constant(1.0, [2.0]).is_admissible(DECAY)


def test_admissibility_report_examples():
    t = np.linspace(0, 1, 5)
    xs = np.zeros((5, 1))
    xs[2, 0] = 10.1
    traj = Trajectory(t, xs, np.zeros((5, 1)))
    v = admissibility_report(traj, DECAY, tol=0.05)
    assert len(v) == 1 and v[0].excess == pytest.approx(0.1)
    assert admissibility_report(traj, DECAY, tol=0.2) == []
    assert admissibility_report(Trajectory(t, np.zeros((5, 1)), np.zeros((5, 1))), DECAY) == []


def test_csv_round_trip_is_exact(tmp_path, rng):
    t = np.sort(rng.random(7))
    t[0] = 0.0
    traj = Trajectory(t, rng.normal(size=(7, 2)), rng.normal(size=(7, 1)))
    path = tmp_path / "t.csv"
    traj.write_csv(path)
    back = Trajectory.read_csv(path)
    assert back.times.tobytes() == traj.times.tobytes()
    assert back.states.tobytes() == traj.states.tobytes()
    assert back.inputs.tobytes() == traj.inputs.tobytes()


def test_segment_sensitivities_match_finite_differences(reactor):
    sys, _ = reactor
    starts = np.array([[2.0, 1.0, 120.0], [4.0, 0.5, 100.0]])
    controls = np.array([[30.0, 120.0], [10.0, 50.0]])
    states, sens = rk4_segments(sys, starts, controls, 1e-3, 10)
    for k in range(2):
        for p in range(5):
            h = 1e-6 * (1 + abs(np.concatenate([starts[k], controls[k]])[p]))
            s1, c1, s2, c2 = starts.copy(), controls.copy(), starts.copy(), controls.copy()
            if p < 3:
                s1[k, p] += h
                s2[k, p] -= h
            else:
                c1[k, p - 3] += h
                c2[k, p - 3] -= h
            fd = (rk4_segments(sys, s1, c1, 1e-3, 10, False)[0][k, -1]
                  - rk4_segments(sys, s2, c2, 1e-3, 10, False)[0][k, -1]) / (2 * h)
            np.testing.assert_allclose(sens[k, -1, :, p], fd, rtol=1e-5, atol=1e-7)
