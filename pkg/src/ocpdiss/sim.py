"""Fixed-step RK4 simulation under piecewise-constant inputs."""

from __future__ import annotations

import io
from dataclasses import dataclass
from math import ceil
from typing import NamedTuple

import numpy as np

from .models import ControlSystem


class IntegrationDiverged(RuntimeError):
    """Raised when the state becomes non-finite; ``last_time`` is the last good sample."""

    def __init__(self, last_time: float):
        super().__init__(f"integration diverged after t = {last_time:.6g}")
        self.last_time = last_time


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant input: ``values[k]`` holds on ``[breakpoints[k], breakpoints[k+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, float).ravel()
        vals = np.atleast_2d(np.asarray(self.values, float))
        if bp.size < 2:
            raise ValueError("need at least one interval")
        if bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if vals.shape[0] != bp.size - 1:
            raise ValueError(f"expected {bp.size - 1} input values, got {vals.shape[0]}")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, T: float, values) -> "ControlSignal":
        vals = np.atleast_2d(np.asarray(values, float))
        return cls(np.linspace(0.0, T, vals.shape[0] + 1), vals)

    @classmethod
    def constant(cls, T: float, value) -> "ControlSignal":
        return cls(np.array([0.0, T]), np.atleast_2d(np.asarray(value, float)))

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0]

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, np.asarray(t, float), side="right") - 1
        idx = np.clip(idx, 0, self.n_intervals - 1)
        return self.values[idx]

    def is_admissible(self, sys: ControlSystem, tol: float = 0.0) -> bool:
        lo, hi = sys.input_box[:, 0], sys.input_box[:, 1]
        return bool(np.all(self.values >= lo - tol) and np.all(self.values <= hi + tol))

    def truncate(self, t_end: float) -> "ControlSignal":
        bp = self.breakpoints
        keep = bp < t_end
        new_bp = np.append(bp[keep], t_end)
        return ControlSignal(new_bp, self.values[: keep.sum()])


@dataclass(frozen=True)
class Trajectory:
    """Sampled state/input pair; ``inputs[k]`` is the input applied from ``times[k]`` on."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, float)
        xs = np.asarray(self.states, float)
        us = np.asarray(self.inputs, float)
        if not (len(t) == len(xs) == len(us)):
            raise ValueError("times, states and inputs must have equal length")
        if np.any(np.diff(t) < 0):
            raise ValueError("times must be nondecreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", xs)
        object.__setattr__(self, "inputs", us)

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def pairs(self) -> np.ndarray:
        return np.concatenate([self.states, self.inputs], axis=1)

    def to_csv(self) -> str:
        n_x, n_u = self.states.shape[1], self.inputs.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{j + 1}" for j in range(n_u)]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for row in np.column_stack([self.times, self.states, self.inputs]):
            buf.write(",".join(format(v, ".17g") for v in row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path, label: str = "") -> "Trajectory":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n_x = sum(1 for h in header if h.startswith("x"))
        return cls(data[:, 0], data[:, 1: 1 + n_x], data[:, 1 + n_x:], label=label)


def rk4_step(sys: ControlSystem, x, u, h: float) -> np.ndarray:
    k1 = sys.f(x, u)
    k2 = sys.f(x + 0.5 * h * k1, u)
    k3 = sys.f(x + 0.5 * h * k2, u)
    k4 = sys.f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(sys: ControlSystem, x0, u: ControlSignal, step: float = 1e-3) -> Trajectory:
    """Integrate with classical RK4.

    Each control interval is split into ``ceil(length / step)`` equal
    substeps, so every breakpoint is a sample of the returned trajectory.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x0, float).copy()
    if x.shape != (sys.n_x,) or not np.all(np.isfinite(x)):
        raise ValueError("x0 must be a finite state vector")
    times, states, inputs = [0.0], [x.copy()], []
    bp = u.breakpoints
    for k in range(u.n_intervals):
        length = bp[k + 1] - bp[k]
        n_sub = max(1, int(ceil(length / step - 1e-9)))
        h = length / n_sub
        uk = u.values[k]
        for j in range(n_sub):
            x = rk4_step(sys, x, uk, h)
            if not np.all(np.isfinite(x)):
                raise IntegrationDiverged(times[-1])
            times.append(bp[k + 1] if j == n_sub - 1 else bp[k] + (j + 1) * h)
            states.append(x.copy())
            inputs.append(uk)
    inputs.append(u.values[-1])
    return Trajectory(np.array(times), np.array(states), np.array(inputs), label=sys.label)


def rk4_segments(sys: ControlSystem, starts, controls, h: float, n_steps: int,
                 sensitivities: bool = True):
    """Integrate a batch of independent segments in lockstep.

    Parameters
    ----------
    starts : (N, n_x) initial states of the segments
    controls : (N, n_u) constant input on each segment
    h, n_steps : common step size and number of steps

    Returns
    -------
    states : (N, n_steps + 1, n_x)
    sens : (N, n_steps + 1, n_x, n_x + n_u) or None
        Exact derivatives of the discrete RK4 states with respect to
        ``(start, control)`` of their own segment.
    """
    x = np.array(starts, float)
    u = np.array(controls, float)
    N, n_x = x.shape
    n_u = u.shape[1]
    states = np.empty((N, n_steps + 1, n_x))
    states[:, 0] = x
    sens = None
    if sensitivities:
        n_p = n_x + n_u
        S = np.zeros((N, n_x, n_p))
        S[:, :, :n_x] = np.eye(n_x)
        Pu = np.zeros((n_u, n_p))
        Pu[:, n_x:] = np.eye(n_u)
        sens = np.empty((N, n_steps + 1, n_x, n_p))
        sens[:, 0] = S

    for j in range(n_steps):
        k1 = sys.f(x, u)
        x2 = x + 0.5 * h * k1
        k2 = sys.f(x2, u)
        x3 = x + 0.5 * h * k2
        k3 = sys.f(x3, u)
        x4 = x + h * k3
        k4 = sys.f(x4, u)
        if sensitivities:
            def dk(xs, Sx):
                fx, fu = sys.jacobians(xs, u)
                return fx @ Sx + fu @ Pu

            d1 = dk(x, S)
            d2 = dk(x2, S + 0.5 * h * d1)
            d3 = dk(x3, S + 0.5 * h * d2)
            d4 = dk(x4, S + h * d3)
            S = S + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
            sens[:, j + 1] = S
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDiverged(j * h)
        states[:, j + 1] = x
    return states, sens


class Violation(NamedTuple):
    time: float
    kind: str
    coordinate: int
    excess: float


def admissibility_report(traj: Trajectory, sys: ControlSystem, tol: float = 0.0) -> list[Violation]:
    """Samples where a state or input leaves its box by more than ``tol``."""
    if traj.states.shape[1] != sys.n_x or traj.inputs.shape[1] != sys.n_u:
        raise ValueError("trajectory dimensions do not match the system")
    out = []
    for kind, vals, box in (("state", traj.states, sys.state_box), ("input", traj.inputs, sys.input_box)):
        excess = np.maximum(vals - box[:, 1], box[:, 0] - vals)
        for k, i in zip(*np.nonzero(excess > tol)):
            out.append(Violation(float(traj.times[k]), kind, int(i), float(excess[k, i])))
    out.sort(key=lambda v: (v.time, v.kind, v.coordinate))
    return out
