"""Steady-state optimisation, finite-horizon OCPs and available storage.

OCPs are transcribed by direct multiple shooting with a piecewise-constant
input on ``N`` equal intervals.  Decision variables are stored in box
coordinates scaled to ``[-1, 1]``::

    v = [u_0, ..., u_{N-1}, s_1, ..., s_{N-1}]

where ``s_i`` is the state at the start of interval ``i`` (``s_0 = x0`` is
fixed).  Matching conditions and state path constraints are also expressed
in scaled state units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import ceil
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .models import ControlSystem, CostFunction
from .nlp import (NlpOptions, NlpProblem, NlpSolution, multistart, solve_nlp)
from .sim import ControlSignal, Trajectory, admissibility_report, integrate, rk4_segments

log = logging.getLogger(__name__)


class SteadyStateError(RuntimeError):
    """No converged, feasible steady state was found."""


@dataclass
class SteadyStatePair:
    x_bar: np.ndarray
    u_bar: np.ndarray
    cost_value: float
    dynamics_residual: float
    is_best_found: bool = True
    local_solutions: list[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)

    @property
    def z_bar(self) -> np.ndarray:
        return np.concatenate([self.x_bar, self.u_bar])

    def to_dict(self) -> dict:
        return {
            "x_bar": self.x_bar.tolist(),
            "u_bar": self.u_bar.tolist(),
            "cost_value": self.cost_value,
            "dynamics_residual": self.dynamics_residual,
            "is_best_found": self.is_best_found,
            "local_solutions": [
                {"x": x.tolist(), "u": u.tolist(), "cost": c} for x, u, c in self.local_solutions
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SteadyStatePair":
        return cls(np.array(d["x_bar"], float), np.array(d["u_bar"], float), float(d["cost_value"]),
                   float(d["dynamics_residual"]), bool(d.get("is_best_found", True)))


def _zbox(sys: ControlSystem):
    box = np.vstack([sys.state_box, sys.input_box])
    center = box.mean(axis=1)
    half = np.maximum(0.5 * (box[:, 1] - box[:, 0]), 1e-300)
    return center, half


def steady_state_problem(sys: ControlSystem, cost: CostFunction) -> NlpProblem:
    """``min F(z)`` s.t. ``f(z) = 0`` in scaled coordinates ``z = center + half * v``."""
    center, half = _zbox(sys)
    n_x = sys.n_x
    fscale = sys.state_halfwidth

    def z_of(v):
        return center + half * v

    def obj(v):
        z = z_of(v)
        return float(cost(z[:n_x], z[n_x:]))

    def grad(v):
        z = z_of(v)
        gx, gu = cost.gradients(z[:n_x], z[n_x:])
        return np.concatenate([gx, gu]) * half

    def eq(v):
        z = z_of(v)
        return sys.f(z[:n_x], z[n_x:]) / fscale

    def eq_jac(v):
        z = z_of(v)
        fx, fu = sys.jacobians(z[:n_x], z[n_x:])
        return np.hstack([fx, fu]) * half[None, :] / fscale[:, None]

    n = n_x + sys.n_u
    return NlpProblem(n, obj, grad, eq, eq_jac, lower=-np.ones(n), upper=np.ones(n),
                      label=f"steady-state[{sys.label}]")


def _polish(sys: ControlSystem, z: np.ndarray, tol: float, max_iter: int = 50) -> np.ndarray:
    """Minimum-norm Newton corrections onto ``f(z) = 0``, holding active bounds fixed."""
    center, half = _zbox(sys)
    lo, hi = center - half, center + half
    n_x = sys.n_x
    z = z.copy()
    for _ in range(max_iter):
        r = sys.f(z[:n_x], z[n_x:])
        if np.linalg.norm(r) <= 0.01 * tol:
            break
        fx, fu = sys.jacobians(z[:n_x], z[n_x:])
        J = np.hstack([fx, fu]) * half
        free = ~((z <= lo + 1e-12 * half) | (z >= hi - 1e-12 * half))
        if not free.any():
            break
        dv = np.zeros_like(z)
        dv[free] = -np.linalg.lstsq(J[:, free], r, rcond=None)[0]
        z = np.clip(z + half * dv, lo, hi)
    return z


def optimal_steady_state(sys: ControlSystem, cost: CostFunction, multistart_k: int = 16,
                         seed: int = 0, opts: NlpOptions | None = None, tol: float = 1e-8,
                         jobs: int = 1) -> SteadyStatePair:
    """Best steady state over ``{f(z) = 0} & X x U`` from a deterministic multistart."""
    p = steady_state_problem(sys, cost)
    res = multistart(p, multistart_k, seed=seed, opts=opts, jobs=jobs)
    center, half = _zbox(sys)
    n_x = sys.n_x
    candidates = []
    for i, s in enumerate(res.solutions):
        z = _polish(sys, center + half * s.point, tol)
        resid = float(np.linalg.norm(sys.f(z[:n_x], z[n_x:])))
        candidates.append((i, z, float(cost(z[:n_x], z[n_x:])), resid, s.converged))
    feasible = [c for c in candidates if c[3] <= tol]
    if not feasible:
        raise SteadyStateError(
            f"no steady state with residual <= {tol:g} (best {min(c[3] for c in candidates):.3g})")
    best = feasible[0]
    for c in feasible[1:]:
        if c[2] < best[2] - 1e-10:
            best = c
    _, z, F, resid, _ = best
    local = [(c[1][:n_x], c[1][n_x:], c[2]) for c in feasible]
    return SteadyStatePair(z[:n_x].copy(), z[n_x:].copy(), F, resid, True, local)


@dataclass
class LocalGrowth:
    """Grid evidence for ``F(z) - F(z_bar) >= c * |z - z_bar|^2`` near ``z_bar``."""

    radius: float
    coefficient: float
    n_points: int
    worst_point: list[float]

    @property
    def holds(self) -> bool:
        return self.coefficient > 0.0


def local_growth_check(sys: ControlSystem, cost: CostFunction, z_bar: SteadyStatePair,
                       radius: float = 0.1, density: int = 9) -> LocalGrowth:
    """Largest quadratic lower bound of ``F - F(z_bar)`` on a grid of the ball around ``z_bar``.

    Distances are measured in box-scaled coordinates and the ball is
    intersected with ``X x U``.  ``coefficient > 0`` means ``z_bar`` is a
    strict local minimizer of ``F`` on the sampled set, with a quadratic
    comparison function.
    """
    center, half = _zbox(sys)
    zb = z_bar.z_bar
    axes = [np.linspace(-radius, radius, density)] * zb.size
    d = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, zb.size)
    dist2 = np.sum(d ** 2, axis=1)
    keep = (dist2 <= radius ** 2) & (dist2 > 0)
    z = zb + d[keep] * half
    lo = np.concatenate([sys.state_box[:, 0], sys.input_box[:, 0]])
    hi = np.concatenate([sys.state_box[:, 1], sys.input_box[:, 1]])
    inside = np.all((z >= lo - 1e-12) & (z <= hi + 1e-12), axis=1)
    z, dist2 = z[inside], dist2[keep][inside]
    if not len(z):
        return LocalGrowth(radius, float("inf"), 0, [])
    n_x = sys.n_x
    ratio = (cost(z[:, :n_x], z[:, n_x:]) - z_bar.cost_value) / dist2
    k = int(np.argmin(ratio))
    return LocalGrowth(radius, float(ratio[k]), int(len(z)), z[k].tolist())


# ---------------------------------------------------------------------------
# finite-horizon OCP


AVERAGED = "averaged"
INTEGRAL = "integral"


@dataclass
class OcpSpec:
    system: ControlSystem
    cost: CostFunction
    x0: np.ndarray
    T: float
    N: int
    objective_mode: str = AVERAGED
    step: float = 1e-3

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, float)
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.objective_mode not in (AVERAGED, INTEGRAL):
            raise ValueError(f"unknown objective mode {self.objective_mode!r}")
        if self.x0.shape != (self.system.n_x,):
            raise ValueError("x0 has the wrong dimension")
        box = self.system.state_box
        if np.any(self.x0 < box[:, 0]) or np.any(self.x0 > box[:, 1]):
            raise ValueError("x0 must lie in X")

    @property
    def interval(self) -> float:
        return self.T / self.N

    @property
    def substeps(self) -> int:
        return max(1, int(ceil(self.interval / self.step - 1e-9)))


class ShootingTranscription(NlpProblem):
    """Multiple-shooting NLP for an :class:`OcpSpec` (see module docstring)."""

    def __init__(self, spec: OcpSpec):
        self.spec = spec
        sys = spec.system
        self.n_x, self.n_u, self.N = sys.n_x, sys.n_u, spec.N
        self.dt = spec.interval / spec.substeps
        self.n_steps = spec.substeps
        n = self.n_u * self.N + self.n_x * (self.N - 1)
        self._cache_key = None
        self._cache = None
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        if spec.objective_mode == AVERAGED:
            w = w / spec.T
        self._weights = w
        super().__init__(
            n=n, objective=self._obj, objective_gradient=self._grad,
            eq_constraints=self._eq if self.N > 1 else None,
            eq_jacobian=self._eq_jac if self.N > 1 else None,
            ineq_constraints=self._ineq, ineq_jacobian=self._ineq_jac,
            lower=-np.ones(n), upper=np.ones(n), label=f"ocp[{sys.label}, T={spec.T:g}]",
        )
        self._build_patterns()

    # -- layout -------------------------------------------------------
    def decode(self, v) -> tuple[np.ndarray, np.ndarray]:
        """Scaled vector -> (inputs (N, n_u), shooting starts (N, n_x)) in physical units."""
        sys = self.spec.system
        v = np.asarray(v, float)
        nu = self.n_u * self.N
        u = sys.input_center + sys.input_halfwidth * v[:nu].reshape(self.N, self.n_u)
        s = np.empty((self.N, self.n_x))
        s[0] = self.spec.x0
        if self.N > 1:
            s[1:] = sys.state_center + sys.state_halfwidth * v[nu:].reshape(self.N - 1, self.n_x)
        return u, s

    def encode(self, inputs, starts=None) -> np.ndarray:
        sys = self.spec.system
        u = np.asarray(inputs, float).reshape(self.N, self.n_u)
        parts = [((u - sys.input_center) / sys.input_halfwidth).ravel()]
        if self.N > 1:
            s = np.asarray(starts, float).reshape(self.N, self.n_x)[1:]
            parts.append(((s - sys.state_center) / sys.state_halfwidth).ravel())
        return np.clip(np.concatenate(parts), -1.0, 1.0)

    def _build_patterns(self):
        N, n_x, n_u = self.N, self.n_x, self.n_u
        nu_tot = n_u * N
        # column indices of (s_i, u_i) for every segment; -1 marks the fixed x0
        cols = np.full((N, n_x + n_u), -1, dtype=np.int64)
        for i in range(N):
            cols[i, n_x:] = i * n_u + np.arange(n_u)
            if i > 0:
                cols[i, :n_x] = nu_tot + (i - 1) * n_x + np.arange(n_x)
        self._cols = cols

    def _evaluate(self, v):
        key = np.asarray(v, float).tobytes()
        if key == self._cache_key:
            return self._cache
        u, s = self.decode(v)
        sys = self.spec.system
        states, sens = rk4_segments(sys, s, u, self.dt, self.n_steps, sensitivities=True)
        # chain rule to scaled (s, u) and scaled states
        scale_p = np.concatenate([sys.state_halfwidth, sys.input_halfwidth])
        sens = sens * scale_p / sys.state_halfwidth[:, None]
        ub = np.broadcast_to(u[:, None, :], states.shape[:2] + (self.n_u,))
        F = self.spec.cost(states, ub)
        Fx, Fu = self.spec.cost.gradients(states, ub)
        self._cache_key = key
        self._cache = (u, s, states, sens, F, Fx, Fu)
        return self._cache

    # -- objective --------------------------------------------------------
    def _obj(self, v):
        _, _, _, _, F, _, _ = self._evaluate(v)
        return float(np.sum(F * self._weights))

    def _grad(self, v):
        sys = self.spec.system
        _, _, _, sens, _, Fx, Fu = self._evaluate(v)
        w = self._weights
        # dF/d(scaled state) = Fx * halfwidth; state sens already in scaled units
        gx = np.einsum("ij,ijk,ijkp->ip", np.broadcast_to(w, Fx.shape[:2]),
                       Fx * sys.state_halfwidth, sens)
        gu = np.einsum("j,ijk->ik", w, Fu) * sys.input_halfwidth
        gx[:, self.n_x:] += gu
        return self._scatter(gx)

    def _scatter(self, per_segment: np.ndarray) -> np.ndarray:
        g = np.zeros(self.n)
        mask = self._cols >= 0
        np.add.at(g, self._cols[mask], per_segment[mask])
        return g

    # -- matching conditions ---------------------------------------------------
    def _eq(self, v):
        sys = self.spec.system
        _, s, states, _, _, _, _ = self._evaluate(v)
        return ((s[1:] - states[:-1, -1]) / sys.state_halfwidth).ravel()

    def _eq_jac(self, v):
        _, _, _, sens, _, _, _ = self._evaluate(v)
        N, n_x = self.N, self.n_x
        rows, cols, vals = [], [], []
        nu_tot = self.n_u * N
        for i in range(N - 1):
            r = i * n_x + np.arange(n_x)
            # + identity on s_{i+1}
            rows.append(r)
            cols.append(nu_tot + i * n_x + np.arange(n_x))
            vals.append(np.ones(n_x))
            c = self._cols[i]
            m = c >= 0
            block = -sens[i, -1][:, m]
            rows.append(np.repeat(r, m.sum()))
            cols.append(np.tile(c[m], n_x))
            vals.append(block.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=((N - 1) * n_x, self.n))

    # -- state path constraints ---------------------------------------------
    def _scaled_states(self, states):
        sys = self.spec.system
        return (states[:, 1:] - sys.state_center) / sys.state_halfwidth

    def _ineq(self, v):
        _, _, states, _, _, _, _ = self._evaluate(v)
        y = self._scaled_states(states)
        return np.concatenate([(y - 1.0).ravel(), (-1.0 - y).ravel()])

    def _ineq_jac(self, v):
        _, _, _, sens, _, _, _ = self._evaluate(v)
        N, n_x, n_p = self.N, self.n_x, self.n_x + self.n_u
        S = sens[:, 1:]  # (N, n_steps, n_x, n_p)
        n_rows_half = N * self.n_steps * n_x
        row = np.arange(n_rows_half).reshape(N, self.n_steps, n_x)
        col = np.broadcast_to(self._cols[:, None, None, :], S.shape)
        mask = col >= 0
        r = np.broadcast_to(row[..., None], S.shape)[mask]
        c = col[mask]
        vals = S[mask]
        J = sp.csr_matrix((np.concatenate([vals, -vals]), (np.concatenate([r, r + n_rows_half]),
                                                            np.concatenate([c, c]))),
                          shape=(2 * n_rows_half, self.n))
        return J

    def max_defect(self, v) -> float:
        return float(np.max(np.abs(self._eq(v)))) if self.N > 1 else 0.0


def transcribe(spec: OcpSpec) -> ShootingTranscription:
    return ShootingTranscription(spec)


@dataclass
class OcpSolution:
    trajectory: Trajectory
    signal: ControlSignal
    J_T: float
    nlp: NlpSolution
    shooting_defect: float
    node_deviation: float
    violations: list = field(default_factory=list)

    @property
    def admissible(self) -> bool:
        return not self.violations

    @property
    def status(self) -> str:
        return self.nlp.status


def trajectory_objective(traj: Trajectory, cost: CostFunction, mode: str = AVERAGED) -> float:
    """Trapezoidal quadrature of ``F`` along a trajectory (averaged or plain integral).

    The input on ``[t_k, t_{k+1}]`` is ``inputs[k]``, so both ends of each
    grid interval are evaluated with that input.
    """
    t, xs, us = traj.times, traj.states, traj.inputs
    dt = np.diff(t)
    left = cost(xs[:-1], us[:-1])
    right = cost(xs[1:], us[:-1])
    total = float(np.sum(0.5 * dt * (left + right)))
    return total / traj.horizon if mode == AVERAGED else total


def _initial_guess(tr: ShootingTranscription, signal: ControlSignal) -> np.ndarray:
    spec = tr.spec
    mids = (np.arange(spec.N) + 0.5) * spec.interval
    u = signal(np.clip(mids, 0, signal.horizon - 1e-12))
    u = np.clip(u, spec.system.input_box[:, 0], spec.system.input_box[:, 1])
    guess = ControlSignal.uniform(spec.T, u)
    try:
        traj = integrate(spec.system, spec.x0, guess, tr.dt)
        idx = np.searchsorted(traj.times, guess.breakpoints[:-1] - 1e-12)
        starts = traj.states[idx]
    except Exception:
        starts = np.repeat(spec.x0[None], spec.N, axis=0)
    starts = np.clip(starts, spec.system.state_box[:, 0], spec.system.state_box[:, 1])
    return tr.encode(u, starts)


def solve_ocp(spec: OcpSpec, warm_start: ControlSignal | np.ndarray | None = None,
              u_guess: Sequence[float] | None = None, opts: NlpOptions | None = None,
              constraint_tol: float = 1e-4) -> OcpSolution:
    """Transcribe and solve; the returned trajectory is re-integrated from ``x0``.

    Cold starts hold ``u_guess`` (typically the optimal steady-state input)
    constant; ``warm_start`` may be a previous :class:`ControlSignal` (resampled
    onto the new grid) or a raw decision vector.
    """
    tr = transcribe(spec)
    sys = spec.system
    if isinstance(warm_start, np.ndarray):
        if warm_start.shape != (tr.n,):
            raise ValueError(f"warm start must have length {tr.n}")
        v0 = warm_start
    else:
        if warm_start is None:
            ug = sys.input_center if u_guess is None else np.asarray(u_guess, float)
            warm_start = ControlSignal.constant(spec.T, ug)
        v0 = _initial_guess(tr, warm_start)
    sol = solve_nlp(tr, v0, opts)
    u, s = tr.decode(sol.point)
    signal = ControlSignal.uniform(spec.T, u)
    traj = integrate(sys, spec.x0, signal, tr.dt)
    idx = np.searchsorted(traj.times, signal.breakpoints[:-1] - 1e-12)
    node_dev = float(np.max(np.abs((traj.states[idx] - s) / sys.state_halfwidth)))
    J = trajectory_objective(traj, spec.cost, spec.objective_mode)
    viol = admissibility_report(traj, sys, tol=constraint_tol * float(np.min(sys.state_halfwidth)))
    if viol:
        log.warning("%s: re-integrated trajectory leaves the box at %d samples", tr.label, len(viol))
    return OcpSolution(traj, signal, J, sol, tr.max_defect(sol.point), node_dev, viol)


# ---------------------------------------------------------------------------
# available storage


@dataclass
class StorageEstimate:
    x0: np.ndarray
    probed_horizons: list[float]
    values: list[float]
    running_sup: list[float]
    verdict: str
    mode: str = "free"
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "x0": self.x0.tolist(), "probed_horizons": list(self.probed_horizons),
            "values": list(self.values), "running_sup": list(self.running_sup),
            "verdict": self.verdict, "mode": self.mode,
            "errors": {str(k): v for k, v in self.errors.items()},
            "verdict_rule": "diverging if the running sup still grows, without slowing, over the last "
                            "three horizons (heuristic)",
        }


def _best_prefix_value(traj: Trajectory, stage: CostFunction) -> float:
    """``max_t -int_0^t stage`` over grid times of the trajectory (includes t = 0)."""
    t, xs, us = traj.times, traj.states, traj.inputs
    dt = np.diff(t)
    incr = 0.5 * dt * (stage(xs[:-1], us[:-1]) + stage(xs[1:], us[:-1]))
    return float(max(0.0, np.max(-np.cumsum(incr)))) if incr.size else 0.0


def storage_verdict(horizons: Sequence[float], running_sup: Sequence[float], tol: float = 1e-3) -> str:
    if len(running_sup) < 3:
        return "bounded-so-far"
    (T1, T2, T3), (s1, s2, s3) = horizons[-3:], running_sup[-3:]
    slope_prev = (s2 - s1) / max(T2 - T1, 1e-300)
    slope_last = (s3 - s2) / max(T3 - T2, 1e-300)
    if s3 - s2 > tol and slope_last >= slope_prev:
        return "diverging"
    return "bounded-so-far"


def supply_stage(cost: CostFunction, F_ref: float,
                 strictness: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 label: str = "supply") -> CostFunction:
    """Stage cost ``w = F - F_ref`` (minus ``alpha`` in strict mode) for storage problems."""
    def stage(x, u):
        val = cost(x, u) - F_ref
        if strictness is not None:
            val = val - strictness(x, u)
        return val

    def grad(x, u):
        gx, gu = cost.gradients(x, u)
        if strictness is not None:
            from .models import fd_jacobians
            ax, au = fd_jacobians(lambda a, b: np.asarray(strictness(a, b))[..., None], x, u)
            gx, gu = gx - ax[..., 0, :], gu - au[..., 0, :]
        return gx, gu

    return CostFunction(stage, label=label, gradient=grad)


def available_storage(sys: ControlSystem, cost: CostFunction, z_bar: SteadyStatePair,
                      x0, T_grid: Sequence[float], strictness: Callable | None = None,
                      mode: str = "free", control_dt: float = 0.25, max_intervals: int = 50,
                      step: float = 1e-2, opts: NlpOptions | None = None,
                      tol: float = 1e-3) -> StorageEstimate:
    """Estimate ``sup_{u, T} -int_0^T w`` from below on a grid of horizons.

    ``mode="free"`` optimises over piecewise-constant admissible inputs
    (each horizon warm-started from the previous one, plus a cold start);
    ``mode="restricted"`` only considers solutions of the economic OCP and
    their truncations.  In both modes every truncation of a candidate is
    scored, which realises the free end time inside ``[0, T]``.
    """
    T_grid = [float(T) for T in T_grid]
    if not T_grid or any(b <= a for a, b in zip(T_grid, T_grid[1:])) or T_grid[0] < 0:
        raise ValueError("T_grid must be a non-empty increasing list of non-negative horizons")
    x0 = np.asarray(x0, float)
    stage = supply_stage(cost, z_bar.cost_value, strictness)
    values, sups, errors = [], [], {}
    best = 0.0
    prev_signal = None
    for T in T_grid:
        val = 0.0
        if T > 0:
            N = min(max_intervals, max(1, int(round(T / control_dt))))
            try:
                if mode == "restricted":
                    spec = OcpSpec(sys, cost, x0, T, N, AVERAGED, step)
                    sol = solve_ocp(spec, warm_start=prev_signal, u_guess=z_bar.u_bar, opts=opts)
                    val = _best_prefix_value(sol.trajectory, stage)
                    prev_signal = sol.signal
                elif mode == "free":
                    spec = OcpSpec(sys, stage, x0, T, N, INTEGRAL, step)
                    cands = [solve_ocp(spec, u_guess=z_bar.u_bar, opts=opts)]
                    if prev_signal is not None:
                        cands.append(solve_ocp(spec, warm_start=_extend(prev_signal, T), opts=opts))
                    vals = [_best_prefix_value(c.trajectory, stage) if c.admissible else 0.0
                            for c in cands]
                    k = int(np.argmax(vals))
                    val, prev_signal = vals[k], cands[k].signal
                else:
                    raise ValueError(f"unknown mode {mode!r}")
            except (RuntimeError, FloatingPointError) as exc:
                errors[T] = str(exc)
                val = float("nan")
        values.append(val)
        if np.isfinite(val):
            best = max(best, val)
        sups.append(best)
    return StorageEstimate(x0, T_grid, values, sups, storage_verdict(T_grid, sups, tol), mode, errors)


def _extend(signal: ControlSignal, T: float) -> ControlSignal:
    """Stretch a signal to horizon ``T`` by holding its last value."""
    if T <= signal.horizon:
        return signal.truncate(T)
    bp = np.append(signal.breakpoints, T)
    vals = np.vstack([signal.values, signal.values[-1:]])
    return ControlSignal(bp, vals)
