"""Turnpike diagnostics on sampled trajectories.

Time spent outside an ``epsilon``-ball around a reference is measured with
the left-endpoint rule on the trajectory grid: interval ``[t_k, t_{k+1})``
counts when the sample at ``t_k`` lies outside.  For the input-state kind
this is exact up to state interpolation, since inputs are constant on grid
intervals.  Distances can be taken in scaled coordinates by passing a
per-component ``scale`` (the distance is ``||(xi - ref) / scale||``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import ControlSystem, CostFunction
from .nlp import NlpOptions
from .ocp import INTEGRAL, OcpSpec, SteadyStatePair, solve_ocp
from .sim import Trajectory

STATE = "x"
PAIR = "z"


@dataclass(frozen=True)
class ThetaQuery:
    kind: str
    reference: np.ndarray
    epsilon: float
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (STATE, PAIR):
            raise ValueError(f"kind must be {STATE!r} or {PAIR!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "reference", np.asarray(self.reference, float).ravel())
        if self.scale is not None:
            sc = np.asarray(self.scale, float).ravel()
            if sc.shape != self.reference.shape or np.any(sc <= 0):
                raise ValueError("scale must be positive and match the reference")
            object.__setattr__(self, "scale", sc)


def deviation(traj: Trajectory, kind: str, reference, scale=None) -> np.ndarray:
    """Per-sample distance of ``x`` or ``z = (x, u)`` to ``reference``."""
    data = traj.states if kind == STATE else traj.pairs
    ref = np.asarray(reference, float).ravel()
    if data.shape[1] != ref.size:
        raise ValueError(f"reference has {ref.size} components, trajectory {kind} has {data.shape[1]}")
    diff = data - ref
    if scale is not None:
        diff = diff / np.asarray(scale, float)
    return np.linalg.norm(diff, axis=1)


def _outside(traj: Trajectory, q: ThetaQuery) -> np.ndarray:
    return deviation(traj, q.kind, q.reference, q.scale) > q.epsilon


def theta_measure(traj: Trajectory, q: ThetaQuery) -> float:
    """Time spent outside the ``epsilon``-ball (left-endpoint rule)."""
    out = _outside(traj, q)
    return float(np.sum(np.diff(traj.times)[out[:-1]]))


def theta_error_bar(traj: Trajectory, q: ThetaQuery) -> float:
    """One grid step (the largest) per boundary crossing of the sampled indicator."""
    out = _outside(traj, q)
    crossings = int(np.count_nonzero(out[1:] != out[:-1]))
    step = float(np.max(np.diff(traj.times))) if len(traj.times) > 1 else 0.0
    return crossings * step


def exactness_measure(traj: Trajectory, reference, kind: str = PAIR, delta0: float = 1e-6,
                      scale=None) -> float:
    """:func:`theta_measure` at the numerical stand-in ``epsilon = delta0``."""
    if delta0 < 0:
        raise ValueError("delta0 must be non-negative")
    return theta_measure(traj, ThetaQuery(kind, reference, delta0, scale))


def exact_turnpike_flag(horizons: Sequence[float], measures: Sequence[float],
                        min_slope: float = 0.5) -> bool:
    """True when the time spent at the reference, ``T - measure``, grows linearly in ``T``.

    Rule: least-squares slope of ``T - measure`` against ``T`` at least
    ``min_slope``, over at least two distinct horizons.
    """
    T = np.asarray(horizons, float)
    m = np.asarray(measures, float)
    if np.unique(T).size < 2:
        return False
    slope = np.polyfit(T, T - m, 1)[0]
    return bool(slope >= min_slope)


@dataclass
class Arcs:
    approach: tuple[float, float] | None
    middle: tuple[float, float] | None
    leaving: tuple[float, float] | None

    @property
    def entered(self) -> bool:
        return self.middle is not None

    def to_dict(self) -> dict:
        return {"approach": self.approach, "middle": self.middle, "leaving": self.leaving,
                "entered": self.entered}


def arc_decomposition(traj: Trajectory, reference, kind: str, epsilon: float, scale=None) -> Arcs:
    """Split at the first entry into and the last exit from the ``epsilon``-ball.

    Entry and exit are the first and last samples inside the ball; a run
    that never enters has no middle arc (no turnpike at this ``epsilon``).
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    inside = deviation(traj, kind, reference, scale) <= epsilon
    t = traj.times
    if not inside.any():
        return Arcs((float(t[0]), float(t[-1])), None, None)
    idx = np.nonzero(inside)[0]
    t_in, t_out = float(t[idx[0]]), float(t[idx[-1]])
    approach = (float(t[0]), t_in) if t_in > t[0] else None
    leaving = (t_out, float(t[-1])) if t_out < t[-1] else None
    return Arcs(approach, (t_in, t_out), leaving)


@dataclass
class TurnpikeReport:
    kind: str
    epsilons: list[float]
    runs: list[dict]
    measures: np.ndarray
    error_bars: np.ndarray
    nu_envelope: np.ndarray
    turnpike_consistent: bool
    trend_slopes: np.ndarray
    exactness: list[float] = field(default_factory=list)
    exact_turnpike: bool = False
    arc_table: list[dict] = field(default_factory=list)
    delta0: float = 1e-6
    trend_tolerance: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilons": list(self.epsilons),
            "runs": self.runs,
            "measures": self.measures.tolist(),
            "error_bars": self.error_bars.tolist(),
            "nu_envelope": self.nu_envelope.tolist(),
            "turnpike_consistent": self.turnpike_consistent,
            "consistency_rule": "for every epsilon and initial state, the least-squares slope of "
                                "measure against T, times the span of T, is within the trend tolerance",
            "trend_tolerance": self.trend_tolerance,
            "trend_slopes": self.trend_slopes.tolist(),
            "delta0": self.delta0,
            "exactness": list(self.exactness),
            "exact_turnpike": self.exact_turnpike,
            "arc_table": self.arc_table,
            "note": "empirical envelopes over a finite sweep; finite by construction",
        }

    def envelope_csv(self) -> str:
        lines = ["epsilon,nu"]
        lines += [f"{e:.17g},{v:.17g}" for e, v in zip(self.epsilons, self.nu_envelope)]
        return "\n".join(lines) + "\n"


def nu_envelope(sweep: Sequence[tuple[Trajectory, float, Sequence[float]]], reference,
                kind: str, epsilon_grid: Sequence[float], scale=None, delta0: float = 1e-6,
                arc_epsilon: float | None = None, trend_tolerance: float | None = None) -> TurnpikeReport:
    """Measure table and per-``epsilon`` envelope over a sweep of ``(traj, T, x0)`` runs.

    ``turnpike_consistent`` holds when, for each ``epsilon`` and each initial
    state, the fitted growth of the measure across the horizons of that
    state stays within ``trend_tolerance`` (default: two of the largest grid
    steps in the sweep).
    """
    if not sweep:
        raise ValueError("empty sweep")
    eps = [float(e) for e in epsilon_grid]
    if not eps or any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon grid must be positive and increasing")
    meas = np.zeros((len(sweep), len(eps)))
    bars = np.zeros_like(meas)
    runs, exact, arcs = [], [], []
    max_step = 0.0
    for i, (traj, T, x0) in enumerate(sweep):
        max_step = max(max_step, float(np.max(np.diff(traj.times))))
        for j, e in enumerate(eps):
            q = ThetaQuery(kind, reference, e, scale)
            meas[i, j] = theta_measure(traj, q)
            bars[i, j] = theta_error_bar(traj, q)
        runs.append({"index": i, "T": float(T), "x0": [float(v) for v in x0]})
        exact.append(exactness_measure(traj, reference, kind, delta0, scale))
        a = arc_decomposition(traj, reference, kind, arc_epsilon or eps[0], scale)
        arcs.append({"index": i, **a.to_dict()})
    tol = 2.0 * max_step if trend_tolerance is None else trend_tolerance

    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(runs):
        groups.setdefault(tuple(r["x0"]), []).append(i)
    slopes = np.zeros(len(eps))
    consistent = True
    exact_flag = False
    for idx in groups.values():
        Ts = np.array([runs[i]["T"] for i in idx])
        if np.unique(Ts).size < 2:
            continue
        span = Ts.max() - Ts.min()
        for j in range(len(eps)):
            s = np.polyfit(Ts, meas[idx, j], 1)[0]
            slopes[j] = max(slopes[j], s)
            if s * span > tol:
                consistent = False
        exact_flag = exact_flag or exact_turnpike_flag(Ts, [exact[i] for i in idx])
    return TurnpikeReport(kind, eps, runs, meas, bars, meas.max(axis=0), consistent, slopes,
                          exact, exact_flag, arcs, delta0, tol)


# ---------------------------------------------------------------------------
# reachability


@dataclass
class ReachabilityProbe:
    trajectory: Trajectory
    distances: np.ndarray
    c: float
    lam: float
    dominates: bool
    status: str

    @property
    def evidence(self) -> bool:
        """Positive fitted decay rate with a dominating envelope (numerical evidence only)."""
        return self.dominates and self.lam > 0

    def envelope(self, t) -> np.ndarray:
        return self.c * np.exp(-self.lam * np.asarray(t, float))

    def to_dict(self) -> dict:
        return {"c": self.c, "lambda": self.lam, "dominates": self.dominates, "status": self.status}


def fit_exponential_envelope(times, distances, floor: float = 1e-9) -> tuple[float, float]:
    """Fit ``c exp(-lam t)`` to a distance trace.

    ``lam`` is the least-squares slope of ``-log d`` over samples above
    ``floor`` (relative to the peak); ``c`` is then raised until the
    envelope dominates every sample.  A trace at numerical zero returns
    ``(max d, inf)``.
    """
    t = np.asarray(times, float)
    d = np.asarray(distances, float)
    peak = float(np.max(d)) if d.size else 0.0
    if peak <= 1e-12:
        return peak, float("inf")
    keep = d > floor * peak
    if keep.sum() < 2:
        return peak, float("inf")
    slope, _ = np.polyfit(t[keep], np.log(d[keep]), 1)
    lam = float(-slope)
    c = float(np.max(d * np.exp(lam * t)))
    return c, lam


def reachability_probe(sys: ControlSystem, z_bar: SteadyStatePair, x0, T_max: float, N: int = 50,
                       step: float = 1e-2, opts: NlpOptions | None = None) -> ReachabilityProbe:
    """Steer ``x0`` towards ``z_bar`` with a tracking OCP and fit an exponential envelope.

    The stage cost is the squared scaled distance of ``(x, u)`` to the
    reference; the fitted envelope refers to the unscaled Euclidean distance.
    """
    if not T_max > 0:
        raise ValueError("T_max must be positive")
    ref = z_bar.z_bar
    n_x = sys.n_x
    half = np.concatenate([sys.state_halfwidth, sys.input_halfwidth])

    def split(x, u):
        x, u = np.asarray(x, float), np.asarray(u, float)
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return (np.broadcast_to(x, lead + x.shape[-1:]) - ref[:n_x]) / half[:n_x], \
            (np.broadcast_to(u, lead + u.shape[-1:]) - ref[n_x:]) / half[n_x:]

    def stage(x, u):
        dx, du = split(x, u)
        return np.sum(dx * dx, axis=-1) + np.sum(du * du, axis=-1)

    def grad(x, u):
        dx, du = split(x, u)
        return 2.0 * dx / half[:n_x], 2.0 * du / half[n_x:]

    tracking = CostFunction(stage, label="tracking", gradient=grad)
    sol = solve_ocp(OcpSpec(sys, tracking, x0, T_max, N, INTEGRAL, step), u_guess=z_bar.u_bar, opts=opts)
    traj = sol.trajectory
    d = deviation(traj, PAIR, ref)
    c, lam = fit_exponential_envelope(traj.times, d)
    if np.isfinite(lam):
        dominates = bool(np.all(d <= c * np.exp(-lam * traj.times) * (1 + 1e-9) + 1e-12))
    else:
        dominates = bool(np.all(d <= c + 1e-12))
    status = sol.status if sol.admissible else "inadmissible"
    return ReachabilityProbe(traj, d, c, lam, dominates, status)
