"""Smooth nonlinear programming by a box-constrained augmented Lagrangian.

Problems have the form::

    min f(v)  s.t.  h(v) = 0,  g(v) <= 0,  lower <= v <= upper

The outer loop updates multipliers and the penalty (Powell-Hestenes-
Rockafellar form for the inequalities); each inner problem is a bound
constrained minimisation solved with limited-memory BFGS (L-BFGS-B).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.stats import qmc

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"


class NlpError(ValueError):
    pass


def fd_gradient(fun: Callable[[np.ndarray], float], v: np.ndarray) -> np.ndarray:
    """Central differences with step ``1e-6 * (1 + |v_i|)``."""
    v = np.asarray(v, float)
    g = np.empty_like(v)
    for i in range(v.size):
        h = 1e-6 * (1.0 + abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        g[i] = (fun(vp) - fun(vm)) / (2 * h)
    return g


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, float)
    cols = []
    for i in range(v.size):
        h = 1e-6 * (1.0 + abs(v[i]))
        vp, vm = v.copy(), v.copy()
        vp[i] += h
        vm[i] -= h
        cols.append((np.asarray(fun(vp), float) - np.asarray(fun(vm), float)) / (2 * h))
    return np.stack(cols, axis=-1) if cols else np.zeros((0, 0))


@dataclass
class NlpProblem:
    """Objective, constraints and box of a smooth NLP.

    Jacobians may be dense arrays or scipy sparse matrices.  Missing
    derivatives are replaced by central finite differences.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    objective_gradient: Callable[[np.ndarray], np.ndarray] | None = None
    eq_constraints: Callable[[np.ndarray], np.ndarray] | None = None
    eq_jacobian: Callable | None = None
    ineq_constraints: Callable[[np.ndarray], np.ndarray] | None = None
    ineq_jacobian: Callable | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    label: str = "nlp"

    def __post_init__(self):
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if lo.shape != (self.n,) or hi.shape != (self.n,):
            raise NlpError("box bounds must have length n")
        if np.any(lo > hi):
            raise NlpError("lower bound exceeds upper bound")
        self.lower, self.upper = lo, hi

    def f(self, v) -> float:
        return float(self.objective(v))

    def grad(self, v) -> np.ndarray:
        if self.objective_gradient is not None:
            return np.asarray(self.objective_gradient(v), float)
        return fd_gradient(self.f, v)

    def h(self, v) -> np.ndarray:
        if self.eq_constraints is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.eq_constraints(v), float))

    def g(self, v) -> np.ndarray:
        if self.ineq_constraints is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.ineq_constraints(v), float))

    def jac_h(self, v):
        if self.eq_constraints is None:
            return np.zeros((0, self.n))
        if self.eq_jacobian is not None:
            return self.eq_jacobian(v)
        return fd_jacobian(self.h, v).reshape(-1, self.n)

    def jac_g(self, v):
        if self.ineq_constraints is None:
            return np.zeros((0, self.n))
        if self.ineq_jacobian is not None:
            return self.ineq_jacobian(v)
        return fd_jacobian(self.g, v).reshape(-1, self.n)

    def project(self, v) -> np.ndarray:
        return np.clip(np.asarray(v, float), self.lower, self.upper)

    def violation(self, v) -> float:
        h, g = self.h(v), self.g(v)
        parts = [0.0]
        if h.size:
            parts.append(float(np.max(np.abs(h))))
        if g.size:
            parts.append(float(np.max(g)))
        return max(parts)


@dataclass(frozen=True)
class NlpOptions:
    tol: float = 1e-6
    max_outer: int = 40
    max_inner: int = 3000
    penalty_init: float = 1.0
    penalty_factor: float = 10.0
    penalty_max: float = 1e10
    inner_tol_init: float = 1e-2
    lbfgs_memory: int = 20


@dataclass
class NlpSolution:
    point: np.ndarray
    objective_value: float
    stationarity: float
    feasibility: float
    iterations: int
    status: str
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ineq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outer_violations: list[float] = field(default_factory=list)

    @property
    def kkt_residual(self) -> float:
        return max(self.stationarity, self.feasibility)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _matT(J, y: np.ndarray) -> np.ndarray:
    if y.size == 0:
        return 0.0
    return np.asarray(J.T @ y).ravel() if sp.issparse(J) else J.T @ y


def kkt_measures(p: NlpProblem, v, lam, mu) -> tuple[float, float]:
    """(projected stationarity, feasibility incl. complementarity) in the inf-norm."""
    grad = p.grad(v) + _matT(p.jac_h(v), lam) + _matT(p.jac_g(v), mu)
    stat = float(np.max(np.abs(p.project(v - grad) - v))) if p.n else 0.0
    h, g = p.h(v), p.g(v)
    feas = 0.0
    if h.size:
        feas = max(feas, float(np.max(np.abs(h))))
    if g.size:
        feas = max(feas, float(np.max(np.maximum(g, -mu))))
    return stat, feas


def solve_nlp(p: NlpProblem, start, opts: NlpOptions | None = None) -> NlpSolution:
    """Minimise ``p`` from ``start`` (projected into the box)."""
    opts = opts or NlpOptions()
    v = p.project(np.asarray(start, float).copy())
    f0 = p.f(v)
    if not np.isfinite(f0):
        raise NlpError("objective is not finite at the start point")
    m_e, m_i = p.h(v).size, p.g(v).size
    lam, mu = np.zeros(m_e), np.zeros(m_i)
    rho = opts.penalty_init
    inner_tol = opts.inner_tol_init if (m_e or m_i) else 0.01 * opts.tol
    bounds = list(zip(np.where(np.isfinite(p.lower), p.lower, None),
                      np.where(np.isfinite(p.upper), p.upper, None)))

    def merit(x):
        fx = p.f(x)
        gr = p.grad(x)
        if m_e:
            h = p.h(x)
            fx += lam @ h + 0.5 * rho * h @ h
            gr = gr + _matT(p.jac_h(x), lam + rho * h)
        if m_i:
            g = p.g(x)
            shifted = np.maximum(0.0, mu + rho * g)
            fx += (shifted @ shifted - mu @ mu) / (2.0 * rho)
            gr = gr + _matT(p.jac_g(x), shifted)
        if not np.isfinite(fx):
            return 1e300, np.zeros_like(x)
        return fx, gr

    best_v, best_key = v.copy(), (np.inf, np.inf)
    total_iter = 0
    outer_viol: list[float] = []
    prev_viol = np.inf
    status = MAX_ITER
    stat = feas = np.inf
    for outer in range(opts.max_outer):
        res = minimize(merit, v, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.max_inner, "gtol": inner_tol, "ftol": 1e-15,
                                "maxcor": opts.lbfgs_memory, "maxls": 40})
        v = p.project(res.x)
        total_iter += int(res.nit)
        h, g = p.h(v), p.g(v)
        viol = max([0.0] + ([float(np.max(np.abs(h)))] if m_e else [])
                   + ([float(np.max(np.maximum(g, -mu / rho)))] if m_i else []))
        if m_e:
            lam = lam + rho * h
        if m_i:
            mu = np.maximum(0.0, mu + rho * g)
        plain_viol = p.violation(v)
        outer_viol.append(plain_viol)
        stat, feas = kkt_measures(p, v, lam, mu)
        fv = p.f(v)
        key = (0.0 if plain_viol <= opts.tol else plain_viol, fv)
        if key < best_key:
            best_key, best_v = key, v.copy()
        log.debug("%s outer %d: f=%.10g viol=%.3g stat=%.3g rho=%.1e", p.label, outer, fv,
                  plain_viol, stat, rho)
        if stat <= opts.tol and feas <= opts.tol:
            status = CONVERGED
            best_v = v.copy()
            break
        if viol > 0.25 * prev_viol and viol > opts.tol:
            rho = min(rho * opts.penalty_factor, opts.penalty_max)
        prev_viol = min(prev_viol, viol)
        inner_tol = max(inner_tol * 0.1, 0.01 * opts.tol)

    if status != CONVERGED:
        if p.violation(best_v) > max(1e3 * opts.tol, 1e-4) and rho >= opts.penalty_max:
            status = INFEASIBLE
        stat, feas = kkt_measures(p, best_v, lam, mu)
    return NlpSolution(
        point=best_v, objective_value=p.f(best_v), stationarity=stat, feasibility=feas,
        iterations=total_iter, status=status, eq_multipliers=lam, ineq_multipliers=mu,
        outer_violations=outer_viol,
    )


@dataclass
class MultistartResult:
    best: NlpSolution
    solutions: list[NlpSolution]
    starts: np.ndarray
    best_index: int


def multistart_points(p: NlpProblem, k: int, seed: int = 0) -> np.ndarray:
    """``k`` scrambled-Halton points inside the (finite) box."""
    if not (np.all(np.isfinite(p.lower)) and np.all(np.isfinite(p.upper))):
        raise NlpError("multistart requires a finite box")
    pts = qmc.Halton(d=p.n, scramble=True, seed=seed).random(k)
    return p.lower + (p.upper - p.lower) * pts


def multistart(p: NlpProblem, k: int = 8, seed: int = 0, opts: NlpOptions | None = None,
               jobs: int = 1) -> MultistartResult:
    """Run :func:`solve_nlp` from ``k`` deterministic starts; keep the lowest objective.

    Converged solutions beat unconverged ones; objective ties within 1e-10
    go to the lowest start index.
    """
    if k < 1:
        raise NlpError("k must be >= 1")
    starts = multistart_points(p, k, seed)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            sols = list(ex.map(lambda s: solve_nlp(p, s, opts), starts))
    else:
        sols = [solve_nlp(p, s, opts) for s in starts]
    tol = (opts or NlpOptions()).tol

    def rank(i):
        s = sols[i]
        feasible = s.converged or p.violation(s.point) <= max(tol, 1e-6)
        return (0 if s.converged else 1 if feasible else 2)

    best_i = 0
    for i in range(1, k):
        ri, rb = rank(i), rank(best_i)
        if ri < rb or (ri == rb and sols[i].objective_value < sols[best_i].objective_value - 1e-10):
            best_i = i
    return MultistartResult(sols[best_i], sols, starts, best_i)


def with_options(opts: NlpOptions | None, **kw) -> NlpOptions:
    return replace(opts or NlpOptions(), **kw)
