"""Supply rates, storage certificates, synthesis and independent checks.

Synthesis works in box coordinates scaled to ``[-1, 1]``: with
``x = c_x + r_x * y`` and ``u = c_u + r_u * v`` the dissipation polynomial

    L(y, v) = w(y, v) - alpha_bar * ||(y, [v]) - ref||^2 - grad S(y) . f_scaled(y, v)

must be nonnegative on the scaled box.  When ``L`` is multi-affine or
concave in each input (input-affine dynamics, cost affine in each input)
its minimum over the input box sits at a vertex, so one Putinar identity in
``y`` per input vertex suffices (``mode="vertex"``); otherwise a single
identity in ``(y, v)`` is imposed (``mode="joint"``).  Box constraints are
described by ``1 - y_i^2 >= 0``.

The certificate is reported in original coordinates; the strictness term
keeps the scaled form ``alpha_bar * ||(xi - xi_ref) / r||^2``.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..models import ControlSystem, CostFunction, PolynomialVectorField
from ..ocp import SteadyStatePair
from ..polynomial import Polynomial, monomial_basis
from ..sim import Trajectory
from .sdp import CONVERGED, PRIMAL_INFEASIBLE, SdpOptions, SdpTooLarge
from .sos import SosIdentity, SosProblem, compile_sos, default_degrees

log = logging.getLogger(__name__)


class NoCertificate(RuntimeError):
    """No storage function of the requested degree was found (not a refutation)."""


@dataclass(frozen=True)
class SupplyRate:
    cost: CostFunction
    reference: SteadyStatePair
    offset: float

    def __call__(self, x, u):
        return self.cost(x, u) - self.offset

    @property
    def polynomial(self) -> Polynomial | None:
        p = self.cost.polynomial
        return None if p is None else p - self.offset


def supply_rate(cost: CostFunction, z_bar: SteadyStatePair) -> SupplyRate:
    """``w(x, u) = F(x, u) - F(z_bar)``; the offset is evaluated, so ``w(z_bar) = 0`` exactly."""
    offset = float(cost(z_bar.x_bar, z_bar.u_bar))
    return SupplyRate(cost, z_bar, offset)


@dataclass
class StorageCertificate:
    storage: Polynomial
    alpha_bar: float
    x_ref: np.ndarray
    u_ref: np.ndarray
    alpha_scale: np.ndarray
    alpha_on: str = "x"
    alpha_form: str = "quadratic"
    degree: int = 0
    info: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_ref = np.asarray(self.x_ref, float).ravel()
        self.u_ref = np.asarray(self.u_ref, float).ravel()
        self.alpha_scale = np.asarray(self.alpha_scale, float).ravel()
        if not 0.0 <= self.alpha_bar <= 1.0 + 1e-12:
            raise ValueError("alpha_bar must lie in [0, 1]")
        if self.alpha_on not in ("x", "z"):
            raise ValueError("alpha_on must be 'x' or 'z'")
        want = self.x_ref.size + (self.u_ref.size if self.alpha_on == "z" else 0)
        if self.alpha_scale.size != want:
            raise ValueError("alpha_scale has the wrong length")
        self._grad = self.storage.gradient()

    @property
    def n_x(self) -> int:
        return self.x_ref.size

    def S(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.broadcast_to(self.storage(x), x.shape[:-1]) if x.ndim > 1 else self.storage(x)

    def grad_S(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.stack([np.broadcast_to(g(x), x.shape[:-1]) for g in self._grad], axis=-1)

    def alpha(self, x, u) -> np.ndarray:
        x = np.asarray(x, float)
        d = (x - self.x_ref) / self.alpha_scale[: self.n_x]
        val = np.sum(d * d, axis=-1)
        if self.alpha_on == "z":
            e = (np.asarray(u, float) - self.u_ref) / self.alpha_scale[self.n_x:]
            val = val + np.sum(e * e, axis=-1)
        return self.alpha_bar * val

    def alpha_of_distance(self, dist) -> np.ndarray:
        """Class-K lower bound ``alpha_bar * dist^2 / max(scale)^2`` in unscaled distance."""
        return self.alpha_bar * np.asarray(dist, float) ** 2 / float(np.max(self.alpha_scale)) ** 2

    def sup_abs_S(self, sys: ControlSystem, density: int = 21) -> float:
        return float(np.max(np.abs(self.S(state_grid(sys, density)))))

    def to_dict(self) -> dict:
        return {
            "variables": list(self.storage.variables),
            "storage": self.storage.to_dict()["terms"],
            "alpha_bar": self.alpha_bar,
            "alpha_form": self.alpha_form,
            "alpha_on": self.alpha_on,
            "alpha_scale": self.alpha_scale.tolist(),
            "reference": {"x": self.x_ref.tolist(), "u": self.u_ref.tolist()},
            "degree": self.degree,
            "info": self.info,
            "verification": self.verification,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StorageCertificate":
        storage = Polynomial.from_dict({"variables": d["variables"], "terms": d["storage"]})
        return cls(storage, float(d["alpha_bar"]), d["reference"]["x"], d["reference"]["u"],
                   d["alpha_scale"], d.get("alpha_on", "x"), d.get("alpha_form", "quadratic"),
                   int(d.get("degree", storage.degree())), d.get("info", {}), d.get("verification", {}))

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_json(cls, path) -> "StorageCertificate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def state_grid(sys: ControlSystem, density: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, density) for lo, hi in sys.state_box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, sys.n_x)


# ---------------------------------------------------------------------------
# residuals


@dataclass
class DissipationTrace:
    times: np.ndarray
    delta: np.ndarray
    storage: np.ndarray

    @property
    def max_delta(self) -> float:
        return float(np.max(self.delta))

    @property
    def argmax_time(self) -> float:
        return float(self.times[int(np.argmax(self.delta))])

    def holds(self, tol: float = 1e-3) -> bool:
        return self.max_delta <= tol

    def to_csv(self) -> str:
        rows = ["t,delta,S"]
        rows += [f"{t:.17g},{d:.17g},{s:.17g}" for t, d, s in zip(self.times, self.delta, self.storage)]
        return "\n".join(rows) + "\n"


def dissipation_residual(traj: Trajectory, cert: StorageCertificate, w: Callable,
                         alpha: Callable | None = None) -> DissipationTrace:
    """``Delta(t) = S(x(t)) - S(x(0)) - int_0^t (w - alpha)`` by the trapezoidal rule.

    ``alpha`` defaults to the certificate's quadratic strictness term; the
    input on ``[t_k, t_{k+1}]`` is ``inputs[k]`` at both ends.
    """
    if traj.states.shape[1] != cert.n_x:
        raise ValueError("certificate and trajectory state dimensions differ")
    alpha = cert.alpha if alpha is None else alpha
    t, xs, us = traj.times, traj.states, traj.inputs

    def rate(x, u):
        return np.asarray(w(x, u), float) - np.asarray(alpha(x, u), float)

    incr = 0.5 * np.diff(t) * (rate(xs[:-1], us[:-1]) + rate(xs[1:], us[:-1]))
    integral = np.concatenate([[0.0], np.cumsum(incr)])
    S = np.asarray(cert.S(xs), float)
    return DissipationTrace(t.copy(), S - S[0] - integral, S)


@dataclass
class CertificateCheck:
    min_residual: float
    argmin: list[float]
    n_points: int
    n_violations: int
    violations: list[dict]
    storage_min: float
    tol: float

    @property
    def dissipation_ok(self) -> bool:
        return self.n_violations == 0

    @property
    def storage_ok(self) -> bool:
        return self.storage_min >= -self.tol

    @property
    def ok(self) -> bool:
        return self.dissipation_ok and self.storage_ok

    def to_dict(self) -> dict:
        return {"min_residual": self.min_residual, "argmin": self.argmin, "n_points": self.n_points,
                "n_violations": self.n_violations, "violations": self.violations,
                "storage_min": self.storage_min, "tol": self.tol, "ok": self.ok}


def dissipation_polynomial_residual(cert: StorageCertificate, sys: ControlSystem, w: Callable,
                                    x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``w - alpha - grad S . f`` evaluated pointwise."""
    f = sys.f(x, u)
    return np.asarray(w(x, u), float) - cert.alpha(x, u) - np.sum(cert.grad_S(x) * f, axis=-1)


def check_certificate(cert: StorageCertificate, sys: ControlSystem, w: Callable, grid_density: int = 11,
                      n_random: int = 2000, seed: int = 0, tol: float = 1e-7,
                      max_listed: int = 20) -> CertificateCheck:
    """Grid and random-sample validation of a certificate, independent of any SDP.

    Points: a ``grid_density``-per-axis grid of ``X`` at every vertex of
    ``U``, plus ``n_random`` uniform samples of ``X x U``.  Residual
    violations are values below ``-tol``; storage must be ``>= -tol`` on
    the grid.
    """
    xg = state_grid(sys, grid_density)
    verts = sys.input_vertices()
    xs = [np.repeat(xg, len(verts), axis=0)]
    us = [np.tile(verts, (len(xg), 1))]
    if n_random:
        rng = np.random.default_rng(seed)
        lo = np.concatenate([sys.state_box[:, 0], sys.input_box[:, 0]])
        hi = np.concatenate([sys.state_box[:, 1], sys.input_box[:, 1]])
        pts = lo + (hi - lo) * rng.random((n_random, lo.size))
        xs.append(pts[:, : sys.n_x])
        us.append(pts[:, sys.n_x:])
    X = np.concatenate(xs)
    U = np.concatenate(us)
    L = dissipation_polynomial_residual(cert, sys, w, X, U)
    bad = np.nonzero(L < -tol)[0]
    worst = bad[np.argsort(L[bad])][:max_listed]
    listed = [{"x": X[i].tolist(), "u": U[i].tolist(), "residual": float(L[i])} for i in worst]
    k = int(np.argmin(L))
    s_min = float(np.min(cert.S(xg)))
    return CertificateCheck(float(L[k]), X[k].tolist() + U[k].tolist(), int(L.size), int(bad.size),
                            listed, s_min, tol)


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class ScaledData:
    """Polynomial data of the dissipation inequality in scaled coordinates."""

    variables: tuple[str, ...]
    n_x: int
    n_u: int
    field_scaled: list[Polynomial]
    supply_scaled: Polynomial
    x_ref: np.ndarray
    u_ref: np.ndarray
    center: np.ndarray
    half: np.ndarray


def scaled_data(sys: ControlSystem, cost_poly: Polynomial, z_bar: SteadyStatePair) -> ScaledData:
    vf: PolynomialVectorField | None = sys.polynomial
    if vf is None:
        raise ValueError("certificate synthesis needs a polynomial vector field")
    vars_ = vf.variables
    if cost_poly.nvars != len(vars_):
        raise ValueError("cost polynomial must be over (x, u)")
    cost_poly = Polynomial(vars_, dict(cost_poly.items()))
    center = np.concatenate([sys.state_center, sys.input_center])
    half = np.concatenate([sys.state_halfwidth, sys.input_halfwidth])
    offset = float(cost_poly(np.concatenate([z_bar.x_bar, z_bar.u_bar])))
    fs = [c.affine_substitute(center, half) / half[i] for i, c in enumerate(vf.coords)]
    ws = (cost_poly - offset).affine_substitute(center, half)
    return ScaledData(vars_, sys.n_x, sys.n_u, fs, ws,
                      (z_bar.x_bar - sys.state_center) / sys.state_halfwidth,
                      (z_bar.u_bar - sys.input_center) / sys.input_halfwidth, center, half)


def _multi_affine_or_concave_in_inputs(p: Polynomial, n_x: int) -> bool:
    """Degree <= 1 in each input, or a separable concave quadratic part in it."""
    for j in range(n_x, p.nvars):
        if p.degree_in(j) > 2:
            return False
        if p.degree_in(j) == 2:
            for e, c in p.items():
                if e[j] == 2 and (sum(e) != 2 or c > 0):
                    return False
    return True


def build_identities(data: ScaledData, storage_degree: int, alpha_on: str = "x", mode: str = "auto",
                     multiplier_degree: int | None = None) -> tuple[list[SosIdentity], list, str]:
    """Putinar identities for the scaled dissipation inequality.

    Returns the identities, the storage monomials (exponents over the
    states) and the mode actually used.
    """
    vars_ = data.variables
    n_x, n_u = data.n_x, data.n_u
    n = n_x + n_u
    s_basis = monomial_basis(n_x, storage_degree, min_degree=1)
    terms = []
    for e in s_basis:
        full = tuple(e) + (0,) * n_u
        m = Polynomial(vars_, {full: 1.0})
        lie = Polynomial.zero(vars_)
        for i in range(n_x):
            if e[i]:
                lie = lie + m.diff(i) * data.field_scaled[i]
        terms.append(lie)
    ref = np.concatenate([data.x_ref, data.u_ref])
    which = list(range(n_x)) + (list(range(n_x, n)) if alpha_on == "z" else [])
    strict = Polynomial.zero(vars_)
    for i in which:
        d = Polynomial.variable(vars_, i) - float(ref[i])
        strict = strict + d * d

    if mode == "auto":
        probe = data.supply_scaled - strict
        for t in terms:
            probe = probe + t
        mode = "vertex" if _multi_affine_or_concave_in_inputs(probe, n_x) else "joint"

    identities = []
    if mode == "vertex":
        state_vars = vars_[:n_x]
        gs = [1.0 - Polynomial.variable(state_vars, i) ** 2 for i in range(n_x)]
        for vert in itertools.product((-1.0, 1.0), repeat=n_u):
            fix = dict(zip(vars_[n_x:], vert))
            tgt = data.supply_scaled.restrict(fix)
            st = strict.restrict(fix)
            ts = [t.restrict(fix) for t in terms]
            deg = max([tgt.degree(), st.degree()] + [t.degree() for t in ts])
            d0, dm = default_degrees(deg, gs, multiplier_degree)
            identities.append(SosIdentity(tgt, st, ts, gs, d0, dm, label=f"vertex {vert}"))
    elif mode == "joint":
        gs = [1.0 - Polynomial.variable(vars_, i) ** 2 for i in range(n)]
        deg = max([data.supply_scaled.degree(), strict.degree()] + [t.degree() for t in terms])
        d0, dm = default_degrees(deg, gs, multiplier_degree)
        identities.append(SosIdentity(data.supply_scaled, strict, terms, gs, d0, dm, label="joint"))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return identities, s_basis, mode


def _feasible(res, opts: SdpOptions) -> bool:
    return res.status == CONVERGED or (res.primal_infeasibility <= 1e3 * opts.feas_tol
                                       and res.status != PRIMAL_INFEASIBLE)


def synthesize_certificate(sys: ControlSystem, cost: CostFunction | Polynomial, z_bar: SteadyStatePair,
                           storage_degree: int, multiplier_degree: int | None = None,
                           alpha_on: str = "x", mode: str = "auto", method: str = "direct",
                           sdp_opts: SdpOptions | None = None, bisection_tol: float = 1e-3,
                           reduce_degree: bool = False,
                           shift_density: int = 21) -> tuple[StorageCertificate, SosProblem]:
    """Maximise ``alpha_bar`` in ``[0, 1]`` over polynomial storage functions.

    ``method="direct"`` carries ``alpha_bar`` as an SDP variable;
    ``method="bisection"`` solves feasibility problems at fixed values.  With
    ``reduce_degree`` the storage degree is lowered until the SDP fits the
    dense cap.  The storage is shifted so that its minimum on a grid of
    ``X`` is zero.
    """
    sdp_opts = sdp_opts or SdpOptions()
    cost_poly = cost.polynomial if isinstance(cost, CostFunction) else cost
    if cost_poly is None:
        raise ValueError("certificate synthesis needs a polynomial cost")
    data = scaled_data(sys, cost_poly, z_bar)
    degree = storage_degree
    while True:
        idents, s_basis, used_mode = build_identities(data, degree, alpha_on, mode, multiplier_degree)
        gram = sum(i.gram_dimension() for i in idents)
        if gram <= sdp_opts.psd_cap or not reduce_degree or degree == 0:
            break
        log.info("storage degree %d needs PSD dimension %d > %d; reducing", degree, gram,
                 sdp_opts.psd_cap)
        degree -= 1
    if gram > sdp_opts.psd_cap:
        raise SdpTooLarge(f"storage degree {degree}: total PSD dimension {gram} exceeds cap "
                          f"{sdp_opts.psd_cap}")

    labels = ["*".join(f"y{i}^{k}" for i, k in enumerate(e) if k) for e in s_basis]
    if method == "direct":
        prob = compile_sos(idents, len(s_basis), None, labels)
        res = prob.solve(sdp_opts)
        if res.status == PRIMAL_INFEASIBLE or not _feasible(res, sdp_opts):
            raise NoCertificate(f"no storage of degree {degree} (SDP status {res.status})")
        alpha_bar = float(np.clip(prob.alpha(res), 0.0, 1.0))
    elif method == "bisection":
        def attempt(a):
            p = compile_sos(idents, len(s_basis), a, labels)
            r = p.solve(sdp_opts)
            return p, r, _feasible(r, sdp_opts)

        prob, res, ok = attempt(0.0)
        if not ok:
            raise NoCertificate(f"no storage of degree {degree} at alpha_bar = 0 (SDP status {res.status})")
        alpha_bar = 0.0
        p1, r1, ok1 = attempt(1.0)
        if ok1:
            prob, res, alpha_bar = p1, r1, 1.0
        else:
            lo, hi = 0.0, 1.0
            while hi - lo > bisection_tol:
                mid = 0.5 * (lo + hi)
                pm, rm, okm = attempt(mid)
                if okm:
                    lo, prob, res = mid, pm, rm
                else:
                    hi = mid
            alpha_bar = lo
    else:
        raise ValueError(f"unknown method {method!r}")

    coeffs = prob.free_values(res)
    state_vars = data.variables[: data.n_x]
    S_scaled = Polynomial(state_vars, {tuple(e): float(c) for e, c in zip(s_basis, coeffs)})
    axes = [np.linspace(-1.0, 1.0, shift_density)] * data.n_x
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, data.n_x)
    S_scaled = S_scaled - float(np.min(S_scaled(grid))) if S_scaled.terms else S_scaled
    cx, rx = sys.state_center, sys.state_halfwidth
    S = S_scaled.affine_substitute(-cx / rx, 1.0 / rx)
    scale = rx if alpha_on == "x" else np.concatenate([rx, sys.input_halfwidth])
    info = {
        "requested_degree": storage_degree,
        "mode": used_mode,
        "method": method,
        "sdp_status": res.status,
        "sdp_iterations": res.iterations,
        "sdp_gap": res.gap,
        "sdp_primal_infeasibility": res.primal_infeasibility,
        "psd_dimension": prob.sdp.psd_dimension,
        "round_trip_error": prob.round_trip_error(res),
        "alpha_raw": prob.alpha(res),
    }
    cert = StorageCertificate(S, alpha_bar, z_bar.x_bar, z_bar.u_bar, scale, alpha_on, "quadratic",
                              degree, info)
    return cert, prob
