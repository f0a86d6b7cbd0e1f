"""Dense primal-dual interior-point method for block semidefinite programs.

Standard form::

    min  sum_b <C_b, X_b> + c_free . x_free
    s.t. sum_b <A_{i,b}, X_b> + (A_free x_free)_i = b_i,   i = 1..m
         X_b PSD (positive block size) or X_b >= 0 elementwise (negative
         block size, a diagonal LP block as in SDPA), x_free unrestricted.

The dual is ``max b.y  s.t.  Z = C - A^T y`` PSD, ``A_free^T y = c_free``.
Search directions use the HKM scaling with a Mehrotra predictor-corrector;
free variables enter through a saddle-point system with the Schur matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

CONVERGED = "converged"
PRIMAL_INFEASIBLE = "primal-infeasible"
DUAL_INFEASIBLE = "dual-infeasible"
MAX_ITER = "max-iter"


class SdpTooLarge(ValueError):
    """The total PSD dimension exceeds the configured dense cap."""


@dataclass
class SdpProblem:
    """Block SDP in standard form.

    ``A[k] = (rows, data)`` lists the constraints touching block ``k``:
    ``data`` has shape ``(len(rows), n, n)`` for a PSD block and
    ``(len(rows), n)`` for an LP block.  ``C[k]`` is ``(n, n)`` or ``(n,)``.
    """

    block_sizes: list[int]
    b: np.ndarray
    C: list[np.ndarray]
    A: list[tuple[np.ndarray, np.ndarray]]
    A_free: np.ndarray | None = None
    c_free: np.ndarray | None = None

    def __post_init__(self):
        self.b = np.asarray(self.b, float).ravel()
        m = self.b.size
        if self.A_free is None:
            self.A_free = np.zeros((m, 0))
        A_free = np.asarray(self.A_free, float)
        self.A_free = A_free.reshape(m, -1) if m else A_free.reshape(0, A_free.shape[-1] if A_free.ndim == 2 else 0)
        if self.c_free is None:
            self.c_free = np.zeros(self.A_free.shape[1])
        self.c_free = np.asarray(self.c_free, float).ravel()
        if self.c_free.size != self.A_free.shape[1]:
            raise ValueError("c_free does not match A_free")
        if not (len(self.block_sizes) == len(self.C) == len(self.A)):
            raise ValueError("one C and one A entry per block")
        for s, C, (rows, data) in zip(self.block_sizes, self.C, self.A):
            n = abs(s)
            if s == 0:
                raise ValueError("block size 0")
            want = (n, n) if s > 0 else (n,)
            if np.shape(C) != want or np.shape(data)[1:] != want or len(rows) != len(data):
                raise ValueError(f"inconsistent data for block of size {s}")
            if len(rows) and (np.min(rows) < 0 or np.max(rows) >= m):
                raise ValueError("constraint row out of range")

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def n_free(self) -> int:
        return self.A_free.shape[1]

    @property
    def psd_dimension(self) -> int:
        return sum(s for s in self.block_sizes if s > 0)

    def same_as(self, other: "SdpProblem", tol: float = 0.0) -> bool:
        """Structural and numerical equality (dense comparison of every constraint matrix)."""
        if self.block_sizes != other.block_sizes or self.m != other.m or self.n_free != other.n_free:
            return False
        checks = [(self.b, other.b), (self.A_free, other.A_free), (self.c_free, other.c_free)]
        checks += list(zip(self.C, other.C))
        checks += [(self.dense_block(k), other.dense_block(k)) for k in range(len(self.block_sizes))]
        return all(np.max(np.abs(a - c), initial=0.0) <= tol for a, c in checks)

    def dense_block(self, k: int) -> np.ndarray:
        """All ``m`` constraint matrices of block ``k`` as one dense array."""
        s = self.block_sizes[k]
        rows, data = self.A[k]
        out = np.zeros((self.m,) + data.shape[1:])
        np.add.at(out, np.asarray(rows, int), data)
        return out

    # linear maps
    def apply(self, X: list[np.ndarray], x_free: np.ndarray) -> np.ndarray:
        out = self.A_free @ x_free if self.n_free else np.zeros(self.m)
        for s, (rows, data), Xb in zip(self.block_sizes, self.A, X):
            if len(rows):
                axes = ([1, 2], [0, 1]) if s > 0 else ([1], [0])
                np.add.at(out, rows, np.tensordot(data, Xb, axes=axes))
        return out

    def adjoint(self, y: np.ndarray) -> list[np.ndarray]:
        out = []
        for s, (rows, data) in zip(self.block_sizes, self.A):
            n = abs(s)
            if len(rows):
                out.append(np.tensordot(y[rows], data, axes=(0, 0)))
            else:
                out.append(np.zeros((n, n) if s > 0 else n))
        return out

    def objective(self, X, x_free) -> float:
        val = float(self.c_free @ x_free) if self.n_free else 0.0
        for s, C, Xb in zip(self.block_sizes, self.C, X):
            val += float(np.sum(C * Xb))
        return val


@dataclass(frozen=True)
class SdpOptions:
    gap_tol: float = 1e-7
    feas_tol: float = 1e-8
    max_iter: int = 100
    step_fraction: float = 0.95
    stall_iterations: int = 10
    psd_cap: int = 400


@dataclass
class SdpResult:
    status: str
    X: list[np.ndarray]
    x_free: np.ndarray
    y: np.ndarray
    Z: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_infeasibility: float
    dual_infeasibility: float
    iterations: int
    history: list[dict] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _sym(M):
    return 0.5 * (M + M.swapaxes(-1, -2))


def _sqrt_factor(V: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = V``; eigenvalue fallback when rounding broke definiteness."""
    try:
        return np.linalg.cholesky(V)
    except np.linalg.LinAlgError:
        w, Q = np.linalg.eigh(_sym(V))
        return Q * np.sqrt(np.maximum(w, 1e-300 + 1e-16 * max(w.max(), 0.0)))


def _max_step(V: np.ndarray, dV: np.ndarray, psd: bool) -> float:
    """Largest ``a`` with ``V + a dV`` still PSD / nonnegative (``inf`` if unbounded)."""
    if psd:
        Li = np.linalg.inv(_sqrt_factor(V))
        lam = float(np.min(np.linalg.eigvalsh(_sym(Li @ dV @ Li.T))))
    else:
        neg = dV < 0
        if not neg.any():
            return np.inf
        return float(np.min(-V[neg] / dV[neg]))
    return -1.0 / lam if lam < 0 else np.inf


class _Newton:
    """Factorised saddle-point system ``[[M, F], [F^T, 0]]`` (LU with pivoting)."""

    def __init__(self, M: np.ndarray, F: np.ndarray):
        m, nf = F.shape
        if nf:
            K = np.zeros((m + nf, m + nf))
            K[:m, :m] = M
            K[:m, m:] = F
            K[m:, :m] = F.T
        else:
            K = M
        self.m = m
        self.lu = sla.lu_factor(K, check_finite=False)
        if not np.all(np.isfinite(self.lu[0])) or np.min(np.abs(np.diag(self.lu[0]))) == 0.0:
            raise np.linalg.LinAlgError("singular Newton system")

    def solve(self, r: np.ndarray, rf: np.ndarray):
        sol = sla.lu_solve(self.lu, np.concatenate([r, rf]), check_finite=False)
        return sol[: self.m], sol[self.m:]


def _equilibrate(p: SdpProblem) -> tuple[SdpProblem, np.ndarray, np.ndarray]:
    """Scale rows to unit max-norm and free columns to unit 2-norm."""
    row_max = np.max(np.abs(p.A_free), axis=1) if p.n_free else np.zeros(p.m)
    for s, (rows, data) in zip(p.block_sizes, p.A):
        if len(rows):
            np.maximum.at(row_max, rows, np.max(np.abs(data.reshape(len(rows), -1)), axis=1))
    d = 1.0 / np.where(row_max > 0, row_max, 1.0)
    Af = p.A_free * d[:, None]
    col = np.linalg.norm(Af, axis=0) if p.n_free else np.zeros(0)
    e = 1.0 / np.where(col > 0, col, 1.0)
    A = [(rows, data * d[rows].reshape((-1,) + (1,) * (data.ndim - 1))) for rows, data in p.A]
    scaled = SdpProblem(list(p.block_sizes), p.b * d, list(p.C), A, Af * e, p.c_free * e)
    return scaled, d, e


def solve_sdp(p: SdpProblem, opts: SdpOptions | None = None) -> SdpResult:
    """Infeasible-start predictor-corrector IPM; see module docstring.

    Rows and free columns are equilibrated internally; the returned
    iterates, objectives and residuals refer to the original problem.
    Infeasibility is reported through ``status`` (never raised).  Without
    convergence the iterate with the smallest combined residual is returned
    under ``max-iter``.
    """
    opts = opts or SdpOptions()
    if p.psd_dimension > opts.psd_cap:
        raise SdpTooLarge(f"total PSD dimension {p.psd_dimension} exceeds cap {opts.psd_cap}")
    if p.m == 0:
        raise ValueError("SDP without constraints")
    ps, d, e = _equilibrate(p)
    res = _ipm(ps, opts)
    res.y = res.y * d
    res.x_free = res.x_free * e
    res.primal_objective = p.objective(res.X, res.x_free)
    res.dual_objective = float(p.b @ res.y)
    res.primal_infeasibility, res.dual_infeasibility = residuals(p, res)
    return res


def residuals(p: SdpProblem, res: SdpResult) -> tuple[float, float]:
    """Relative primal and dual infeasibility of an iterate."""
    rp = p.b - p.apply(res.X, res.x_free)
    Rd = [C - Zb - Ab for C, Zb, Ab in zip(p.C, res.Z, p.adjoint(res.y))]
    rf = p.c_free - p.A_free.T @ res.y if p.n_free else np.zeros(0)
    normb = 1.0 + np.linalg.norm(p.b)
    normC = 1.0 + np.sqrt(sum(np.sum(C * C) for C in p.C) + p.c_free @ p.c_free)
    return (float(np.linalg.norm(rp) / normb),
            float(np.sqrt(sum(np.sum(R * R) for R in Rd) + rf @ rf) / normC))


def _ipm(p: SdpProblem, opts: SdpOptions) -> SdpResult:
    sizes = p.block_sizes
    n_tot = sum(abs(s) for s in sizes)
    normb = 1.0 + np.linalg.norm(p.b)
    normC = 1.0 + np.sqrt(sum(np.sum(C * C) for C in p.C) + p.c_free @ p.c_free)

    X, Z = [], []
    for s, C, (rows, data) in zip(sizes, p.C, p.A):
        n = abs(s)
        a_norm = np.sqrt(np.sum(data ** 2, axis=tuple(range(1, data.ndim)))) if len(rows) else np.zeros(0)
        xi = max(10.0, np.sqrt(n), n * float(np.max((1 + np.abs(p.b[rows])) / (1 + a_norm), initial=0.0)))
        eta = max(10.0, np.sqrt(n), float(np.max(a_norm, initial=0.0)), float(np.linalg.norm(C)))
        if s > 0:
            X.append(xi * np.eye(n))
            Z.append(eta * np.eye(n))
        else:
            X.append(np.full(n, xi))
            Z.append(np.full(n, eta))
    xf = np.zeros(p.n_free)
    y = np.zeros(p.m)

    best = None
    last_gain = 0
    history = []
    status = MAX_ITER
    it = 0
    for it in range(1, opts.max_iter + 1):
        ATy = p.adjoint(y)
        rp = p.b - p.apply(X, xf)
        Rd = [C - Zb - Ab for C, Zb, Ab in zip(p.C, Z, ATy)]
        rf = p.c_free - p.A_free.T @ y if p.n_free else np.zeros(0)
        pobj, dobj = p.objective(X, xf), float(p.b @ y)
        pinf = np.linalg.norm(rp) / normb
        dinf = np.sqrt(sum(np.sum(R * R) for R in Rd) + rf @ rf) / normC
        gap = abs(pobj - dobj)
        rel_gap = gap / (1.0 + abs(pobj))
        history.append({"iter": it, "pobj": pobj, "dobj": dobj, "pinf": pinf, "dinf": dinf})
        merit = max(pinf, dinf, rel_gap)
        if best is None or merit < 0.5 * best[0]:
            last_gain = it
        if best is None or merit < best[0]:
            best = (merit, [a.copy() for a in X], xf.copy(), y.copy(), [a.copy() for a in Z],
                    pobj, dobj, pinf, dinf)
        if it - last_gain > opts.stall_iterations:
            log.info("sdp: no progress for %d iterations", opts.stall_iterations)
            break
        log.debug("sdp %3d pobj=%.9g dobj=%.9g pinf=%.2e dinf=%.2e", it, pobj, dobj, pinf, dinf)
        if pinf <= opts.feas_tol and dinf <= opts.feas_tol and gap <= opts.gap_tol * (1 + abs(pobj)):
            status = CONVERGED
            best = (0.0, X, xf, y, Z, pobj, dobj, pinf, dinf)
            break
        # infeasibility certificates (normalised rays)
        if dobj > 0 and (normC + np.sqrt(sum(np.sum(R * R) for R in Rd))) / dobj < 1e-9:
            status = PRIMAL_INFEASIBLE
            best = (0.0, X, xf, y, Z, pobj, dobj, pinf, dinf)
            break
        if pobj < 0 and (normb + np.linalg.norm(rp)) / -pobj < 1e-9:
            status = DUAL_INFEASIBLE
            best = (0.0, X, xf, y, Z, pobj, dobj, pinf, dinf)
            break

        mu = sum(float(np.sum(Xb * Zb)) for Xb, Zb in zip(X, Z)) / n_tot
        Zinv = [_sym(np.linalg.inv(Zb)) if s > 0 else 1.0 / Zb for s, Zb in zip(sizes, Z)]
        M = np.zeros((p.m, p.m))
        for s, (rows, data), Xb, Zi in zip(sizes, p.A, X, Zinv):
            if not len(rows):
                continue
            if s > 0:
                G = Xb @ data @ Zi
                Mb = np.tensordot(data, G, axes=([1, 2], [1, 2]))
            else:
                Mb = (data * (Xb * Zi)) @ data.T
            M[np.ix_(rows, rows)] += Mb
        M = 0.5 * (M + M.T)
        try:
            newton = _Newton(M, p.A_free)
        except (np.linalg.LinAlgError, ValueError):
            log.warning("sdp: Schur matrix factorisation failed at iteration %d", it)
            break
        XRdZ = [_sym(Xb @ R @ Zi) if s > 0 else Xb * R * Zi for s, Xb, R, Zi in zip(sizes, X, Rd, Zinv)]

        def direction(Rc):
            tmp = [a - c for a, c in zip(Rc, XRdZ)]
            dy, dxf = newton.solve(rp - p.apply(tmp, np.zeros(p.n_free)), rf)
            ATdy = p.adjoint(dy)
            dZ = [R - a for R, a in zip(Rd, ATdy)]
            dX = [rc - (_sym(Xb @ dz @ Zi) if s > 0 else Xb * dz * Zi)
                  for s, rc, Xb, dz, Zi in zip(sizes, Rc, X, dZ, Zinv)]
            return dX, dxf, dy, dZ

        def steps(dX, dZ):
            ap = min([_max_step(Xb, d, s > 0) for s, Xb, d in zip(sizes, X, dX)] + [np.inf])
            ad = min([_max_step(Zb, d, s > 0) for s, Zb, d in zip(sizes, Z, dZ)] + [np.inf])
            return min(1.0, opts.step_fraction * ap), min(1.0, opts.step_fraction * ad)

        try:
            dXa, _, _, dZa = direction([-Xb for Xb in X])
            ap, ad = steps(dXa, dZa)
            mu_aff = sum(float(np.sum((Xb + ap * dx) * (Zb + ad * dz)))
                         for Xb, dx, Zb, dz in zip(X, dXa, Z, dZa)) / n_tot
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3))
            Rc = []
            for s, Xb, Zi, dx, dz in zip(sizes, X, Zinv, dXa, dZa):
                if s > 0:
                    Rc.append(sigma * mu * Zi - Xb - _sym(dx @ dz @ Zi))
                else:
                    Rc.append(sigma * mu * Zi - Xb - dx * dz * Zi)
            dX, dxf, dy, dZ = direction(Rc)
            ap, ad = steps(dX, dZ)
        except np.linalg.LinAlgError:
            log.warning("sdp: iterate lost definiteness at iteration %d", it)
            break
        X = [Xb + ap * d for Xb, d in zip(X, dX)]
        xf = xf + ap * dxf
        y = y + ad * dy
        Z = [Zb + ad * d for Zb, d in zip(Z, dZ)]
        if max(ap, ad) < 1e-12:
            log.warning("sdp: step length collapsed at iteration %d", it)
            break

    _, X, xf, y, Z, pobj, dobj, pinf, dinf = best
    if status == MAX_ITER:
        log.info("sdp stopped without convergence after %d iterations", it)
    return SdpResult(status, X, xf, y, Z, pobj, dobj, pinf, dinf, it, history)
