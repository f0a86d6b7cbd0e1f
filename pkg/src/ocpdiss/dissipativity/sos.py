"""Sum-of-squares identities compiled to block SDPs.

An identity asks for

    target(v) - alpha * strict(v) - sum_k s_k * terms[k](v)
        = sigma_0(v) + sum_i sigma_i(v) * g_i(v)

with Gram-matrix SOS multipliers ``sigma = m(v)^T Q m(v)``, free scalars
``s_k`` shared across identities and a scalar ``alpha``.  Matching the
coefficient of every monomial gives one linear equality per monomial.
``alpha`` is either fixed or carried as an LP variable with
``alpha + slack = 1`` and maximised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from ..polynomial import Exponent, Polynomial, monomial_basis
from .sdp import SdpOptions, SdpProblem, SdpResult, solve_sdp


@dataclass
class SosIdentity:
    target: Polynomial
    strict: Polynomial
    terms: list[Polynomial]
    multipliers: list[Polynomial]
    sigma0_degree: int
    multiplier_degrees: list[int]
    label: str = ""

    @property
    def variables(self) -> tuple[str, ...]:
        return self.target.variables

    def bases(self) -> list[list[Exponent]]:
        n = len(self.variables)
        out = [monomial_basis(n, self.sigma0_degree // 2)]
        out += [monomial_basis(n, d // 2) for d in self.multiplier_degrees]
        return out

    def gram_dimension(self) -> int:
        return sum(len(b) for b in self.bases())


def even_ceil(d: int) -> int:
    return max(0, 2 * ceil(d / 2))


def default_degrees(poly_degree: int, multipliers: list[Polynomial],
                    multiplier_degree: int | None = None) -> tuple[int, list[int]]:
    """``sigma_0`` degree and per-multiplier SOS degrees.

    By default ``deg(sigma_i * g_i)`` matches the identity's degree, rounded
    up to even.
    """
    d0 = even_ceil(poly_degree)
    degs = []
    for g in multipliers:
        d = multiplier_degree if multiplier_degree is not None else even_ceil(d0 - g.degree())
        degs.append(even_ceil(max(d, 0)))
    return d0, degs


def _gram_entries(basis: list[Exponent], g: Polynomial) -> dict[Exponent, list[tuple[int, int, float]]]:
    """Coefficient of each monomial in ``m^T Q m * g`` as upper-triangle entries of ``Q``.

    Off-diagonal entries carry the full symmetric contribution ``2 Q_pq``
    split as ``Q_pq`` and ``Q_qp``; the returned value is the weight of
    ``Q_pq`` in a symmetric constraint matrix.
    """
    out: dict[Exponent, list[tuple[int, int, float]]] = {}
    arr = np.array(basis, dtype=np.int64)
    for p in range(len(basis)):
        sums = arr[p] + arr[p:]
        for off, e in enumerate(sums):
            q = p + off
            for ge, gc in g.items():
                key = tuple(int(a) for a in e + np.array(ge))
                out.setdefault(key, []).append((p, q, gc))
    return out


@dataclass
class SosProblem:
    identities: list[SosIdentity]
    n_free: int
    alpha_fixed: float | None
    sdp: SdpProblem
    row_index: list[dict[Exponent, int]]
    block_owner: list[tuple[int, int]]
    bases: list[list[Exponent]]
    lp_block: int | None = None
    free_labels: list[str] = field(default_factory=list)

    # -- solution extraction -------------------------------------------------
    def alpha(self, res: SdpResult) -> float:
        if self.alpha_fixed is not None:
            return self.alpha_fixed
        return float(res.X[self.lp_block][0])

    def free_values(self, res: SdpResult) -> np.ndarray:
        return np.asarray(res.x_free, float)

    def gram_matrices(self, res: SdpResult) -> list[np.ndarray]:
        return [res.X[k] for k in range(len(self.block_owner))]

    def expand_multipliers(self, res: SdpResult, identity: int) -> Polynomial:
        """``sigma_0 + sum_i sigma_i g_i`` of one identity, multiplied out."""
        ident = self.identities[identity]
        vars_ = ident.variables
        total = Polynomial.zero(vars_)
        gs = [Polynomial.constant(vars_, 1.0)] + list(ident.multipliers)
        for k, (owner, slot) in enumerate(self.block_owner):
            if owner != identity:
                continue
            Q = res.X[k]
            basis = self.bases[k]
            terms: dict[Exponent, float] = {}
            for p in range(len(basis)):
                for q in range(len(basis)):
                    e = tuple(a + b for a, b in zip(basis[p], basis[q]))
                    terms[e] = terms.get(e, 0.0) + Q[p, q]
            total = total + Polynomial(vars_, terms) * gs[slot]
        return total

    def identity_polynomial(self, res: SdpResult, identity: int) -> Polynomial:
        """``target - alpha * strict - sum_k s_k terms[k]`` at the solution."""
        ident = self.identities[identity]
        s = self.free_values(res)
        out = ident.target - ident.strict * self.alpha(res)
        for sk, t in zip(s, ident.terms):
            out = out - t * float(sk)
        return out

    def round_trip_error(self, res: SdpResult) -> float:
        """Largest coefficient mismatch between both sides over all identities."""
        worst = 0.0
        for i in range(len(self.identities)):
            diff = self.expand_multipliers(res, i) - self.identity_polynomial(res, i)
            worst = max(worst, max((abs(c) for _, c in diff.items()), default=0.0))
        return worst

    def solve(self, opts: SdpOptions | None = None) -> SdpResult:
        return solve_sdp(self.sdp, opts)


def compile_sos(identities: list[SosIdentity], n_free: int, alpha_fixed: float | None = None,
                free_labels: list[str] | None = None) -> SosProblem:
    """Assemble the block SDP; ``alpha_fixed=None`` maximises ``alpha`` in ``[0, 1]``."""
    row_index: list[dict[Exponent, int]] = []
    block_sizes: list[int] = []
    block_owner: list[tuple[int, int]] = []
    bases_all: list[list[Exponent]] = []
    entries: list[dict[Exponent, list[tuple[int, int, float]]]] = []
    rhs: list[float] = []
    free_rows, free_cols, free_vals = [], [], []
    alpha_rows, alpha_vals = [], []
    n_rows = 0
    for ii, ident in enumerate(identities):
        vars_ = ident.variables
        if len(ident.terms) != n_free:
            raise ValueError("every identity needs one term per free variable")
        gs = [Polynomial.constant(vars_, 1.0)] + list(ident.multipliers)
        blocks = []
        for slot, (basis, g) in enumerate(zip(ident.bases(), gs)):
            blocks.append(_gram_entries(basis, g))
            block_sizes.append(len(basis))
            block_owner.append((ii, slot))
            bases_all.append(basis)
        support = set()
        for blk in blocks:
            support.update(blk)
        target = ident.target
        if alpha_fixed is not None:
            target = target - ident.strict * alpha_fixed
        support.update(e for e, _ in target.items())
        support.update(e for e, _ in ident.strict.items())
        for t in ident.terms:
            support.update(e for e, _ in t.items())
        order = sorted(support, key=lambda e: (sum(e), tuple(-k for k in e)))
        rows = {e: n_rows + i for i, e in enumerate(order)}
        n_rows += len(order)
        row_index.append(rows)
        entries.extend(blocks)
        rhs.extend(target.coefficient(e) for e in order)
        for k, t in enumerate(ident.terms):
            for e, c in t.items():
                free_rows.append(rows[e])
                free_cols.append(k)
                free_vals.append(c)
        if alpha_fixed is None:
            for e, c in ident.strict.items():
                alpha_rows.append(rows[e])
                alpha_vals.append(c)

    lp_block = None
    m = n_rows + (1 if alpha_fixed is None else 0)
    b = np.zeros(m)
    b[:n_rows] = rhs
    C, A = [], []
    k = 0
    for ii, ident in enumerate(identities):
        rows = row_index[ii]
        for _ in ident.bases():
            blk = entries[k]
            n = block_sizes[k]
            touched = sorted(rows[e] for e in blk)
            local = {r: j for j, r in enumerate(touched)}
            data = np.zeros((len(touched), n, n))
            for e, lst in blk.items():
                j = local[rows[e]]
                for p, q, v in lst:
                    data[j, p, q] += v
                    if p != q:
                        data[j, q, p] += v
            C.append(np.zeros((n, n)))
            A.append((np.array(touched, dtype=np.int64), data))
            k += 1
    if alpha_fixed is None:
        lp_block = len(block_sizes)
        block_sizes = block_sizes + [-2]
        lp_rows = np.array(alpha_rows + [n_rows], dtype=np.int64)
        lp_data = np.zeros((len(lp_rows), 2))
        lp_data[:-1, 0] = alpha_vals
        lp_data[-1] = [1.0, 1.0]
        b[n_rows] = 1.0
        uniq, inv = np.unique(lp_rows, return_inverse=True)
        merged = np.zeros((len(uniq), 2))
        np.add.at(merged, inv, lp_data)
        C.append(np.array([-1.0, 0.0]))
        A.append((uniq, merged))
    A_free = np.zeros((m, n_free))
    np.add.at(A_free, (np.array(free_rows, dtype=np.int64), np.array(free_cols, dtype=np.int64)),
              np.array(free_vals, dtype=float))
    sdp = SdpProblem(block_sizes, b, C, A, A_free, np.zeros(n_free))
    return SosProblem(identities, n_free, alpha_fixed, sdp, row_index, block_owner, bases_all,
                      lp_block, list(free_labels or []))
