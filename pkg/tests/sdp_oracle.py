"""Independent SDP oracle: the same standard-form problem solved through cvxpy."""

import cvxpy as cp
import numpy as np


def solve_with_cvxpy(p, solver="CLARABEL"):
    Xs = []
    expr = 0
    for k, (s, C) in enumerate(zip(p.block_sizes, p.C)):
        n = abs(s)
        X = cp.Variable((n, n), PSD=True) if s > 0 else cp.Variable(n, nonneg=True)
        Xs.append(X)
        D = p.dense_block(k)
        if s > 0:
            lin = D.reshape(p.m, n * n) @ cp.vec(X, order="C")
        else:
            lin = D @ X
        expr = expr + lin
    xf = cp.Variable(p.n_free) if p.n_free else None
    obj = sum(cp.sum(cp.multiply(C, X)) for C, X in zip(p.C, Xs))
    if xf is not None:
        expr = expr + p.A_free @ xf
        obj = obj + p.c_free @ xf
    prob = cp.Problem(cp.Minimize(obj), [expr == p.b])
    prob.solve(solver=solver)
    return prob.status, prob.value, [X.value for X in Xs], (xf.value if xf is not None else np.zeros(0))
