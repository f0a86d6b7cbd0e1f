import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpdiss.polynomial import Polynomial, basis_size, monomial_basis

VARS = ("a", "b", "c")

coeff = st.floats(-5, 5, allow_nan=False).filter(lambda v: abs(v) > 1e-3)
exponent = st.tuples(*[st.integers(0, 3)] * 3)
polys = st.dictionaries(exponent, coeff, max_size=6).map(lambda t: Polynomial(VARS, t))
points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=3, max_size=3)


def direct_sum(p, pt):
    return sum(c * np.prod(np.array(pt) ** np.array(e)) for e, c in p.items())


@settings(max_examples=60, deadline=None)
@given(polys, polys, points)
def test_product_evaluates_pointwise(p, q, pt):
    lhs = (p * q)(np.array(pt))
    rhs = p(np.array(pt)) * q(np.array(pt))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(polys, points)
def test_evaluation_matches_direct_summation(p, pt):
    assert p(np.array(pt)) == pytest.approx(direct_sum(p, pt), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(polys, points, st.integers(0, 2))
def test_derivative_matches_central_difference(p, pt, i):
    pt = np.array(pt)
    h = 1e-5
    e = np.zeros(3)
    e[i] = h
    fd = (p(pt + e) - p(pt - e)) / (2 * h)
    assert p.diff(i)(pt) == pytest.approx(fd, abs=1e-6 * max(1.0, abs(fd)))


@settings(max_examples=40, deadline=None)
@given(polys, polys)
def test_no_zero_coefficients_stored(p, q):
    for r in (p + q, p - p, p * q, p - q):
        assert all(c != 0 for _, c in r.items())


def test_subtraction_cancels_exactly():
    p = Polynomial(VARS, {(1, 0, 0): 2.0, (0, 2, 1): -1.0})
    assert (p - p).is_zero()


def test_basis_sizes():
    assert basis_size(3, 2) == len(monomial_basis(3, 2)) == 10
    assert monomial_basis(2, 0) == [(0, 0)]


def test_affine_substitution_and_serialisation():
    p = Polynomial(("x",), {(2,): 1.0, (0,): -1.0})
    q = p.affine_substitute([1.0], [2.0])  # p(1 + 2 y)
    assert q(np.array([0.5])) == pytest.approx(p(np.array([2.0])))
    assert Polynomial.from_dict(q.to_dict()) == q
