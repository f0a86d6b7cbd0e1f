import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocpdiss.dissipativity import (SdpProblem, parse_sdpa, read_sdpa, sdpa_string, solve_sdp,
                                   synthesize_certificate, write_sdpa)
from ocpdiss.ocp import SteadyStatePair
from test_sdp import random_problem


def one_by_one():
    # min x  s.t.  x >= 1   <->   C = [[-1]], A_1 = [[1]], b = [1]
    return SdpProblem([1], [1.0], [np.array([[-1.0]])], [(np.array([0]), np.array([[[1.0]]]))])


def test_scalar_problem_text_and_round_trip():
    p = one_by_one()
    text = sdpa_string(p)
    lines = text.splitlines()
    assert lines[:4] == ["1", "1", "1", "1"]
    assert lines[4:] == ["0 1 1 1 1", "1 1 1 1 1"]
    assert parse_sdpa(text).same_as(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip_is_bit_exact(seed):
    p = random_problem(seed, n=4, m=5, n_lp=2, n_free=seed % 3)
    assert parse_sdpa(sdpa_string(p)).same_as(p, tol=0.0)


def test_comments_and_repeated_entries():
    text = '"a comment\n* another\n1\n1\n2\n1\n1 1 1 1 0.5\n1 1 1 1 0.5\n1 1 2 2 1\n'
    p = parse_sdpa(text)
    np.testing.assert_array_equal(p.dense_block(0)[0], np.diag([1.0, 1.0]))


def test_empty_problem_rejected():
    p = SdpProblem([2], np.zeros(0), [np.eye(2)], [(np.zeros(0, int), np.zeros((0, 2, 2)))])
    with pytest.raises(ValueError):
        sdpa_string(p)
    with pytest.raises(ValueError):
        parse_sdpa("0\n1\n2\n\n")


def test_toy_synthesis_export_resolve(clean_toy, tmp_path):
    origin = SteadyStatePair(np.zeros(1), np.zeros(1), 0.0, 0.0)
    cert, prob = synthesize_certificate(*clean_toy, origin, 2)
    path = tmp_path / "toy.dat-s"
    write_sdpa(prob.sdp, path)
    back = read_sdpa(path)
    assert back.same_as(prob.sdp)
    res = solve_sdp(back)
    assert prob.alpha(res) == pytest.approx(cert.alpha_bar, abs=1e-6)
