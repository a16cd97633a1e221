import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rgsde.errors import InvalidArgumentError, ObstacleViolationError
from rgsde.reflection import (
    ReflectedSolution,
    flatness_defect,
    flatness_tolerance,
    minimality_check,
    skorokhod_map,
    skorokhod_recursion,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_no_reflection_needed():
    sol = skorokhod_map(np.ones(5), np.zeros(5))
    assert np.all(sol.K == 0) and np.all(sol.X == 1)


def test_running_deficit():
    sol = skorokhod_map([0, -0.5, -1], 0.0)
    assert sol.K.tolist() == [0, 0.5, 1]
    assert sol.X.tolist() == [0, 0, 0]


def test_push_then_release():
    Y = np.array([0, -1, 0.5, -2])
    sol = skorokhod_map(Y, np.zeros(4))
    assert sol.K.tolist() == [0, 1, 1, 2]
    assert sol.X.tolist() == [0, 0, 1.5, 0]
    assert flatness_defect(sol, np.zeros(4)) == 0


def test_flatness_examples():
    assert flatness_defect(ReflectedSolution(np.ones(3), np.zeros(3)), 0.0) == 0
    assert flatness_defect(ReflectedSolution(np.ones(2), np.array([0.0, 1.0])), np.zeros(2)) == 1


def test_errors():
    with pytest.raises(ObstacleViolationError):
        skorokhod_map([-1.0, 0.0], [0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        skorokhod_map(np.zeros(3), np.zeros(4))


def test_minimality_examples():
    Y = np.array([0, -1, 0.5, -2])
    S = np.zeros(4)
    sol = skorokhod_map(Y, S)
    assert minimality_check(sol, Y, S, sol.K)
    assert minimality_check(sol, Y, S, sol.K + np.r_[0, np.ones(3)])
    with pytest.raises(InvalidArgumentError):
        minimality_check(sol, Y, S, np.array([0, 1, 0.5, 3]))  # decreasing
    with pytest.raises(InvalidArgumentError):
        minimality_check(sol, Y, S, np.zeros(4))  # leaves Y below S


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 60).flatmap(lambda n: st.tuples(arrays(float, n, elements=finite), arrays(float, n, elements=finite))))
def test_map_matches_recursion_and_invariants(pair):
    Y, S = pair
    Y = Y.copy()
    Y[0] = max(Y[0], S[0])
    sol = skorokhod_map(Y, S)
    ref = skorokhod_recursion(Y, S)
    assert np.max(np.abs(sol.K - ref.K)) <= 1e-12
    sol.check(S)


def test_batch_rows_independent(rng):
    Y = rng.normal(size=(5, 50)).cumsum(axis=1)
    Y[:, 0] = 0
    S = -np.abs(rng.normal(size=(5, 50)))
    S[:, 0] = -1
    sol = skorokhod_map(Y, S)
    for j in range(5):
        one = skorokhod_map(Y[j], S[j])
        assert np.array_equal(one.K, sol.K[j])
    assert flatness_defect(sol, S).shape == (5,)
    assert np.all(flatness_defect(sol, S) <= flatness_tolerance(sol.X, sol.K, S))
