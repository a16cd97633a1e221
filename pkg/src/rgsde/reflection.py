"""Discrete Skorokhod problem on a grid.

Given a free path ``Y`` and an obstacle ``S`` with ``Y[0] >= S[0]``, the minimal
nondecreasing pusher is the running maximum of the deficit,

    K[i] = max_{j <= i} (S[j] - Y[j])^+ ,    X = Y + K >= S,

with X floored at S so rounding never leaves it a ulp below the obstacle.

All functions accept 1-d paths or 2-d batches (one path per row).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ObstacleViolationError

__all__ = [
    "ReflectedSolution",
    "skorokhod_map",
    "skorokhod_recursion",
    "flatness_defect",
    "flatness_tolerance",
    "minimality_check",
    "TOL_REFLECT",
]

TOL_REFLECT = 0.0


@dataclass(eq=False)
class ReflectedSolution:
    X: np.ndarray
    K: np.ndarray

    def check(self, S, tol_flat=None) -> None:
        """Raise ``AssertionError`` when a reflection invariant fails."""
        X, K = np.asarray(self.X), np.asarray(self.K)
        S = np.broadcast_to(S, X.shape)
        assert np.all(K[..., 0] == 0), "K[0] != 0"
        assert np.all(np.diff(K, axis=-1) >= 0), "K decreases"
        assert np.all(X >= S - TOL_REFLECT), "X below obstacle"
        defect = flatness_defect(self, S)
        tol = flatness_tolerance(X, K, S) if tol_flat is None else tol_flat
        assert np.all(defect <= tol), f"flatness defect {np.max(defect)} > {np.max(tol)}"


def _pair(Y, S):
    Y = np.asarray(Y, dtype=float)
    S = np.asarray(S, dtype=float)
    if S.ndim == 0:
        S = np.full(Y.shape, float(S))
    elif S.shape != Y.shape:
        try:
            S = np.broadcast_to(S, Y.shape)
        except ValueError:
            raise InvalidArgumentError(f"path shape {Y.shape} and obstacle shape {S.shape} differ") from None
    return Y, S


def skorokhod_map(Y, S) -> ReflectedSolution:
    Y, S = _pair(Y, S)
    if np.any(Y[..., 0] < S[..., 0]):
        raise ObstacleViolationError("Y[0] < S[0]: initial value starts below the obstacle")
    K = np.maximum.accumulate(np.maximum(S - Y, 0.0), axis=-1)
    # Y + (S - Y) can round one ulp below S; the constraint wins
    return ReflectedSolution(np.maximum(Y + K, S), K)


def skorokhod_recursion(Y, S) -> ReflectedSolution:
    """Node-by-node form ``K[i+1] = max(K[i], S[i+1] - Y[i+1])``; an oracle for :func:`skorokhod_map`."""
    Y, S = _pair(Y, S)
    if np.any(Y[..., 0] < S[..., 0]):
        raise ObstacleViolationError("Y[0] < S[0]")
    K = np.zeros_like(Y)
    for i in range(1, Y.shape[-1]):
        K[..., i] = np.maximum(K[..., i - 1], S[..., i] - Y[..., i])
    return ReflectedSolution(np.maximum(Y + K, S), K)


def flatness_defect(sol: ReflectedSolution, S):
    """Discrete ``int (X - S) dK``: each increment of K is weighted by the gap at the node it lands on."""
    X, S = _pair(sol.X, S)
    K = np.asarray(sol.K, dtype=float)
    if K.shape != X.shape:
        raise InvalidArgumentError("X and K shapes differ")
    dK = np.diff(K, axis=-1)
    return np.sum((X[..., 1:] - S[..., 1:]) * dK, axis=-1)


def flatness_tolerance(X, K, S):
    X, S = _pair(X, S)
    gap = np.max(np.abs(X - S), axis=-1)
    return 1e-10 * (1.0 + gap) * np.asarray(K)[..., -1]


def minimality_check(sol: ReflectedSolution, Y, S, candidate_K) -> bool:
    """True iff the computed pusher is dominated by an admissible candidate pusher."""
    Y, S = _pair(Y, S)
    C = np.asarray(candidate_K, dtype=float)
    if C.shape != Y.shape:
        raise InvalidArgumentError("candidate length does not match the path")
    if np.any(C[..., 0] != 0):
        raise InvalidArgumentError("candidate pusher must start at 0")
    if np.any(np.diff(C, axis=-1) < 0):
        raise InvalidArgumentError("candidate pusher must be nondecreasing")
    if np.any(Y + C < S):
        raise InvalidArgumentError("candidate pusher does not keep Y above the obstacle")
    return bool(np.all(np.asarray(sol.K) <= C))
