"""Pathwise solvers for the reflected equation with nonlinear resistance

    X_t = x + int f(X, K) dt + int h(X, K) d<B> + int g(X, K) dB + K_t,
    X >= S,  int (X - S) dK = 0.

``picard_solve`` iterates free-path / Skorokhod-map pairs from ``X = x, K = 0``.
Inside a step ``[t_j, t_j+1)`` the state enters every coefficient at the left
node; the push enters the drift coefficients ``f`` and ``h`` at the right node
``K[j+1]``, which is what makes the scheme implicit in ``K`` and the iteration
necessary. ``g`` sees ``K[j]`` so the stochastic sum stays non-anticipating.

``stepwise_solve`` is the fully explicit forward pass used as an oracle; the
two schemes differ by O(dt) exactly when ``f`` or ``h`` depends on ``K``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, ObstacleSpec
from .errors import (
    InvalidArgumentError,
    NonConvergenceError,
    NumericFailureError,
    ObstacleViolationError,
)
from .reflection import ReflectedSolution, flatness_defect
from .scenario import (
    ScenarioBatch,
    ScenarioPath,
    TimeGrid,
    VolatilityControl,
    VolatilitySpec,
    _normals,
    scenario_seed,
)

__all__ = [
    "SolverConfig",
    "SolveResult",
    "BatchSolveResult",
    "ValidationReport",
    "validate_assumptions",
    "picard_solve",
    "picard_solve_batch",
    "stepwise_solve",
    "stepwise_solve_batch",
    "explicit_scheme",
    "richardson_refine",
    "nested_batches",
    "write_solution_csv",
    "run_summary",
]

_FMT = "{:.17g}"
_STALL_SWEEPS = 3


@dataclass(frozen=True)
class SolverConfig:
    p_exponent: float = 3.0
    picard_tol: float = 1e-10
    max_picard: int = 200
    oracle_check: bool = False

    def __post_init__(self):
        if not self.p_exponent > 2:
            raise InvalidArgumentError(f"p_exponent must exceed 2, got {self.p_exponent}")
        if not self.picard_tol > 0:
            raise InvalidArgumentError("picard_tol must be positive")
        if int(self.max_picard) != self.max_picard or self.max_picard < 1:
            raise InvalidArgumentError("max_picard must be a positive integer")


@dataclass(eq=False)
class SolveResult:
    solution: ReflectedSolution
    picard_iters: int
    residual: float
    oracle_gap: float | None = None
    S: np.ndarray | None = field(default=None, repr=False)
    residual_history: list = field(default_factory=list, repr=False)


@dataclass(eq=False)
class BatchSolveResult:
    X: np.ndarray
    K: np.ndarray
    S: np.ndarray
    picard_iters: np.ndarray
    residual: np.ndarray
    oracle_gap: np.ndarray | None = None

    def __len__(self):
        return self.X.shape[0]

    def row(self, j: int) -> SolveResult:
        gap = None if self.oracle_gap is None else float(self.oracle_gap[j])
        return SolveResult(
            ReflectedSolution(self.X[j], self.K[j]), int(self.picard_iters[j]),
            float(self.residual[j]), gap, self.S[j],
        )


def _as_batch(scenario) -> ScenarioBatch:
    if isinstance(scenario, ScenarioBatch):
        return scenario
    if isinstance(scenario, ScenarioPath):
        return ScenarioBatch(
            scenario.dB[None, :], scenario.dQV[None, :], scenario.B[None, :], scenario.QV[None, :],
            scenario.control_label, np.array([scenario.seed], dtype=np.uint64), np.array([0]),
            scenario.grid, scenario.theta_sq,
        )
    raise InvalidArgumentError(f"expected a ScenarioPath or ScenarioBatch, got {type(scenario).__name__}")


def _check_obstacle(S, x0, batch):
    bad = np.nonzero(S[:, 0] > x0)[0]
    if bad.size:
        j = int(batch.indices[bad[0]])
        raise ObstacleViolationError(f"S_0 = {S[bad[0], 0]!r} > x0 = {x0!r} (scenario {j})")


def _finite_or_raise(arr, batch, rows, what):
    ok = np.isfinite(arr).all(axis=-1)
    if not ok.all():
        r = rows[np.argmin(ok)]
        raise NumericFailureError(
            f"non-finite {what} in scenario {int(batch.indices[r])} (control {batch.control_label!r})"
        )


def _drive(coeffs: CoefficientSet, X, K, dt, dQV, dB):
    """Free-path increments of one Picard sweep."""
    steps = np.arange(X.shape[-1] - 1)
    Xl, Kl, Kr = X[..., :-1], K[..., :-1], K[..., 1:]
    with np.errstate(all="ignore"):
        return (
            coeffs.f(steps, Xl, Kr) * dt
            + coeffs.h(steps, Xl, Kr) * dQV
            + coeffs.g(steps, Xl, Kl) * dB
        )


def _free_path(x0, inc):
    lead = np.full(inc.shape[:-1] + (1,), float(x0))
    return np.cumsum(np.concatenate([lead, inc], axis=-1), axis=-1)


def picard_solve_batch(
    coeffs: CoefficientSet,
    obstacle: ObstacleSpec,
    scenarios,
    x0: float,
    cfg: SolverConfig = SolverConfig(),
    init=None,
) -> BatchSolveResult:
    """Picard iteration on every row of a batch.

    Rows converge independently: a row is frozen once its residual is exactly 0,
    or is below ``picard_tol`` and has not shrunk for three consecutive sweeps. The output for a
    row therefore does not depend on which other rows share the batch.
    """
    batch = _as_batch(scenarios)
    m, n = batch.dB.shape
    x0 = float(x0)
    S = obstacle.path(batch)
    _check_obstacle(S, x0, batch)
    dt = batch.grid.dt

    X = np.full((m, n + 1), x0)
    if init is not None:
        X = np.broadcast_to(np.asarray(init, dtype=float), (m, n + 1)).copy()
    K = np.zeros((m, n + 1))
    iters = np.zeros(m, dtype=int)
    residual = np.full(m, np.inf)
    stalls = np.zeros(m, dtype=int)
    history = [[] for _ in range(m)]
    active = np.arange(m)

    for it in range(1, cfg.max_picard + 1):
        if active.size == 0:
            break
        Xa, Ka = X[active], K[active]
        inc = _drive(coeffs, Xa, Ka, dt, batch.dQV[active], batch.dB[active])
        _finite_or_raise(inc, batch, active, "coefficient value")
        Y = _free_path(x0, inc)
        Sa = S[active]
        Kn = np.maximum.accumulate(np.maximum(Sa - Y, 0.0), axis=-1)
        Xn = np.maximum(Y + Kn, Sa)
        _finite_or_raise(Xn, batch, active, "state")
        res = np.max(np.abs(Xn - Xa), axis=-1) + np.max(np.abs(Kn - Ka), axis=-1)
        prev = residual[active]
        X[active], K[active] = Xn, Kn
        residual[active] = res
        iters[active] = it
        for r, v in zip(active, res):
            history[r].append(float(v))
        # past the tolerance, keep sweeping until the defect is exactly 0 or has
        # stopped shrinking for a few sweeps (rounding can make it plateau or cycle)
        stalls[active] = np.where(res >= prev, stalls[active] + 1, 0)
        done = (res == 0) | ((res <= cfg.picard_tol) & (stalls[active] >= _STALL_SWEEPS))
        active = active[~done]

    late = active[residual[active] > cfg.picard_tol] if active.size else active
    if late.size:
        r = int(late[0])
        raise NonConvergenceError(
            f"Picard iteration did not reach {cfg.picard_tol:g} in {cfg.max_picard} sweeps "
            f"(scenario {int(batch.indices[r])}, control {batch.control_label!r}, "
            f"residual {residual[r]:.3e})",
            history[r],
        )

    gap = None
    if cfg.oracle_check:
        ref = stepwise_solve_batch(coeffs, obstacle, batch, x0)
        gap = np.max(np.abs(ref.X - X), axis=-1) + np.max(np.abs(ref.K - K), axis=-1)
    out = BatchSolveResult(X, K, S, iters, residual, gap)
    out.residual_history = history
    return out


def picard_solve(
    coeffs: CoefficientSet,
    obstacle: ObstacleSpec,
    scenario: ScenarioPath,
    x0: float,
    cfg: SolverConfig = SolverConfig(),
    init=None,
) -> SolveResult:
    res = picard_solve_batch(coeffs, obstacle, scenario, x0, cfg, init)
    out = res.row(0)
    out.residual_history = res.residual_history[0]
    return out


def stepwise_solve_batch(coeffs, obstacle, scenarios, x0) -> BatchSolveResult:
    """Explicit reflected Euler pass: K enters each step at its left value."""
    batch = _as_batch(scenarios)
    m, n = batch.dB.shape
    x0 = float(x0)
    S = obstacle.path(batch)
    _check_obstacle(S, x0, batch)
    dt = batch.grid.dt
    X = np.empty((m, n + 1))
    K = np.empty((m, n + 1))
    X[:, 0] = x0
    K[:, 0] = 0.0
    rows = np.arange(m)
    with np.errstate(all="ignore"):
        for i in range(n):
            x, k = X[:, i], K[:, i]
            xt = x + coeffs.f(i, x, k) * dt + coeffs.h(i, x, k) * batch.dQV[:, i] + coeffs.g(i, x, k) * batch.dB[:, i]
            K[:, i + 1] = k + np.maximum(S[:, i + 1] - xt, 0.0)
            X[:, i + 1] = np.maximum(xt + (K[:, i + 1] - k), S[:, i + 1])
    _finite_or_raise(X, batch, rows, "state")
    return BatchSolveResult(X, K, S, np.ones(m, dtype=int), np.zeros(m))


def stepwise_solve(coeffs, obstacle, scenario, x0) -> ReflectedSolution:
    res = stepwise_solve_batch(coeffs, obstacle, scenario, x0)
    return ReflectedSolution(res.X[0], res.K[0])


def explicit_scheme(coeffs: CoefficientSet, scenario, x0: float) -> np.ndarray:
    """Plain (unreflected) Euler scheme with K = 0; rows of a batch or one path."""
    batch = _as_batch(scenario)
    m, n = batch.dB.shape
    dt = batch.grid.dt
    X = np.empty((m, n + 1))
    X[:, 0] = float(x0)
    zero = np.zeros(m)
    for i in range(n):
        x = X[:, i]
        X[:, i + 1] = x + (
            coeffs.f(i, x, zero) * dt + coeffs.h(i, x, zero) * batch.dQV[:, i] + coeffs.g(i, x, zero) * batch.dB[:, i]
        )
    return X[0] if isinstance(scenario, ScenarioPath) else X


@dataclass
class ValidationReport:
    ok: bool
    failures: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def first_violation(self):
        return self.failures[0] if self.failures else None

    def to_dict(self):
        return {"ok": self.ok, "failures": self.failures, "checks": self.checks}


_X_LATTICE = np.array([-50.0, -10.0, -3.0, -1.0, -0.3, -1e-3, 0.0, 1e-3, 0.3, 1.0, 3.0, 10.0, 50.0])
_K_LATTICE = np.array([0.0, 1e-3, 0.3, 1.0, 3.0, 10.0, 50.0])


def _eval3(coeffs, i, x, k):
    with np.errstate(all="ignore"):
        return [np.asarray(ev(i, x, k), dtype=float) * np.ones(np.broadcast(x, k).shape) for ev in (coeffs.f, coeffs.h, coeffs.g)]


def validate_assumptions(
    coeffs: CoefficientSet,
    x0: float,
    obstacle: ObstacleSpec,
    grid: TimeGrid,
    n_probe_times: int = 6,
    n_pairs: int = 4000,
    seed: int = 0,
) -> ValidationReport:
    """Probe the standing assumptions on finite lattices; failures are reported, not raised."""
    fails, checks = [], []

    def fail(check, detail, probe=None):
        fails.append({"check": check, "detail": detail, "probe": probe})

    p = coeffs.p
    checks.append("initial-value")
    if not math.isfinite(x0):
        fail("invalid-initial", f"x0 = {x0!r} is not finite")
    checks.append("exponent")
    if not p > 2:
        fail("invalid-exponent", f"p = {p} must exceed 2")
    checks.append("obstacle")
    s0 = obstacle.initial
    if s0 > x0:
        fail("obstacle-violation", f"S_0 = {s0:g} > x0 = {x0:g} at t = 0", {"t": 0.0, "S0": s0, "x0": x0})

    checks.append("growth")
    b1 = np.atleast_1d(np.asarray(coeffs.beta1, dtype=float))
    if coeffs.beta2 < 0 or not math.isfinite(coeffs.beta2) or np.any(b1 < 0) or not np.all(np.isfinite(b1)):
        fail("invalid-growth", f"declared beta1 = {coeffs.beta1!r}, beta2 = {coeffs.beta2!r}")
    else:
        rng = np.random.default_rng(seed)
        times = np.unique(np.concatenate([[0, grid.n_steps - 1], rng.integers(0, grid.n_steps, n_probe_times)]))
        xx, kk = np.meshgrid(_X_LATTICE, _K_LATTICE, indexing="ij")
        for i in times:
            vals = _eval3(coeffs, int(i), xx, kk)
            lhs = sum(np.abs(v) ** p for v in vals)
            rhs = np.abs(coeffs.beta1_at(int(i))) ** p + coeffs.beta2**p * (np.abs(xx) ** p + np.abs(kk) ** p)
            bad = ~(lhs <= rhs * (1 + 1e-9) + 1e-12)
            if bad.any():
                a, b = np.argwhere(bad)[0]
                fail("growth-violation", f"growth bound fails at step {int(i)}",
                     {"step": int(i), "x": float(xx[a, b]), "k": float(kk[a, b]), "lhs": float(lhs[a, b]), "rhs": float(rhs[a, b])})
                break

    checks.append("modulus")
    mod = coeffs.modulus
    if not (mod.registry or mod.osgood_certified):
        fail("unsupported-modulus", "custom modulus without an integrability certificate")
    else:
        rng = np.random.default_rng(seed + 1)
        scale = 10.0 ** rng.uniform(-8, 1, n_pairs)
        x = rng.choice(_X_LATTICE, n_pairs) * rng.uniform(0, 1, n_pairs)
        k = np.abs(rng.choice(_K_LATTICE, n_pairs) * rng.uniform(0, 1, n_pairs))
        dx = scale * rng.standard_normal(n_pairs)
        dk = np.abs(scale * rng.standard_normal(n_pairs)) * rng.integers(0, 2, n_pairs)
        steps = rng.integers(0, grid.n_steps, n_pairs)
        v1 = _eval3(coeffs, steps, x, k)
        v2 = _eval3(coeffs, steps, x + dx, k + dk)
        lhs = sum(np.abs(a - b) ** p for a, b in zip(v1, v2))
        R = np.abs(dx) ** p + np.abs(dk) ** p
        rhs = mod.beta(steps) * mod.rho(R)
        bad = ~(lhs <= rhs * (1 + 1e-9) + 1e-300)
        if bad.any():
            j = int(np.argmax(bad))
            fail("modulus-violation", "integral-Lipschitz bound fails on a sampled pair",
                 {"x": float(x[j]), "k": float(k[j]), "dx": float(dx[j]), "dk": float(dk[j]), "lhs": float(lhs[j]), "rhs": float(rhs[j])})

    return ValidationReport(not fails, fails, checks)


def nested_batches(control: VolatilityControl, grid: TimeGrid, spec: VolatilitySpec, levels: int, master_seed: int, indices):
    """Batches on ``grid`` refined ``levels - 1`` times with shared Brownian increments.

    Normals are drawn on the finest grid; each coarser level sums pairs of the
    next finer increments.
    """
    control.check(grid, spec)
    factor = 2 ** (levels - 1)
    fine_grid = TimeGrid(grid.horizon, grid.n_steps * factor)
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    seeds = np.array([scenario_seed(master_seed, j) for j in indices], dtype=np.uint64)
    z = np.vstack([_normals(s, fine_grid.n_steps) for s in seeds])
    theta_f = np.repeat(control.theta_sq, factor)
    dB = np.sqrt(theta_f * fine_grid.dt) * z
    out = []
    for lev in range(levels - 1, -1, -1):
        g = TimeGrid(grid.horizon, grid.n_steps * 2**lev)
        theta = np.repeat(control.theta_sq, 2**lev)
        dQV = np.broadcast_to(theta * g.dt, dB.shape).copy()
        lead = np.zeros((dB.shape[0], 1))
        B = np.concatenate([lead, np.cumsum(dB, axis=1)], axis=1)
        QV = np.concatenate([lead, np.cumsum(dQV, axis=1)], axis=1)
        out.append(ScenarioBatch(dB, dQV, B, QV, control.label, seeds, indices, g, theta))
        dB = dB[:, 0::2] + dB[:, 1::2]
    return out[::-1]


@dataclass
class RefinementTable:
    n_steps: list
    gaps: list  # mean sup-norm gap between level l and l+1 (at shared nodes)
    oracle_gaps: list  # mean sup-norm gap between picard and stepwise at each level
    picard_iters: list

    @property
    def gap_ratios(self):
        return [b / a if a > 0 else float("nan") for a, b in zip(self.gaps, self.gaps[1:])]

    @property
    def oracle_ratios(self):
        return [a / b if b > 0 else float("nan") for a, b in zip(self.oracle_gaps, self.oracle_gaps[1:])]

    def to_dict(self):
        return {
            "n_steps": self.n_steps, "gaps": self.gaps, "gap_ratios": self.gap_ratios,
            "oracle_gaps": self.oracle_gaps, "oracle_halving": self.oracle_ratios,
            "picard_iters": self.picard_iters,
        }


def richardson_refine(
    coeffs: CoefficientSet,
    obstacle: ObstacleSpec,
    control: VolatilityControl,
    x0: float,
    cfg: SolverConfig,
    levels: int,
    grid: TimeGrid,
    spec: VolatilitySpec = VolatilitySpec(),
    master_seed: int = 0,
    n_paths: int = 1,
) -> RefinementTable:
    """Solve on ``n, 2n, ...`` steps with nested increments and tabulate the gaps."""
    if int(levels) != levels or levels < 2:
        raise InvalidArgumentError(f"levels must be an integer >= 2, got {levels}")
    if obstacle.mode == "grid_path" and np.ndim(obstacle.values) > 0:
        raise InvalidArgumentError("refinement needs a constant or Ito obstacle")
    batches = nested_batches(control, grid, spec, levels, master_seed, np.arange(n_paths))
    sols, oracle, iters = [], [], []
    for b in batches:
        r = picard_solve_batch(coeffs, obstacle, b, x0, cfg)
        s = stepwise_solve_batch(coeffs, obstacle, b, x0)
        sols.append(r)
        oracle.append(float(np.mean(np.max(np.abs(r.X - s.X), axis=1) + np.max(np.abs(r.K - s.K), axis=1))))
        iters.append(int(np.max(r.picard_iters)))
    gaps = []
    for a, b in zip(sols, sols[1:]):
        gaps.append(float(np.mean(np.max(np.abs(b.X[:, ::2] - a.X), axis=1))))
    return RefinementTable([b.grid.n_steps for b in batches], gaps, oracle, iters)


def write_solution_csv(result: SolveResult, scenario: ScenarioPath, filename) -> None:
    nodes = scenario.grid.nodes
    X, K = result.solution.X, result.solution.K
    S = result.S
    with open(filename, "w") as fh:
        fh.write("t,X,K,S,B,QV\n")
        for i in range(len(nodes)):
            fh.write(",".join(_FMT.format(v) for v in (nodes[i], X[i], K[i], S[i], scenario.B[i], scenario.QV[i])) + "\n")


def run_summary(coeffs, seed, n_steps, result: SolveResult, S=None) -> dict:
    d = coeffs.describe()
    d.update({
        "seed": int(seed), "n_steps": int(n_steps), "picard_iters": int(result.picard_iters),
        "residual": float(result.residual), "oracle_gap": result.oracle_gap,
    })
    if S is not None:
        d["flatness_defect"] = float(flatness_defect(result.solution, S))
    return d


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)
