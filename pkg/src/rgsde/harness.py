"""Experiment suites: comparison, truncation, uniqueness.

Hypotheses that cannot be proven for black-box evaluators are probed on a finite
``(x, k)`` lattice; a failing probe means the case tests nothing and is rejected
with :class:`IllPosedCaseError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, ObstacleSpec, truncate_coefficients
from .errors import IllPosedCaseError, InvalidArgumentError
from .expectation import Problem, solve_control
from .scenario import TimeGrid, VolatilitySpec, sample_batch
from .solver import SolverConfig, picard_solve_batch

__all__ = [
    "PROFILES",
    "ComparisonCase",
    "ComparisonReport",
    "probe_case",
    "run_comparison",
    "TruncationTable",
    "run_truncation_study",
    "UniquenessReport",
    "run_uniqueness_probe",
]

PROFILES = ("thm36_bounded", "thm37_general", "cor38_case1", "cor38_case2")

X_PROBE = np.array([-50.0, -10.0, -3.0, -1.0, -0.5, -1e-2, 0.0, 1e-2, 0.5, 1.0, 3.0, 10.0, 50.0])
K_PROBE = np.array([0.0, 1e-3, 0.1, 0.5, 1.0, 3.0, 10.0, 50.0])

COMPARISON_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class ComparisonCase:
    coeffs1: CoefficientSet
    obstacle1: ObstacleSpec
    x01: float
    coeffs2: CoefficientSet
    obstacle2: ObstacleSpec
    x02: float
    profile: str = "thm37_general"
    shared_g: bool = True
    name: str = ""

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidArgumentError(f"unknown hypothesis profile {self.profile!r}; known: {PROFILES}")

    def problems(self, grid, vol=VolatilitySpec(), cfg=SolverConfig()):
        return (Problem(self.coeffs1, self.obstacle1, self.x01, grid, vol, cfg),
                Problem(self.coeffs2, self.obstacle2, self.x02, grid, vol, cfg))


def _table(ev, i):
    x, k = np.meshgrid(X_PROBE, K_PROBE, indexing="ij")
    return np.asarray(ev(i, x, k), dtype=float) * np.ones_like(x)  # rows: x, columns: k


def _probe_steps(grid):
    n = grid.n_steps
    return sorted({0, n // 2, n - 1})


def probe_case(case: ComparisonCase, grid: TimeGrid) -> dict:
    """Run the profile's hypothesis probes; raise on the first failure, else return the probe log."""
    log = {}

    def require(name, ok, detail=""):
        log[name] = bool(ok)
        if not ok:
            raise IllPosedCaseError(f"hypothesis probe {name!r} failed for profile {case.profile}: {detail}", name)

    c1, c2 = case.coeffs1, case.coeffs2
    require("initial_order", case.x01 <= case.x02, f"x0^1 = {case.x01} > x0^2 = {case.x02}")
    require("shared_g_flag", case.shared_g, "the two problems do not declare a shared g")
    for i in _probe_steps(grid):
        g1, g2 = _table(c1.g, i), _table(c2.g, i)
        require("shared_g", np.array_equal(g1, g2), f"g^1 != g^2 at step {i}")
        require("g_k_independent", np.all(g1 == g1[:, :1]), f"g depends on k at step {i}")
        for label, ev1, ev2 in (("f", c1.f, c2.f), ("h", c1.h, c2.h)):
            t1, t2 = _table(ev1, i), _table(ev2, i)
            bad = np.argwhere(t1[:, 0] > t2[:, 0])
            require(f"{label}_order_at_zero", bad.size == 0,
                    f"{label}^1(x, 0) > {label}^2(x, 0) at x = {X_PROBE[bad[0][0]] if bad.size else None}, step {i}")
            if case.profile == "cor38_case1":
                require(f"{label}1_k_independent", np.all(t1 == t1[:, :1]), f"{label}^1 depends on k")
            else:
                require(f"{label}1_nonincreasing_in_k", np.all(np.diff(t1, axis=1) <= 0),
                        f"{label}^1 increases in k at step {i}")
            if case.profile == "cor38_case2":
                require(f"{label}2_k_independent", np.all(t2 == t2[:, :1]), f"{label}^2 depends on k")
            else:
                require(f"{label}2_nondecreasing_in_k", np.all(np.diff(t2, axis=1) >= 0),
                        f"{label}^2 decreases in k at step {i}")
            if case.profile == "thm36_bounded":
                for c, t in ((c1, t1), (c2, t2)):
                    require("bounded_coefficients", c.bound is not None and np.all(np.abs(t) <= c.bound),
                            f"{label} has no declared bound or exceeds it")
    if case.profile == "thm36_bounded":
        for c in (c1, c2):
            g = _table(c.g, 0)
            require("bounded_coefficients", c.bound is not None and np.all(np.abs(g) <= c.bound), "g unbounded")
        for o in (case.obstacle1, case.obstacle2):
            require("obstacle_upper_bounded", o.upper_bound(grid.horizon) is not None,
                    "obstacle is not uniformly bounded above")
    return log


@dataclass
class ComparisonReport:
    max_violation: float
    n_scenarios: int
    worst_node: np.ndarray  # per scenario, node of the largest (X1 - X2)
    violation: np.ndarray  # per scenario
    tolerance: np.ndarray  # per scenario, 1e-9 (1 + sup |X2|)
    profile: str
    probes: dict = field(default_factory=dict)
    name: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.all(self.violation <= self.tolerance))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "profile": self.profile,
            "passed": self.passed,
            "max_violation": self.max_violation,
            "n_scenarios": self.n_scenarios,
            "max_tolerance_used": float(np.max(self.tolerance)) if self.tolerance.size else 0.0,
            "probes": self.probes,
        }


def run_comparison(case: ComparisonCase, controls, n_paths, grid, master_seed, vol=VolatilitySpec(),
                   cfg=SolverConfig(), jobs=1) -> ComparisonReport:
    probes = probe_case(case, grid)
    p1, p2 = case.problems(grid, vol, cfg)
    idx = np.arange(n_paths)
    viol, worst, tol = [], [], []
    for c in controls:
        batch = sample_batch(c, grid, vol, master_seed, idx)
        S1, S2 = case.obstacle1.path(batch), case.obstacle2.path(batch)
        if np.any(S1 > S2):
            r = int(np.argwhere(np.any(S1 > S2, axis=1))[0][0])
            raise IllPosedCaseError(f"S^1 > S^2 on scenario {r} under control {c.label!r}", "obstacle_order")
        a = solve_control(p1, c, idx, master_seed, jobs)
        b = solve_control(p2, c, idx, master_seed, jobs)
        d = a.X - b.X
        viol.append(np.maximum(np.max(d, axis=1), 0.0))
        worst.append(np.argmax(d, axis=1))
        tol.append(COMPARISON_RTOL * (1.0 + np.max(np.abs(b.X), axis=1)))
    probes["obstacle_order"] = True
    v = np.concatenate(viol)
    return ComparisonReport(float(v.max()), int(v.size), np.concatenate(worst), v, np.concatenate(tol),
                            case.profile, probes, case.name)


# Truncation -----------------------------------------------------------------

@dataclass
class TruncationTable:
    ladder: list
    gaps: list  # E^[sup |X^N - X|]
    gap_stderr: list
    realized_bound: np.ndarray  # per scenario, sup of |f|, |h|, |g|, S^+ along the untruncated path
    exact_zero: list  # per N, all rows with N above their realized bound have gap exactly 0
    row_gaps: list = field(default_factory=list)

    @property
    def nonincreasing(self) -> bool:
        return all(b <= a + 3 * math.hypot(sa, sb)
                   for a, b, sa, sb in zip(self.gaps, self.gaps[1:], self.gap_stderr, self.gap_stderr[1:]))

    @property
    def passed(self) -> bool:
        return self.nonincreasing and all(self.exact_zero)

    def to_dict(self) -> dict:
        return {
            "ladder": self.ladder,
            "gaps": self.gaps,
            "gap_stderr": self.gap_stderr,
            "max_realized_bound": float(np.max(self.realized_bound)),
            "nonincreasing": self.nonincreasing,
            "exact_zero_above_bound": self.exact_zero,
            "passed": self.passed,
        }


def _realized_bound(problem: Problem, sp) -> np.ndarray:
    c = problem.coeffs
    steps = np.arange(problem.grid.n_steps)
    Xl, Kl, Kr = sp.X[:, :-1], sp.K[:, :-1], sp.K[:, 1:]
    vals = [np.abs(c.f(steps, Xl, Kr)), np.abs(c.h(steps, Xl, Kr)), np.abs(c.g(steps, Xl, Kl)),
            np.abs(c.f(steps, Xl, Kl)), np.abs(c.h(steps, Xl, Kl))]
    out = np.max(np.maximum(sp.S, 0.0), axis=1)
    for v in vals:
        out = np.maximum(out, np.max(v * np.ones_like(Xl), axis=1))
    return out


def run_truncation_study(problem, N_ladder, controls, n_paths, master_seed, jobs=1):
    """Gap between truncated and untruncated solutions along an increasing ladder of N.

    A :class:`ComparisonCase` runs the study on both of its problems (grid and
    solver settings come from ``problem`` then, passed as ``(case, grid)``).
    """
    if isinstance(problem, tuple):
        case, grid = problem
        return [run_truncation_study(p, N_ladder, controls, n_paths, master_seed, jobs) for p in case.problems(grid)]
    ladder = [float(N) for N in N_ladder]
    if not ladder or any(N <= 0 for N in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise InvalidArgumentError("N_ladder must be a nonempty strictly increasing list of positive numbers")
    idx = np.arange(n_paths)
    base = [solve_control(problem, c, idx, master_seed, jobs) for c in controls]
    bound = np.concatenate([_realized_bound(problem, sp) for sp in base])
    gaps, ses, zero, rows = [], [], [], []
    for N in ladder:
        tp = Problem(truncate_coefficients(problem.coeffs, N), problem.obstacle.truncated(N), problem.x0,
                     problem.grid, problem.vol, problem.cfg)
        per_control = []
        for c, sp in zip(controls, base):
            t = solve_control(tp, c, idx, master_seed, jobs)
            per_control.append(np.max(np.abs(t.X - sp.X), axis=1))
        best = max(per_control, key=np.mean)
        gaps.append(float(np.mean(best)))
        ses.append(float(np.std(best, ddof=1) / math.sqrt(best.size)) if best.size > 1 else 0.0)
        allrows = np.concatenate(per_control)
        rows.append(allrows)
        zero.append(bool(np.all(allrows[bound < N] == 0.0)))
    return TruncationTable(ladder, gaps, ses, bound, zero, rows)


# Uniqueness -----------------------------------------------------------------

@dataclass
class UniquenessReport:
    deltas: list
    max_gap: list  # per delta, sup-norm distance to the delta = 0 fixed point
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(g <= self.tolerance for g in self.max_gap) and (0.0 not in self.deltas or
                                                                     self.max_gap[self.deltas.index(0.0)] == 0.0)

    def to_dict(self) -> dict:
        return {"deltas": self.deltas, "max_gap": self.max_gap, "tolerance": self.tolerance, "passed": self.passed}


def run_uniqueness_probe(problem: Problem, controls, n_paths, master_seed, deltas=(0.0, 1.0, -1.0, 10.0, -10.0)):
    """Re-solve from perturbed Picard starts ``X0 = x0 + delta`` and compare fixed points."""
    deltas = [float(d) for d in deltas]
    gaps = [0.0] * len(deltas)
    idx = np.arange(n_paths)
    for c in controls:
        batch = sample_batch(c, problem.grid, problem.vol, master_seed, idx)
        ref = picard_solve_batch(problem.coeffs, problem.obstacle, batch, problem.x0, problem.cfg)
        for n, d in enumerate(deltas):
            r = picard_solve_batch(problem.coeffs, problem.obstacle, batch, problem.x0, problem.cfg,
                                   init=problem.x0 + d)
            gap = float(max(np.max(np.abs(r.X - ref.X)), np.max(np.abs(r.K - ref.K))))
            gaps[n] = max(gaps[n], gap)
    return UniquenessReport(deltas, gaps, 10 * problem.cfg.picard_tol)
