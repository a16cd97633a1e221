"""Upper expectation and capacity over a finite family of volatility controls.

``E^[F] = sup_P E_P[F]`` is estimated from below by the largest per-control
sample mean. Scenario ``j`` uses the same normal stream under every control
(common random numbers), so order relations between functionals carry over to
the estimates without statistical slack.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, ObstacleSpec
from .errors import InvalidArgumentError
from .reflection import flatness_defect, ReflectedSolution
from .scenario import TimeGrid, VolatilityControl, VolatilitySpec, sample_batch
from .solver import SolverConfig, picard_solve_batch

__all__ = [
    "Problem",
    "SolvedPaths",
    "PathFunctional",
    "UpperExpectationEstimate",
    "solve_control",
    "solve_family",
    "estimate",
    "upper_expectation",
    "capacity",
    "FUNCTIONALS",
    "EVENTS",
    "register_functional",
    "register_event",
]


@dataclass(frozen=True, eq=False)
class Problem:
    coeffs: CoefficientSet
    obstacle: ObstacleSpec
    x0: float
    grid: TimeGrid
    vol: VolatilitySpec = VolatilitySpec()
    cfg: SolverConfig = SolverConfig()


@dataclass(eq=False)
class SolvedPaths:
    """Solutions of one problem under one control, one row per scenario."""

    label: str
    X: np.ndarray
    K: np.ndarray
    S: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    x0: float
    dt: float
    picard_iters: np.ndarray
    residual: np.ndarray
    indices: np.ndarray
    dB: np.ndarray = None
    dQV: np.ndarray = None

    def __len__(self):
        return self.X.shape[0]


def solve_control(problem: Problem, control: VolatilityControl, indices, master_seed: int, jobs: int = 1) -> SolvedPaths:
    indices = np.asarray(indices, dtype=np.int64)
    chunks = [c for c in np.array_split(indices, max(1, int(jobs))) if c.size]

    def work(chunk):
        b = sample_batch(control, problem.grid, problem.vol, master_seed, chunk)
        r = picard_solve_batch(problem.coeffs, problem.obstacle, b, problem.x0, problem.cfg)
        return b, r

    if len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=len(chunks)) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    cat = lambda get: np.concatenate([get(b, r) for b, r in parts], axis=0)  # noqa: E731
    return SolvedPaths(
        control.label,
        cat(lambda b, r: r.X), cat(lambda b, r: r.K), cat(lambda b, r: r.S),
        cat(lambda b, r: b.B), cat(lambda b, r: b.QV),
        float(problem.x0), problem.grid.dt,
        cat(lambda b, r: r.picard_iters), cat(lambda b, r: r.residual), indices,
        cat(lambda b, r: b.dB), cat(lambda b, r: b.dQV),
    )


def solve_family(problem: Problem, controls, n_paths: int, master_seed: int, jobs: int = 1) -> list[SolvedPaths]:
    controls = list(controls)
    if not controls:
        raise InvalidArgumentError("control family is empty")
    if n_paths < 2:
        raise InvalidArgumentError("n_paths must be at least 2")
    return [solve_control(problem, c, np.arange(n_paths), master_seed, jobs) for c in controls]


# Functionals -----------------------------------------------------------------

def _pick(paths, name):
    return getattr(paths, name)


def _terminal_value(paths, path="X", power=1.0):
    return _pick(paths, path)[:, -1] ** power if power != 1.0 else _pick(paths, path)[:, -1].copy()


def _running_sup(paths, path="X", power=1.0):
    return np.max(np.abs(_pick(paths, path)), axis=1) ** power


def _running_sup_pos(paths, path="S", power=1.0):
    return np.max(np.maximum(_pick(paths, path), 0.0), axis=1) ** power


def _terminal_K(paths, power=1.0):
    return paths.K[:, -1] ** power


def _flatness(paths):
    return flatness_defect(ReflectedSolution(paths.X, paths.K), paths.S)


def _terminal_B_squared(paths):
    return paths.B[:, -1] ** 2


def _constant(paths, c=0.0):
    return np.full(len(paths), float(c))


def _apriori_lhs(paths, power=3.0):
    return np.max(np.abs(paths.X), axis=1) ** power + paths.K[:, -1] ** power


FUNCTIONALS = {
    "terminal_value": _terminal_value,
    "running_sup": _running_sup,
    "running_sup_positive_part": _running_sup_pos,
    "terminal_K": _terminal_K,
    "flatness": _flatness,
    "terminal_B_squared": _terminal_B_squared,
    "constant": _constant,
    "apriori_lhs": _apriori_lhs,
}

EVENTS = {
    "impossible": lambda paths: paths.X[:, 0] != paths.x0,
    "certain": lambda paths: paths.K[:, 0] == 0,
    "B_T_positive": lambda paths: paths.B[:, -1] > 0,
    "hits_obstacle": lambda paths: paths.K[:, -1] > 0,
    "X_T_above": lambda paths, level=0.0: paths.X[:, -1] > level,
}


def register_functional(name, fn):
    if name in FUNCTIONALS:
        raise InvalidArgumentError(f"functional {name!r} already registered")
    FUNCTIONALS[name] = fn


def register_event(name, fn):
    if name in EVENTS:
        raise InvalidArgumentError(f"event {name!r} already registered")
    EVENTS[name] = fn


@dataclass(frozen=True, eq=False)
class PathFunctional:
    """Registry functional, or a sum / nonnegative multiple of functionals."""

    kind: str
    params: dict = field(default_factory=dict)
    parts: tuple = ()
    weight: float = 1.0

    def __post_init__(self):
        if self.kind == "event":
            if self.params.get("event") not in EVENTS:
                raise InvalidArgumentError(f"unknown event {self.params.get('event')!r}; known: {sorted(EVENTS)}")
        elif self.kind not in FUNCTIONALS and self.kind not in ("sum", "scale"):
            raise InvalidArgumentError(f"unknown functional {self.kind!r}; known: {sorted(FUNCTIONALS)}")

    @classmethod
    def event(cls, name, **params):
        """Indicator of a registry event."""
        return cls("event", {"event": name, **params})

    def __call__(self, paths: SolvedPaths) -> np.ndarray:
        if self.kind == "sum":
            return self.parts[0](paths) + self.parts[1](paths)
        if self.kind == "scale":
            return self.weight * self.parts[0](paths)
        if self.kind == "event":
            kw = {k: v for k, v in self.params.items() if k != "event"}
            return np.asarray(EVENTS[self.params["event"]](paths, **kw), dtype=float)
        return np.asarray(FUNCTIONALS[self.kind](paths, **self.params), dtype=float)

    def __add__(self, other):
        return PathFunctional("sum", parts=(self, other))

    def __rmul__(self, lam):
        if lam < 0:
            raise InvalidArgumentError("only nonnegative multiples are supported")
        return PathFunctional("scale", parts=(self,), weight=float(lam))

    def name(self) -> str:
        if self.kind == "sum":
            return f"({self.parts[0].name()} + {self.parts[1].name()})"
        if self.kind == "scale":
            return f"{self.weight:g}*{self.parts[0].name()}"
        if self.kind == "event":
            return f"1{{{self.params['event']}}}"
        if self.params:
            args = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
            return f"{self.kind}({args})"
        return self.kind


@dataclass
class UpperExpectationEstimate:
    value: float
    per_control_means: dict  # label -> (mean, stderr, n_paths)
    argmax_control: str
    master_seed: int
    functional: str = ""

    @property
    def stderr(self) -> float:
        return self.per_control_means[self.argmax_control][1]

    def to_dict(self) -> dict:
        return {
            "functional": self.functional,
            "value": self.value,
            "argmax_control": self.argmax_control,
            "controls": [
                {"label": k, "mean": m, "stderr": s, "n_paths": n}
                for k, (m, s, n) in self.per_control_means.items()
            ],
            "master_seed": int(self.master_seed),
        }


def _mean_se(vals):
    n = vals.shape[0]
    if n and np.all(vals == vals[0]):
        return float(vals[0]), 0.0
    mean = math.fsum(vals.tolist()) / n
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return mean, se


def estimate(functional, solved: list[SolvedPaths], master_seed: int = 0) -> UpperExpectationEstimate:
    """Maximise per-control sample means of ``functional`` over already solved families."""
    table = {}
    best, best_label = -math.inf, None
    for sp in solved:
        vals = np.asarray(functional(sp), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"functional is not finite under control {sp.label!r}")
        m, se = _mean_se(vals)
        table[sp.label] = (m, se, int(vals.shape[0]))
        if m > best:
            best, best_label = m, sp.label
    name = functional.name() if hasattr(functional, "name") else getattr(functional, "__name__", "custom")
    return UpperExpectationEstimate(best, table, best_label, master_seed, name)


def upper_expectation(functional, problem: Problem, controls, n_paths: int, master_seed: int, jobs: int = 1):
    solved = solve_family(problem, controls, n_paths, master_seed, jobs)
    return estimate(functional, solved, master_seed)


def capacity(event, problem: Problem, controls, n_paths: int, master_seed: int, jobs: int = 1, **params):
    """Upper probability ``sup_P P(A)`` of a registry event."""
    fn = event if isinstance(event, PathFunctional) else PathFunctional.event(event, **params)
    return upper_expectation(fn, problem, controls, n_paths, master_seed, jobs)
