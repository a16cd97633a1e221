"""Discretised G-Brownian scenarios.

Under volatility uncertainty the law of ``B`` is not unique. Each admissible
squared-volatility schedule ``theta_sq`` picks one classical measure, under which
``B`` is the time-changed Brownian path ``int theta dW`` and ``<B>`` has
increments ``theta_sq * dt``. Sampling a finite family of such schedules gives
a computable lower approximation of the upper expectation.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConstraintViolationError, InvalidArgumentError, ResourceLimitError

__all__ = [
    "VolatilitySpec",
    "TimeGrid",
    "VolatilityControl",
    "ScenarioPath",
    "ScenarioBatch",
    "make_uniform_grid",
    "scenario_seed",
    "sample_scenario",
    "sample_batch",
    "bang_bang_family",
    "constant_controls",
    "qv_from_increments",
    "write_scenario_csv",
    "read_scenario_csv",
    "MAX_CONTROLS",
]

MAX_CONTROLS = 4096
_CSV_FMT = "{:.17g}"


@dataclass(frozen=True)
class VolatilitySpec:
    sigma_lo_sq: float = 0.0
    sigma_hi_sq: float = 1.0

    def __post_init__(self):
        lo, hi = float(self.sigma_lo_sq), float(self.sigma_hi_sq)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise InvalidArgumentError("volatility bounds must be finite")
        if lo < 0 or hi <= 0 or lo > hi:
            raise InvalidArgumentError(
                f"need 0 <= sigma_lo_sq <= sigma_hi_sq and sigma_hi_sq > 0, got ({lo}, {hi})"
            )
        object.__setattr__(self, "sigma_lo_sq", lo)
        object.__setattr__(self, "sigma_hi_sq", hi)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise InvalidArgumentError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InvalidArgumentError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.horizon / self.n_steps

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)


def make_uniform_grid(horizon: float, n_steps: int) -> TimeGrid:
    return TimeGrid(horizon, n_steps)


@dataclass(frozen=True, eq=False)
class VolatilityControl:
    """Piecewise-constant squared volatility, one value per grid step."""

    theta_sq: np.ndarray
    label: str = "control"

    def __post_init__(self):
        arr = np.array(self.theta_sq, dtype=float).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "theta_sq", arr)

    def check(self, grid: TimeGrid, spec: VolatilitySpec) -> None:
        if self.theta_sq.shape[0] != grid.n_steps:
            raise InvalidArgumentError(
                f"control {self.label!r} has {self.theta_sq.shape[0]} steps, grid has {grid.n_steps}"
            )
        if np.any(self.theta_sq < spec.sigma_lo_sq) or np.any(self.theta_sq > spec.sigma_hi_sq):
            raise ConstraintViolationError(
                f"control {self.label!r} leaves [{spec.sigma_lo_sq}, {spec.sigma_hi_sq}]"
            )

    def refine(self, factor: int = 2) -> "VolatilityControl":
        return VolatilityControl(np.repeat(self.theta_sq, factor), self.label)

    @classmethod
    def constant(cls, value: float, n_steps: int, label: str | None = None) -> "VolatilityControl":
        return cls(np.full(n_steps, float(value)), label or f"const:{value:g}")


@dataclass(eq=False)
class ScenarioPath:
    dB: np.ndarray
    dQV: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    control_label: str
    seed: int
    grid: TimeGrid = field(repr=False)
    theta_sq: np.ndarray = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return self.dB.shape[0]


@dataclass(eq=False)
class ScenarioBatch:
    """Several scenarios under one control, stacked row-wise.

    Row ``j`` of every array belongs to scenario index ``indices[j]``.
    """

    dB: np.ndarray
    dQV: np.ndarray
    B: np.ndarray
    QV: np.ndarray
    control_label: str
    seeds: np.ndarray
    indices: np.ndarray
    grid: TimeGrid = field(repr=False)
    theta_sq: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.dB.shape[0]

    @classmethod
    def from_paths(cls, paths, indices=None) -> "ScenarioBatch":
        paths = list(paths)
        if not paths:
            raise InvalidArgumentError("empty scenario list")
        first = paths[0]
        return cls(
            dB=np.vstack([p.dB for p in paths]),
            dQV=np.vstack([p.dQV for p in paths]),
            B=np.vstack([p.B for p in paths]),
            QV=np.vstack([p.QV for p in paths]),
            control_label=first.control_label,
            seeds=np.array([p.seed for p in paths], dtype=np.uint64),
            indices=np.arange(len(paths)) if indices is None else np.asarray(indices),
            grid=first.grid,
            theta_sq=first.theta_sq,
        )

    def path(self, j: int) -> ScenarioPath:
        return ScenarioPath(
            dB=self.dB[j], dQV=self.dQV[j], B=self.B[j], QV=self.QV[j],
            control_label=self.control_label, seed=int(self.seeds[j]),
            grid=self.grid, theta_sq=self.theta_sq,
        )

    def subset(self, rows) -> "ScenarioBatch":
        rows = np.asarray(rows)
        return ScenarioBatch(
            dB=self.dB[rows], dQV=self.dQV[rows], B=self.B[rows], QV=self.QV[rows],
            control_label=self.control_label, seeds=self.seeds[rows],
            indices=self.indices[rows], grid=self.grid, theta_sq=self.theta_sq,
        )


def scenario_seed(master_seed: int, index: int) -> int:
    """64-bit seed for scenario ``index`` under ``master_seed``.

    The same index yields the same seed whatever the control, which is what
    makes the common-random-numbers comparisons exact.
    """
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _normals(seed: int, n: int) -> np.ndarray:
    return np.random.Generator(np.random.Philox(key=int(seed))).standard_normal(n)


def _assemble(theta_sq, grid, z):
    dt = grid.dt
    dQV = theta_sq * dt
    dB = np.sqrt(dQV) * z
    lead = np.zeros(z.shape[:-1] + (1,))
    B = np.concatenate([lead, np.cumsum(dB, axis=-1)], axis=-1)
    QV = np.concatenate([lead, np.cumsum(np.broadcast_to(dQV, z.shape), axis=-1)], axis=-1)
    return dB, np.broadcast_to(dQV, z.shape).copy(), B, QV


def sample_scenario(
    control: VolatilityControl, grid: TimeGrid, spec: VolatilitySpec, seed: int
) -> ScenarioPath:
    control.check(grid, spec)
    z = _normals(seed, grid.n_steps)
    dB, dQV, B, QV = _assemble(control.theta_sq, grid, z)
    return ScenarioPath(dB, dQV, B, QV, control.label, int(seed), grid, control.theta_sq)


def sample_batch(
    control: VolatilityControl,
    grid: TimeGrid,
    spec: VolatilitySpec,
    master_seed: int,
    indices,
) -> ScenarioBatch:
    """Scenarios ``indices`` under ``control``; scenario j always uses stream j."""
    control.check(grid, spec)
    indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    seeds = np.array([scenario_seed(master_seed, j) for j in indices], dtype=np.uint64)
    z = np.vstack([_normals(s, grid.n_steps) for s in seeds]) if len(seeds) else np.empty((0, grid.n_steps))
    dB, dQV, B, QV = _assemble(control.theta_sq, grid, z)
    return ScenarioBatch(dB, dQV, B, QV, control.label, seeds, indices, grid, control.theta_sq)


def bang_bang_family(
    grid: TimeGrid, spec: VolatilitySpec, n_blocks: int, max_controls: int = MAX_CONTROLS
) -> list[VolatilityControl]:
    """All controls switching between the two bounds on equal step-blocks.

    Blocks are as equal as integer division allows; the first ``n_steps % n_blocks``
    blocks carry one extra step.
    """
    if int(n_blocks) != n_blocks or n_blocks < 1:
        raise InvalidArgumentError(f"n_blocks must be a positive integer, got {n_blocks}")
    if n_blocks > grid.n_steps:
        raise InvalidArgumentError(f"n_blocks={n_blocks} exceeds n_steps={grid.n_steps}")
    if 2**n_blocks > max_controls:
        raise ResourceLimitError(f"2**{n_blocks} controls exceeds the cap of {max_controls}")
    sizes = np.full(n_blocks, grid.n_steps // n_blocks)
    sizes[: grid.n_steps % n_blocks] += 1
    out = []
    for pattern in itertools.product((0, 1), repeat=n_blocks):
        levels = np.where(np.array(pattern) == 1, spec.sigma_hi_sq, spec.sigma_lo_sq)
        label = "bb:" + "".join("H" if b else "L" for b in pattern)
        out.append(VolatilityControl(np.repeat(levels, sizes), label))
    return out


def constant_controls(grid: TimeGrid, spec: VolatilitySpec) -> list[VolatilityControl]:
    return [
        VolatilityControl(np.full(grid.n_steps, spec.sigma_lo_sq), "const:lo"),
        VolatilityControl(np.full(grid.n_steps, spec.sigma_hi_sq), "const:hi"),
    ]


def qv_from_increments(path: ScenarioPath) -> np.ndarray:
    """Realised quadratic variation: running sum of squared B-increments."""
    dB = np.asarray(path.dB)
    lead = np.zeros(dB.shape[:-1] + (1,))
    return np.concatenate([lead, np.cumsum(dB * dB, axis=-1)], axis=-1)


def write_scenario_csv(path: ScenarioPath, filename) -> None:
    nodes = path.grid.nodes
    theta = path.theta_sq if path.theta_sq is not None else path.dQV / path.grid.dt
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "B", "QV", "theta_sq"])
        for i in range(path.n_steps + 1):
            th = _CSV_FMT.format(theta[i]) if i < path.n_steps else ""
            w.writerow([_CSV_FMT.format(nodes[i]), _CSV_FMT.format(path.B[i]), _CSV_FMT.format(path.QV[i]), th])


def read_scenario_csv(filename, control_label: str = "", seed: int = 0) -> ScenarioPath:
    """Inverse of :func:`write_scenario_csv`.

    ``dB`` is recovered by differencing ``B`` and ``dQV`` as ``theta_sq * dt``.
    """
    rows = list(csv.DictReader(Path(filename).read_text().splitlines()))
    if not rows or rows[-1]["theta_sq"] not in ("", None):
        raise InvalidArgumentError(f"{filename}: malformed scenario CSV")
    t = np.array([float(r["t"]) for r in rows])
    B = np.array([float(r["B"]) for r in rows])
    QV = np.array([float(r["QV"]) for r in rows])
    theta = np.array([float(r["theta_sq"]) for r in rows[:-1]])
    grid = TimeGrid(t[-1], len(rows) - 1)
    return ScenarioPath(np.diff(B), theta * grid.dt, B, QV, control_label, seed, grid, theta)
