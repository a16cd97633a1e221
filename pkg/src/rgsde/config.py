"""Run configuration: sectioned ``key = value`` files, validated in full before any work.

Schema (defaults in parentheses)::

    [run]           master_seed (0), n_paths (4), jobs (1), out_dir (out)
    [volatility]    sigma_lo_sq (0), sigma_hi_sq (1)
    [grid]          horizon (1), n_steps (64)
    [coefficients]  family (zero), p (3), plus the family's parameters
    [obstacle]      mode = constant | ito (constant); value (0); s0, f_S, h_S, g_S (0); cap
    [solver]        x0 (0), picard_tol (1e-10), max_picard (200), oracle_check (false)
    [controls]      family = constant | bang_bang | both (constant), n_blocks (2)
    [expect]        functional (terminal_value), path, power, c, event, level
    [refine]        levels (4), control (0), n_paths
    [comparison NAME]  profile, coefficients1, coefficients2, obstacle1, obstacle2, x01, x02, n_paths
    [truncation NAME]  ladder, n_paths, optional coefficients / obstacle / x0 overrides
    [uniqueness NAME]  deltas, n_paths, optional coefficients / obstacle / x0 overrides

Inline coefficient specs read ``family: key=value, key=value``; inline obstacles
read ``constant -1`` or ``ito: s0=-1, g_S=0.3``. Unknown sections and keys are
errors carrying the line number.
"""

from __future__ import annotations

import configparser
import hashlib
import inspect
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .coefficients import FAMILIES, CoefficientSet, ObstacleSpec, make_coefficients
from .errors import ConfigError, RGSDEError
from .expectation import EVENTS, FUNCTIONALS, PathFunctional, Problem
from .harness import PROFILES, ComparisonCase
from .scenario import TimeGrid, VolatilitySpec, bang_bang_family, constant_controls
from .solver import SolverConfig, validate_assumptions

__all__ = ["RunConfig", "Suite", "load_config", "parse_config"]

FORMAT_VERSION = 1

_SCHEMA = {
    "run": {"master_seed": int, "n_paths": int, "jobs": int, "out_dir": str},
    "volatility": {"sigma_lo_sq": float, "sigma_hi_sq": float},
    "grid": {"horizon": float, "n_steps": int},
    "obstacle": {"mode": str, "value": float, "s0": float, "f_S": float, "h_S": float, "g_S": float, "cap": float},
    "solver": {"x0": float, "picard_tol": float, "max_picard": int, "oracle_check": bool},
    "controls": {"family": str, "n_blocks": int},
    "expect": {"functional": str, "path": str, "power": float, "c": float, "event": str, "level": float},
    "refine": {"levels": int, "control": int, "n_paths": int},
}
_PROBLEM_OVERRIDES = {"coefficients": str, "obstacle": str, "x0": float}
_SUITES = {
    "comparison": {"profile": str, "coefficients1": str, "coefficients2": str, "obstacle1": str,
                   "obstacle2": str, "x01": float, "x02": float, "n_paths": int},
    "truncation": {"ladder": str, "n_paths": int, **_PROBLEM_OVERRIDES},
    "uniqueness": {"deltas": str, "n_paths": int, **_PROBLEM_OVERRIDES},
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^([^\s=#;][^=]*?)\s*=")


@dataclass
class Suite:
    kind: str
    name: str
    n_paths: int
    case: ComparisonCase | None = None
    problem: Problem | None = None
    values: list = field(default_factory=list)  # ladder or deltas


@dataclass
class RunConfig:
    vol: VolatilitySpec
    grid: TimeGrid
    coeffs: CoefficientSet
    obstacle: ObstacleSpec
    solver: SolverConfig
    x0: float
    controls: list
    n_paths: int
    master_seed: int
    jobs: int
    out_dir: Path
    functional: PathFunctional
    refine_levels: int
    refine_control: int
    refine_n_paths: int
    suites: list
    raw: dict

    @property
    def problem(self) -> Problem:
        return Problem(self.coeffs, self.obstacle, self.x0, self.grid, self.vol, self.solver)

    def with_overrides(self, seed=None, out=None, jobs=None) -> "RunConfig":
        if seed is not None:
            self.master_seed = int(seed)
        if out is not None:
            self.out_dir = Path(out)
        if jobs is not None:
            if int(jobs) < 1:
                raise ConfigError("--jobs must be at least 1")
            self.jobs = int(jobs)
        return self

    def scenario_manifest(self) -> dict:
        """Everything the cached scenario files depend on."""
        return {
            "format_version": FORMAT_VERSION,
            "volatility": [self.vol.sigma_lo_sq, self.vol.sigma_hi_sq],
            "grid": [self.grid.horizon, self.grid.n_steps],
            "controls": [c.label for c in self.controls],
            "control_levels": [[float(v) for v in c.theta_sq] for c in self.controls],
            "master_seed": self.master_seed,
            "n_paths": self.n_paths,
        }

    def manifest_hash(self) -> str:
        blob = json.dumps(self.scenario_manifest(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class _Lines:
    """Line numbers of sections and keys in the raw text."""

    def __init__(self, text):
        self.sections, self.keys = {}, {}
        sec = None
        for n, line in enumerate(text.splitlines(), 1):
            m = _SECTION_RE.match(line)
            if m:
                sec = m.group(1).strip()
                self.sections.setdefault(sec, n)
                continue
            m = _KEY_RE.match(line)
            if m and sec is not None:
                self.keys.setdefault((sec, m.group(1).strip()), n)

    def of(self, section, key=None):
        if key is not None and (section, key) in self.keys:
            return self.keys[(section, key)]
        return self.sections.get(section)


def _convert(kind, raw, where, line):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError(raw)
            return int(v)
        if kind is float:
            v = float(raw)
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError(raw)
            return v
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.__name__}", line) from None


def _kv_list(text, where, line):
    out = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"{where}: expected key=value, got {part!r}", line)
        k, v = (s.strip() for s in part.split("=", 1))
        out[k] = _convert(float, v, f"{where}.{k}", line)
    return out


def _inline_coefficients(text, p, where, line):
    family, _, rest = text.partition(":")
    family = family.strip()
    if family not in FAMILIES:
        raise ConfigError(f"{where}: unknown coefficient family {family!r}", line)
    try:
        return make_coefficients(family, _kv_list(rest, where, line), p)
    except RGSDEError as e:
        raise ConfigError(f"{where}: {e}", line) from None


def _inline_obstacle(text, where, line):
    head, _, rest = text.replace(":", " ", 1).strip().partition(" ")
    if head == "constant":
        return ObstacleSpec.constant(_convert(float, rest or "0", where, line))
    if head == "ito":
        kw = _kv_list(rest, where, line)
        unknown = set(kw) - {"s0", "f_S", "h_S", "g_S"}
        if unknown:
            raise ConfigError(f"{where}: unknown obstacle keys {sorted(unknown)}", line)
        return ObstacleSpec.ito(**kw)
    raise ConfigError(f"{where}: obstacle must be 'constant VALUE' or 'ito: ...'", line)


def _split_floats(text, where, line):
    return [_convert(float, s, where, line) for s in text.split(",") if s.strip()]


def parse_config(text: str, source="<config>") -> RunConfig:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(source))
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError(f"syntax error: {e.errors[0][1].strip() if e.errors else e}", line) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(e.message.split(":")[-1].strip() if hasattr(e, "message") else str(e), e.lineno) from None
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    lines = _Lines(text)

    vals: dict = {}
    suite_raw = []
    for sec in parser.sections():
        head, _, name = sec.partition(" ")
        if sec == "coefficients":
            continue
        if head in _SUITES and name.strip():
            schema = _SUITES[head]
            suite_raw.append((head, name.strip(), sec))
        elif sec in _SCHEMA:
            schema = _SCHEMA[sec]
        else:
            raise ConfigError(f"unknown section [{sec}]", lines.of(sec))
        got = {}
        for key, raw in parser.items(sec):
            if key not in schema:
                raise ConfigError(f"[{sec}]: unknown key {key!r}", lines.of(sec, key))
            got[key] = _convert(schema[key], raw, f"[{sec}] {key}", lines.of(sec, key))
        vals[sec] = got

    def get(sec, key, default):
        return vals.get(sec, {}).get(key, default)

    def err(sec, key, msg):
        return ConfigError(f"[{sec}] {key}: {msg}", lines.of(sec, key))

    try:
        vol = VolatilitySpec(get("volatility", "sigma_lo_sq", 0.0), get("volatility", "sigma_hi_sq", 1.0))
    except RGSDEError as e:
        raise ConfigError(f"[volatility]: {e}", lines.of("volatility", "sigma_lo_sq")) from None
    try:
        grid = TimeGrid(get("grid", "horizon", 1.0), get("grid", "n_steps", 64))
    except RGSDEError as e:
        raise ConfigError(f"[grid]: {e}", lines.of("grid")) from None

    # coefficients: free-form parameters validated against the family
    craw = dict(parser.items("coefficients")) if parser.has_section("coefficients") else {}
    family = craw.pop("family", "zero").strip()
    p = _convert(float, craw.pop("p", "3"), "[coefficients] p", lines.of("coefficients", "p"))
    if family not in FAMILIES:
        raise err("coefficients", "family", f"unknown family {family!r}; known: {sorted(FAMILIES)}")
    allowed = set(FAMILIES[family][0])
    params = {}
    for k, v in craw.items():
        if k not in allowed:
            raise err("coefficients", k, f"unknown key for family {family!r}")
        params[k] = _convert(float, v, f"[coefficients] {k}", lines.of("coefficients", k))
    try:
        coeffs = make_coefficients(family, params, p)
    except RGSDEError as e:
        raise ConfigError(f"[coefficients]: {e}", lines.of("coefficients")) from None

    mode = get("obstacle", "mode", "constant")
    if mode == "constant":
        for k in ("s0", "f_S", "h_S", "g_S"):
            if k in vals.get("obstacle", {}):
                raise err("obstacle", k, "only valid with mode = ito")
        obstacle = ObstacleSpec.constant(get("obstacle", "value", 0.0))
    elif mode == "ito":
        if "value" in vals.get("obstacle", {}):
            raise err("obstacle", "value", "only valid with mode = constant")
        obstacle = ObstacleSpec.ito(*(get("obstacle", k, 0.0) for k in ("s0", "f_S", "h_S", "g_S")))
    else:
        raise err("obstacle", "mode", f"must be constant or ito, got {mode!r}")
    if "cap" in vals.get("obstacle", {}):
        obstacle = obstacle.truncated(get("obstacle", "cap", None))

    x0 = get("solver", "x0", 0.0)
    try:
        solver = SolverConfig(p_exponent=p, picard_tol=get("solver", "picard_tol", 1e-10),
                              max_picard=get("solver", "max_picard", 200),
                              oracle_check=get("solver", "oracle_check", False))
    except RGSDEError as e:
        raise ConfigError(f"[solver]: {e}", lines.of("solver")) from None
    report = validate_assumptions(coeffs, x0, obstacle, grid)
    if not report.ok:
        bad = report.first_violation
        key = {"obstacle-violation": ("solver", "x0")}.get(bad["check"], ("coefficients", None))
        raise ConfigError(f"{bad['check']}: {bad['detail']}", lines.of(*key))

    cfam = get("controls", "family", "constant")
    try:
        if cfam == "constant":
            controls = constant_controls(grid, vol)
        elif cfam == "bang_bang":
            controls = bang_bang_family(grid, vol, get("controls", "n_blocks", 2))
        elif cfam == "both":
            controls = constant_controls(grid, vol) + bang_bang_family(grid, vol, get("controls", "n_blocks", 2))
        else:
            raise err("controls", "family", f"must be constant, bang_bang or both, got {cfam!r}")
    except ConfigError:
        raise
    except RGSDEError as e:
        raise ConfigError(f"[controls]: {e}", lines.of("controls", "n_blocks")) from None
    if not controls:
        raise err("controls", "family", "control family is empty")

    n_paths = get("run", "n_paths", 4)
    jobs = get("run", "jobs", 1)
    if n_paths < 1:
        raise err("run", "n_paths", "must be at least 1")
    if jobs < 1:
        raise err("run", "jobs", "must be at least 1")

    fname = get("expect", "functional", "terminal_value")
    fparams = {k: v for k, v in vals.get("expect", {}).items() if k != "functional"}
    try:
        if fname == "event":
            if "event" not in fparams:
                raise err("expect", "functional", "functional = event needs an 'event' key")
            ev = fparams.pop("event")
            if ev not in EVENTS:
                raise err("expect", "event", f"unknown event {ev!r}; known: {sorted(EVENTS)}")
            functional = PathFunctional.event(ev, **fparams)
        else:
            if fname not in FUNCTIONALS:
                raise err("expect", "functional", f"unknown functional {fname!r}; known: {sorted(FUNCTIONALS)}")
            functional = PathFunctional(fname, fparams)
            # surface bad parameter names now rather than mid-run
            sig = inspect.signature(FUNCTIONALS[fname])
            for k in fparams:
                if k not in sig.parameters or k == "paths":
                    raise err("expect", k, f"not a parameter of {fname!r}")
    except RGSDEError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"[expect]: {e}", lines.of("expect")) from None

    levels = get("refine", "levels", 4)
    rctl = get("refine", "control", 0)
    if levels < 2:
        raise err("refine", "levels", "need at least 2 levels")
    if not 0 <= rctl < len(controls):
        raise err("refine", "control", f"index out of range for {len(controls)} controls")
    r_paths = get("refine", "n_paths", n_paths)

    suites = []
    for kind, name, sec in suite_raw:
        v = vals[sec]
        where = f"[{sec}]"
        sp = v.get("n_paths", n_paths)
        if sp < 1:
            raise err(sec, "n_paths", "must be at least 1")
        if kind == "comparison":
            for k in ("profile", "coefficients1", "coefficients2", "obstacle1", "obstacle2"):
                if k not in v:
                    raise ConfigError(f"{where}: missing key {k!r}", lines.of(sec))
            if v["profile"] not in PROFILES:
                raise err(sec, "profile", f"unknown profile {v['profile']!r}; known: {list(PROFILES)}")
            case = ComparisonCase(
                _inline_coefficients(v["coefficients1"], p, f"{where} coefficients1", lines.of(sec, "coefficients1")),
                _inline_obstacle(v["obstacle1"], f"{where} obstacle1", lines.of(sec, "obstacle1")),
                v.get("x01", x0),
                _inline_coefficients(v["coefficients2"], p, f"{where} coefficients2", lines.of(sec, "coefficients2")),
                _inline_obstacle(v["obstacle2"], f"{where} obstacle2", lines.of(sec, "obstacle2")),
                v.get("x02", x0),
                v["profile"], True, name,
            )
            for c, o, xx, k in ((case.coeffs1, case.obstacle1, case.x01, "x01"), (case.coeffs2, case.obstacle2, case.x02, "x02")):
                rep = validate_assumptions(c, xx, o, grid)
                if not rep.ok:
                    raise err(sec, k, f"{rep.first_violation['check']}: {rep.first_violation['detail']}")
            suites.append(Suite(kind, name, sp, case=case))
        else:
            c = coeffs
            if "coefficients" in v:
                c = _inline_coefficients(v["coefficients"], p, f"{where} coefficients", lines.of(sec, "coefficients"))
            o = obstacle
            if "obstacle" in v:
                o = _inline_obstacle(v["obstacle"], f"{where} obstacle", lines.of(sec, "obstacle"))
            xx = v.get("x0", x0)
            rep = validate_assumptions(c, xx, o, grid)
            if not rep.ok:
                raise ConfigError(f"{where}: {rep.first_violation['check']}: {rep.first_violation['detail']}", lines.of(sec))
            key = "ladder" if kind == "truncation" else "deltas"
            if key not in v:
                raise ConfigError(f"{where}: missing key {key!r}", lines.of(sec))
            values = _split_floats(v[key], f"{where} {key}", lines.of(sec, key))
            if kind == "truncation" and (not values or any(b <= a for a, b in zip(values, values[1:])) or values[0] <= 0):
                raise err(sec, key, "ladder must be strictly increasing and positive")
            suites.append(Suite(kind, name, sp, problem=Problem(c, o, xx, grid, vol, solver), values=values))

    return RunConfig(
        vol, grid, coeffs, obstacle, solver, x0, controls, n_paths, get("run", "master_seed", 0), jobs,
        Path(get("run", "out_dir", "out")), functional, levels, rctl, r_paths, suites,
        {s: dict(parser.items(s)) for s in parser.sections()},
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text, path)
