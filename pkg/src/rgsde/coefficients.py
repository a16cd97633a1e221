"""Coefficient families, moduli of continuity and obstacles.

Evaluators have the signature ``f(i, x, k)`` where ``i`` is the step index and
``x``, ``k`` are arrays (state and accumulated push). They are pure and
broadcast elementwise. Every registry family carries a growth declaration

    |f|^p + |h|^p + |g|^p <= beta1^p + beta2^p (|x|^p + |k|^p)

and a modulus declaration

    |df|^p + |dh|^p + |dg|^p <= beta * rho(|dx|^p + |dk|^p),

both derived by hand for the family and probed by ``validate_assumptions``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, UnsupportedModulusError

__all__ = [
    "ModulusSpec",
    "CoefficientSet",
    "ObstacleSpec",
    "make_coefficients",
    "truncate_coefficients",
    "FAMILIES",
    "log_lipschitz_profile",
]

Evaluator = Callable[[object, np.ndarray, np.ndarray], np.ndarray]

LOG_CUTOFF = math.exp(-2.0)


@dataclass(frozen=True)
class ModulusSpec:
    """Concave modulus ``rho`` together with the weight ``beta``.

    ``lipschitz``: ``rho(r) = L r``.
    ``log_modulus``: ``rho(r) = c r ln(1/r)`` below ``cutoff``, tangent line above.
    With ``cutoff >= 1`` the pure form is used on (0, 1) and ``rho`` is undefined
    from 1 on; its reciprocal then has a non-integrable singularity at 1, so
    Bihari bounds stay inside (0, 1).
    ``custom``: user callable; needs ``osgood_certified=True`` to be used in bounds.
    """

    kind: str = "lipschitz"
    constant: float = 1.0
    beta_weight: object = 1.0
    cutoff: float = LOG_CUTOFF
    func: Callable | None = field(default=None, compare=False)
    osgood_certified: bool = False

    def __post_init__(self):
        if self.kind not in ("lipschitz", "log_modulus", "custom"):
            raise UnsupportedModulusError(f"unknown modulus kind {self.kind!r}")
        if self.kind != "custom" and not self.constant > 0:
            raise InvalidArgumentError("modulus constant must be positive")
        if self.kind == "custom" and self.func is None:
            raise InvalidArgumentError("custom modulus needs func")
        if self.kind == "log_modulus" and not 0 < self.cutoff:
            raise InvalidArgumentError("cutoff must be positive")

    @classmethod
    def lipschitz(cls, L=1.0, beta_weight=1.0):
        return cls("lipschitz", float(L), beta_weight)

    @classmethod
    def log_modulus(cls, c=1.0, beta_weight=1.0, cutoff=LOG_CUTOFF):
        return cls("log_modulus", float(c), beta_weight, float(cutoff))

    @property
    def pure(self) -> bool:
        return self.kind == "log_modulus" and self.cutoff >= 1.0

    @property
    def registry(self) -> bool:
        return self.kind in ("lipschitz", "log_modulus")

    def rho(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "lipschitz":
            return self.constant * r
        if self.kind == "custom":
            return np.asarray(self.func(r), dtype=float)
        c, cut = self.constant, self.cutoff
        with np.errstate(divide="ignore", invalid="ignore"):
            core = c * r * np.log(1.0 / r)
            if self.pure:
                return np.where(r < 1.0, np.where(r > 0, core, 0.0), np.nan)
            tangent = c * cut * math.log(1.0 / cut) + c * (math.log(1.0 / cut) - 1.0) * (r - cut)
            return np.where(r <= cut, np.where(r > 0, core, 0.0), tangent)

    def beta(self, i):
        w = self.beta_weight
        if np.ndim(w) == 0:
            return np.full(np.shape(i), float(w)) if np.ndim(i) else float(w)
        return np.asarray(w, dtype=float)[i]

    def beta_integral(self, grid) -> float:
        w = self.beta_weight
        if np.ndim(w) == 0:
            return float(w) * grid.horizon
        return float(np.sum(np.asarray(w, dtype=float)[: grid.n_steps]) * grid.dt)


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    f: Evaluator
    h: Evaluator
    g: Evaluator
    beta1: object
    beta2: float
    modulus: ModulusSpec
    family_name: str = "custom"
    params: dict = field(default_factory=dict)
    p: float = 3.0
    k_free: tuple = (False, False, False)  # (f, h, g) declared independent of k
    bound: float | None = None  # uniform bound on |f|, |h|, |g| when known

    @property
    def g_k_independent(self) -> bool:
        return self.k_free[2]

    def beta1_at(self, i):
        b = self.beta1
        if np.ndim(b) == 0:
            return np.full(np.shape(i), float(b)) if np.ndim(i) else float(b)
        return np.asarray(b, dtype=float)[i]

    def beta1_pnorm(self, grid) -> float:
        """``int_0^T |beta1(t)|^p dt`` on the grid (left-endpoint rule)."""
        b = self.beta1
        if np.ndim(b) == 0:
            return abs(float(b)) ** self.p * grid.horizon
        vals = np.abs(np.asarray(b, dtype=float)[: grid.n_steps]) ** self.p
        return float(np.sum(vals) * grid.dt)

    def describe(self) -> dict:
        return {"family": self.family_name, "params": dict(self.params)}


def _check_params(family, params, allowed):
    unknown = set(params) - set(allowed)
    if unknown:
        raise InvalidArgumentError(f"family {family!r}: unknown parameters {sorted(unknown)}")
    out = {k: 0.0 for k in allowed}
    for k, v in params.items():
        v = float(v)
        if not math.isfinite(v):
            raise InvalidArgumentError(f"parameter {k} must be finite")
        out[k] = v
    return out


def _const(value):
    def ev(i, x, k):
        return np.full(np.broadcast(x, k).shape, value) if np.ndim(x) or np.ndim(k) else float(value)
    return ev


def _affine(a, b, c):
    def ev(i, x, k):
        return a + b * x + c * k
    return ev


def _clamped(a, b, c, M):
    def ev(i, x, k):
        return np.clip(a + b * x + c * k, -M, M)
    return ev


def _sinusoid(a, s, c, omega):
    def ev(i, x, k):
        return a + s * np.sin(omega * x) + c * k
    return ev


def log_lipschitz_profile(p):
    """Odd profile ``psi`` with modulus ``delta (ln 1/delta)^(1/p)`` near 0, linear beyond 1/e.

    It is not Lipschitz at 0 but ``|psi(x) - psi(y)|^p <= 2^p rho(|x - y|^p)``
    for the default log modulus.
    """
    q = 1.0 / p
    e1 = math.exp(-1.0)
    slope = 1.0 - q

    def psi(u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            core = a * np.log(1.0 / a) ** q
        core = np.where(a > 0, core, 0.0)
        lin = e1 + slope * (a - e1)
        return np.sign(u) * np.where(a <= e1, core, lin)

    return psi


def _log_lip(a, s, c, psi):
    def ev(i, x, k):
        return a + s * psi(x) + c * k
    return ev


def _linear_family(P, p, clamp=None):
    A = sum(abs(P[f"{n}_a"]) ** p for n in "fhg")
    Bx = sum(abs(P[f"{n}_b"]) ** p for n in "fhg")
    Ck = sum(abs(P[f"{n}_c"]) ** p for n in "fhg")
    beta1 = (3 ** (p - 1) * A) ** (1 / p)
    beta2 = (3 ** (p - 1) * max(Bx, Ck)) ** (1 / p)
    lip = 2 ** (p - 1) * sum(max(abs(P[f"{n}_b"]) ** p, abs(P[f"{n}_c"]) ** p) for n in "fhg")
    if clamp is None:
        evs = [_affine(P[f"{n}_a"], P[f"{n}_b"], P[f"{n}_c"]) for n in "fhg"]
        bound = None
        if Bx == 0 and Ck == 0:
            bound = max(abs(P[f"{n}_a"]) for n in "fhg")
    else:
        evs = [_clamped(P[f"{n}_a"], P[f"{n}_b"], P[f"{n}_c"], clamp) for n in "fhg"]
        bound = clamp
    k_free = tuple(P[f"{n}_c"] == 0 for n in "fhg")
    return evs, beta1, beta2, ModulusSpec.lipschitz(1.0, lip), k_free, bound


def _build_linear(P, p):
    return _linear_family(P, p)


def _build_clamped(P, p):
    M = P.pop("M")
    if not M > 0:
        raise InvalidArgumentError("clamped_linear needs M > 0")
    return _linear_family(P, p, clamp=M)


def _build_constant(P, p):
    vals = [P["f_a"], P["h_a"], P["g_a"]]
    beta1 = sum(abs(v) ** p for v in vals) ** (1 / p)
    return [_const(v) for v in vals], beta1, 0.0, ModulusSpec.lipschitz(1.0, 0.0), (True,) * 3, max(map(abs, vals))


def _build_sinusoidal(P, p):
    om = P["omega"]
    evs = [
        _sinusoid(P["f_a"], P["f_s"], P["f_c"], om),
        _sinusoid(P["h_a"], P["h_s"], P["h_c"], om),
        _sinusoid(P["g_a"], P["g_s"], 0.0, om),
    ]
    cs = [P["f_c"], P["h_c"], 0.0]
    beta1 = (2 ** (p - 1) * sum((abs(P[f"{n}_a"]) + abs(P[f"{n}_s"])) ** p for n in "fhg")) ** (1 / p)
    beta2 = (2 ** (p - 1) * sum(abs(c) ** p for c in cs)) ** (1 / p)
    lip = 2 ** (p - 1) * sum(max((abs(P[f"{n}_s"]) * abs(om)) ** p, abs(c) ** p) for n, c in zip("fhg", cs))
    bound = None
    if all(c == 0 for c in cs):
        bound = max(abs(P[f"{n}_a"]) + abs(P[f"{n}_s"]) for n in "fhg")
    k_free = (cs[0] == 0, cs[1] == 0, True)
    return evs, beta1, beta2, ModulusSpec.lipschitz(1.0, lip), k_free, bound


def _build_log_lipschitz(P, p):
    psi = log_lipschitz_profile(p)
    cs = [P["f_c"], P["h_c"], 0.0]
    evs = [
        _log_lip(P["f_a"], P["f_s"], P["f_c"], psi),
        _log_lip(P["h_a"], P["h_s"], P["h_c"], psi),
        _log_lip(P["g_a"], P["g_s"], 0.0, psi),
    ]
    e1 = math.exp(-1.0)
    A = sum((abs(P[f"{n}_a"]) + abs(P[f"{n}_s"]) * e1) ** p for n in "fhg")
    Sx = sum(abs(P[f"{n}_s"]) ** p for n in "fhg")
    Ck = sum(abs(c) ** p for c in cs)
    beta1 = (3 ** (p - 1) * A) ** (1 / p)
    beta2 = (3 ** (p - 1) * max(Sx, Ck)) ** (1 / p)
    weight = 2**p * sum(max(2**p * abs(P[f"{n}_s"]) ** p, abs(c) ** p) for n, c in zip("fhg", cs))
    k_free = (cs[0] == 0, cs[1] == 0, True)
    return evs, beta1, beta2, ModulusSpec.log_modulus(1.0, weight), k_free, None


_LIN = [f"{n}_{c}" for n in "fhg" for c in "abc"]
_SIN = ["f_a", "f_s", "f_c", "h_a", "h_s", "h_c", "g_a", "g_s"]

FAMILIES = {
    "zero": ([], lambda P, p: _build_constant({"f_a": 0.0, "h_a": 0.0, "g_a": 0.0}, p)),
    "constant": (["f_a", "h_a", "g_a"], _build_constant),
    "linear": (_LIN, _build_linear),
    "clamped_linear": (_LIN + ["M"], _build_clamped),
    "sinusoidal": (_SIN + ["omega"], _build_sinusoidal),
    "log_lipschitz": (_SIN, _build_log_lipschitz),
}


def make_coefficients(family: str, params: dict | None = None, p: float = 3.0) -> CoefficientSet:
    """Build a registry family.

    >>> c = make_coefficients("linear", {"f_a": -1.0, "f_c": -1.0})
    >>> float(c.f(0, 0.0, 2.0))
    -3.0
    """
    if family not in FAMILIES:
        raise InvalidArgumentError(f"unknown coefficient family {family!r}; known: {sorted(FAMILIES)}")
    if not p > 2:
        raise InvalidArgumentError(f"p must exceed 2, got {p}")
    allowed, build = FAMILIES[family]
    params = dict(params or {})
    P = _check_params(family, params, allowed)
    if family == "sinusoidal" and "omega" not in params:
        P["omega"] = 1.0
    if family == "clamped_linear" and "M" not in params:
        raise InvalidArgumentError("clamped_linear needs M")
    evs, beta1, beta2, modulus, k_free, bound = build(dict(P), p)
    return CoefficientSet(
        *evs, beta1=beta1, beta2=beta2, modulus=modulus, family_name=family,
        params={k: v for k, v in P.items() if k in params or k == "omega"}, p=p,
        k_free=tuple(bool(b) for b in k_free), bound=bound,
    )


def _clip(ev, N):
    def clipped(i, x, k):
        return np.clip(ev(i, x, k), -N, N)
    return clipped


def truncate_coefficients(coeffs: CoefficientSet, N: float) -> CoefficientSet:
    """Clamp every evaluator to ``[-N, N]``.

    Clamping is 1-Lipschitz and order preserving, so the modulus and monotonicity
    declarations carry over. The growth path becomes ``min(beta1, N 3^(1/p))``.
    """
    if not N > 0:
        raise InvalidArgumentError(f"truncation level must be positive, got {N}")
    N = float(N)
    cap = N * 3 ** (1 / coeffs.p)
    b1 = coeffs.beta1
    beta1 = min(float(b1), cap) if np.ndim(b1) == 0 else np.minimum(np.asarray(b1, dtype=float), cap)
    bound = N if coeffs.bound is None else min(coeffs.bound, N)
    return replace(
        coeffs,
        f=_clip(coeffs.f, N), h=_clip(coeffs.h, N), g=_clip(coeffs.g, N),
        beta1=beta1, bound=bound, family_name=f"{coeffs.family_name}|N={N:g}",
    )


@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    """Lower barrier S.

    ``grid_path``: fixed values (scalar for a constant barrier).
    ``ito``: ``S = s0 + f_S t + h_S <B> + g_S B`` built per scenario.
    ``cap`` applies ``min(S, cap)``.
    """

    mode: str = "grid_path"
    values: object = 0.0
    s0: float = 0.0
    f_S: float = 0.0
    h_S: float = 0.0
    g_S: float = 0.0
    cap: float | None = None

    def __post_init__(self):
        if self.mode not in ("grid_path", "ito"):
            raise InvalidArgumentError(f"unknown obstacle mode {self.mode!r}")

    @classmethod
    def constant(cls, value: float) -> "ObstacleSpec":
        return cls("grid_path", float(value))

    @classmethod
    def ito(cls, s0=0.0, f_S=0.0, h_S=0.0, g_S=0.0) -> "ObstacleSpec":
        return cls("ito", 0.0, float(s0), float(f_S), float(h_S), float(g_S))

    def truncated(self, N: float) -> "ObstacleSpec":
        cap = float(N) if self.cap is None else min(self.cap, float(N))
        return replace(self, cap=cap)

    @property
    def initial(self) -> float:
        if self.mode == "ito":
            s = self.s0
        else:
            v = self.values
            s = float(v) if np.ndim(v) == 0 else float(np.asarray(v, dtype=float)[0])
        return s if self.cap is None else min(s, self.cap)

    @property
    def is_constant(self) -> bool:
        return self.mode == "grid_path" and np.ndim(self.values) == 0

    def path(self, scen) -> np.ndarray:
        """Obstacle values on the nodes of a scenario or batch (same shape as ``scen.B``)."""
        shape = np.shape(scen.B)
        if self.mode == "ito":
            S = self.s0 + self.f_S * scen.grid.nodes + self.h_S * scen.QV + self.g_S * scen.B
        elif np.ndim(self.values) == 0:
            S = np.full(shape, float(self.values))
        else:
            v = np.asarray(self.values, dtype=float)
            if v.shape[-1] != shape[-1]:
                raise InvalidArgumentError(f"obstacle has {v.shape[-1]} nodes, scenario has {shape[-1]}")
            S = np.broadcast_to(v, shape).copy()
        if self.cap is not None:
            S = np.minimum(S, self.cap)
        return S

    def upper_bound(self, horizon: float):
        """Deterministic upper bound of S over ``[0, horizon]``, or None when S is unbounded above."""
        if self.cap is not None:
            return self.cap
        if self.mode == "grid_path":
            return float(np.max(self.values))
        if self.h_S == 0 and self.g_S == 0:
            return self.s0 + max(self.f_S, 0.0) * horizon
        return None

    def describe(self) -> dict:
        if self.mode == "ito":
            d = {"mode": "ito", "s0": self.s0, "f_S": self.f_S, "h_S": self.h_S, "g_S": self.g_S}
        else:
            v = self.values
            d = {"mode": "grid_path", "values": float(v) if np.ndim(v) == 0 else np.asarray(v).tolist()}
        if self.cap is not None:
            d["cap"] = self.cap
        return d
