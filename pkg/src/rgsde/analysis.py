"""Analytic bounds and their empirical counterparts.

* Bihari (nonlinear Gronwall) bound ``u(t) <= v^{-1}(v(a) + int_0^t kappa)``,
  ``v(r) = int_{t0}^r ds / rho(s)``, by quadrature and root bracketing.
* Right-hand sides of the a-priori and stability estimates with a caller-supplied
  constant ``C`` (only its existence is known), plus Monte Carlo measurements of
  the left-hand sides and the smallest constant making each inequality hold.
* Estimate-level checks of the BDG-type inequalities for ``d<B>`` and ``dB``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .coefficients import ModulusSpec
from .errors import InvalidArgumentError, UnsupportedModulusError
from .expectation import PathFunctional, Problem, SolvedPaths, estimate, solve_family

__all__ = [
    "BihariSpec",
    "BoundReport",
    "bihari_bound",
    "bihari_closed_form",
    "a_priori_rhs",
    "stability_rhs",
    "fit_apriori_constant",
    "measure_apriori",
    "measure_stability",
    "fit_stability_constant",
    "bdg_check",
    "BDGReport",
    "INTEGRANDS",
]

QUAD_RTOL = 1e-13
ROOT_XTOL = 1e-12
_HI_LIMIT = 1e300


@dataclass(frozen=True, eq=False)
class BihariSpec:
    modulus: ModulusSpec
    kappa: object = 1.0  # constant or per-step array on ``grid``
    a: float = 0.0
    t0: float | None = None
    grid: object = None

    def __post_init__(self):
        if not self.a >= 0 or not math.isfinite(self.a):
            raise InvalidArgumentError(f"a must be a finite nonnegative number, got {self.a}")
        if self.t0 is not None and not self.t0 > 0:
            raise InvalidArgumentError("t0 must be positive")
        if np.ndim(self.kappa) and self.grid is None:
            raise InvalidArgumentError("a kappa path needs its grid")
        if np.any(np.asarray(self.kappa, dtype=float) < 0):
            raise InvalidArgumentError("kappa must be nonnegative")

    def kappa_integral(self, t: float) -> float:
        if np.ndim(self.kappa) == 0:
            return float(self.kappa) * t
        k = np.asarray(self.kappa, dtype=float)
        dt = self.grid.dt
        full = min(int(t // dt), k.shape[0])
        rest = t - full * dt if full < k.shape[0] else 0.0
        return float(np.sum(k[:full]) * dt + (k[full] * rest if rest > 0 else 0.0))

    @property
    def base_point(self) -> float:
        if self.t0 is not None:
            return float(self.t0)
        return min(self.a, 1.0) / 2.0


@dataclass
class BoundReport:
    bound_value: float
    method: str
    tolerance: float
    kind: str = "bihari"
    inputs: dict = field(default_factory=dict)
    fitted_constants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        b = self.bound_value
        return {
            "kind": self.kind,
            "inputs": self.inputs,
            "bound": "inf" if math.isinf(b) else b,
            "method": self.method,
            "fitted_constants": self.fitted_constants,
        }


def _v(mod: ModulusSpec, t0: float, r: float) -> float:
    """``int_{t0}^r ds / rho(s)``, integrated in ``log s`` where registry moduli are smooth."""
    if r == t0:
        return 0.0
    val, _ = integrate.quad(
        lambda u: math.exp(u) / float(mod.rho(math.exp(u))), math.log(t0), math.log(r),
        epsabs=0.0, epsrel=QUAD_RTOL, limit=500,
    )
    return val


def bihari_bound(spec: BihariSpec, t: float) -> BoundReport:
    if not t >= 0:
        raise InvalidArgumentError(f"t must be nonnegative, got {t}")
    mod = spec.modulus
    if not (mod.registry or mod.osgood_certified):
        raise UnsupportedModulusError("modulus has no integrability certificate")
    inputs = {"a": spec.a, "t": t, "modulus": mod.kind, "modulus_constant": mod.constant}
    if spec.a == 0:
        return BoundReport(0.0, "closed_form", 0.0, inputs=inputs)
    kint = spec.kappa_integral(t)
    inputs["kappa_integral"] = kint
    if kint == 0:
        return BoundReport(float(spec.a), "closed_form", 0.0, inputs=inputs)
    t0 = spec.base_point
    inputs["t0"] = t0
    target = _v(mod, t0, spec.a) + kint

    def phi(u):
        return _v(mod, t0, u) - target

    lo, hi = spec.a, spec.a
    if mod.pure:
        if spec.a >= 1:
            raise InvalidArgumentError("pure log modulus is only defined on (0, 1)")
        # v diverges at 1; approach it geometrically
        gap = 1.0 - lo
        while True:
            gap *= 0.5
            hi = 1.0 - gap
            if phi(hi) >= 0:
                break
            if gap < 1e-15:
                return BoundReport(1.0, "quadrature_bisection", ROOT_XTOL, inputs=inputs)
            lo = hi
    else:
        hi = max(2.0 * lo, lo + 1e-300)
        while phi(hi) < 0:
            lo, hi = hi, hi * 2.0
            if hi > _HI_LIMIT:
                return BoundReport(math.inf, "quadrature_bisection", ROOT_XTOL, inputs=inputs)
    u = optimize.brentq(phi, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500)
    return BoundReport(float(u), "quadrature_bisection", ROOT_XTOL, inputs=inputs)


def bihari_closed_form(spec: BihariSpec, t: float) -> float:
    """Analytic ``v^{-1}(v(a) + int kappa)`` for registry moduli; an oracle for :func:`bihari_bound`."""
    a, K = spec.a, spec.kappa_integral(t)
    mod = spec.modulus
    if a == 0:
        return 0.0
    c = mod.constant
    if mod.kind == "lipschitz":
        return a * math.exp(c * K)
    if mod.kind != "log_modulus":
        raise UnsupportedModulusError("no closed form for custom moduli")
    if mod.pure:
        return a ** math.exp(-c * K)
    d = mod.cutoff
    L = math.log(1.0 / d)
    if a < d:
        u = a ** math.exp(-c * K)
        if u <= d:
            return u
        K -= math.log(math.log(1.0 / a) / L) / c
        a = d
    # tangent region: rho(r) = c (d L + (L - 1)(r - d))
    m = L - 1.0
    return d + ((d * L + m * (a - d)) * math.exp(c * m * K) - d * L) / m


def a_priori_rhs(p, x0, beta1_pnorm, obstacle_sup_plus_p, C) -> float:
    """``C (|x0|^p + int E^|beta1|^p) + E^[sup (S^+)^p]``."""
    if not p > 2:
        raise InvalidArgumentError(f"p must exceed 2, got {p}")
    if beta1_pnorm < 0 or obstacle_sup_plus_p < 0:
        raise InvalidArgumentError("norm inputs must be nonnegative")
    if not C > 0:
        raise InvalidArgumentError("C must be positive")
    return C * (abs(x0) ** p + beta1_pnorm) + obstacle_sup_plus_p


def fit_apriori_constant(measured, p, x0, beta1_pnorm, obstacle_sup_plus_p) -> float:
    """Smallest ``C`` with ``measured <= a_priori_rhs(..., C)``."""
    base = abs(x0) ** p + beta1_pnorm
    if base <= 0:
        raise InvalidArgumentError("the a-priori bound has no C-dependent part")
    return max((measured - obstacle_sup_plus_p) / base, np.finfo(float).tiny)


def stability_rhs(p, delta_x, delta_coeff_pnorms, delta_obstacle_sup_p, beta_integral, spec: BihariSpec, C) -> BoundReport:
    """Bihari form of the stability estimate, with ``a = C(|dx|^p + sum of norms + obstacle term)``."""
    if not p > 2:
        raise InvalidArgumentError(f"p must exceed 2, got {p}")
    if not C > 0:
        raise InvalidArgumentError("C must be positive")
    norms = [float(v) for v in delta_coeff_pnorms]
    if len(norms) != 3 or min(norms) < 0 or delta_obstacle_sup_p < 0 or beta_integral < 0:
        raise InvalidArgumentError("stability inputs must be three nonnegative norms and nonnegative terms")
    a = C * (abs(delta_x) ** p + sum(norms) + delta_obstacle_sup_p)
    rep = bihari_bound(BihariSpec(spec.modulus, kappa=C * beta_integral, a=a, t0=spec.t0), 1.0)
    rep.kind = "stability"
    rep.inputs.update({"p": p, "delta_x": delta_x, "delta_coeff_pnorms": norms,
                       "delta_obstacle_sup_p": delta_obstacle_sup_p, "beta_integral": beta_integral})
    rep.fitted_constants["C"] = C
    return rep


@dataclass
class Measurement:
    value: float
    stderr: float
    terms: dict = field(default_factory=dict)


def measure_apriori(problem: Problem, controls, n_paths, master_seed, jobs=1, solved=None) -> Measurement:
    """``E^[sup |X|^p] + E^[K_T^p]`` and the matching right-hand-side terms."""
    p = problem.coeffs.p
    solved = solved or solve_family(problem, controls, n_paths, master_seed, jobs)
    sx = estimate(PathFunctional("running_sup", {"path": "X", "power": p}), solved)
    kt = estimate(PathFunctional("terminal_K", {"power": p}), solved)
    obs = estimate(PathFunctional("running_sup_positive_part", {"path": "S", "power": p}), solved)
    return Measurement(
        sx.value + kt.value,
        math.hypot(sx.stderr, kt.stderr),
        {"p": p, "x0": problem.x0, "beta1_pnorm": problem.coeffs.beta1_pnorm(problem.grid),
         "obstacle_sup_plus_p": obs.value},
    )


def measure_stability(problem1: Problem, problem2: Problem, controls, n_paths, master_seed, jobs=1) -> Measurement:
    """``E^[sup |dX|^p] + E^[sup |dK|^p]`` under common random numbers, with the data-difference terms.

    The coefficient-difference norms are evaluated along the first solution.
    """
    if problem1.grid != problem2.grid:
        raise InvalidArgumentError("problems must share a grid")
    p = problem1.coeffs.p
    s1 = solve_family(problem1, controls, n_paths, master_seed, jobs)
    s2 = solve_family(problem2, controls, n_paths, master_seed, jobs)
    dx_means, dk_means = [], []
    dnorm = np.zeros((3, problem1.grid.n_steps))
    ds = 0.0
    c1, c2 = problem1.coeffs, problem2.coeffs
    steps = np.arange(problem1.grid.n_steps)
    for a, b in zip(s1, s2):
        dx = np.max(np.abs(a.X - b.X), axis=1) ** p
        dk = np.max(np.abs(a.K - b.K), axis=1) ** p
        dx_means.append((dx.mean(), dx.std(ddof=1) / math.sqrt(len(dx))))
        dk_means.append((dk.mean(), dk.std(ddof=1) / math.sqrt(len(dk))))
        Xl, Kl = a.X[:, :-1], a.K[:, :-1]
        for n, (e1, e2) in enumerate(((c1.f, c2.f), (c1.h, c2.h), (c1.g, c2.g))):
            diff = np.abs(e1(steps, Xl, Kl) - e2(steps, Xl, Kl)) ** p * np.ones_like(Xl)
            dnorm[n] = np.maximum(dnorm[n], diff.mean(axis=0))
        ds = max(ds, float(np.mean(np.max(np.abs(a.S - b.S), axis=1) ** p)))
    ix = int(np.argmax([m for m, _ in dx_means]))
    ik = int(np.argmax([m for m, _ in dk_means]))
    value = dx_means[ix][0] + dk_means[ik][0]
    se = math.hypot(dx_means[ix][1], dk_means[ik][1])
    dt = problem1.grid.dt
    return Measurement(value, se, {
        "p": p,
        "delta_x": problem1.x0 - problem2.x0,
        "delta_coeff_pnorms": [float(np.sum(d) * dt) for d in dnorm],
        "delta_obstacle_sup_p": ds,
        "beta_integral": problem1.coeffs.modulus.beta_integral(problem1.grid),
    })


def fit_stability_constant(measured: Measurement, modulus: ModulusSpec, c_max=1e6) -> float:
    """Smallest ``C`` for which the stability bound dominates ``measured.value`` (bisection in log C)."""
    t = measured.terms
    spec = BihariSpec(modulus)

    def bound(C):
        return stability_rhs(t["p"], t["delta_x"], t["delta_coeff_pnorms"], t["delta_obstacle_sup_p"],
                             t["beta_integral"], spec, C).bound_value

    lo, hi = 1e-12, 1.0
    while bound(hi) < measured.value:
        lo, hi = hi, hi * 2
        if hi > c_max:
            return math.inf
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if bound(mid) >= measured.value:
            hi = mid
        else:
            lo = mid
        if hi / lo < 1 + 1e-10:
            break
    return hi


# BDG-type inequalities -------------------------------------------------------

INTEGRANDS = {
    "zero": lambda sp: np.zeros_like(sp.dB),
    "one": lambda sp: np.ones_like(sp.dB),
    "B": lambda sp: sp.B[:, :-1],
    "sinB": lambda sp: np.sin(sp.B[:, :-1]),
    "X": lambda sp: sp.X[:, :-1],
    "K": lambda sp: sp.K[:, :-1],
}


@dataclass
class BDGReport:
    p: float
    integrand: str
    qv_left: float
    qv_left_se: float
    qv_right: float
    qv_right_se: float
    qv_ratio: float
    qv_holds: bool
    db_left: float | None = None
    db_right: float | None = None
    db_fitted_Cp: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


def _max_mean(per_control):
    """Largest mean and its standard error over per-control sample arrays."""
    best = max(per_control, key=lambda v: v.mean())
    se = best.std(ddof=1) / math.sqrt(best.shape[0]) if best.shape[0] > 1 else 0.0
    return float(best.mean()), float(se)


def bdg_check(p, integrand, problem: Problem, controls, n_paths, master_seed, jobs=1, solved=None, n_se=3.0) -> BDGReport:
    """Estimate both sides of the BDG-type inequalities for ``eta``.

    ``d<B>``: ``E^[sup_t |int eta d<B>|^p] <= sigma_hi^{2p} T^{p-1} int E^[|eta|^p] dt``,
    judged within ``n_se`` combined standard errors.
    ``dB`` (p >= 2): the ratio ``E^[sup_t |int eta dB|^p] / E^[(int eta^2 dt)^{p/2}]`` is
    reported as a fitted constant; no universal value is asserted.
    """
    if not p >= 1:
        raise InvalidArgumentError(f"p must be at least 1, got {p}")
    name = integrand if isinstance(integrand, str) else getattr(integrand, "__name__", "custom")
    fn = INTEGRANDS[integrand] if isinstance(integrand, str) else integrand
    if isinstance(integrand, str) and integrand not in INTEGRANDS:
        raise InvalidArgumentError(f"unknown integrand {integrand!r}")
    solved = solved or solve_family(problem, controls, n_paths, master_seed, jobs)
    T, dt = problem.grid.horizon, problem.grid.dt
    scale = problem.vol.sigma_hi_sq**p * T ** (p - 1)

    lefts, rights_node, rights_path, db_l, db_r = [], [], [], [], []
    for sp in solved:
        eta = np.asarray(fn(sp), dtype=float) * np.ones_like(sp.dB)
        I = np.cumsum(eta * sp.dQV, axis=1)
        lefts.append(np.max(np.abs(I), axis=1) ** p)
        ep = np.abs(eta) ** p
        rights_node.append(ep.mean(axis=0))
        rights_path.append(scale * ep.sum(axis=1) * dt)
        if p >= 2:
            M = np.cumsum(eta * sp.dB, axis=1)
            db_l.append(np.max(np.abs(M), axis=1) ** p)
            db_r.append((np.sum(eta**2, axis=1) * dt) ** (p / 2))
    left, left_se = _max_mean(lefts)
    right = float(scale * np.sum(np.max(np.vstack(rights_node), axis=0)) * dt)
    _, right_se = _max_mean(rights_path)
    ratio = left / right if right > 0 else 0.0
    holds = left <= right + n_se * math.hypot(left_se, right_se)
    rep = BDGReport(p, name, left, left_se, right, right_se, ratio, bool(holds))
    if p >= 2:
        dl, _ = _max_mean(db_l)
        dr, _ = _max_mean(db_r)
        rep.db_left, rep.db_right = dl, dr
        rep.db_fitted_Cp = dl / dr if dr > 0 else 0.0
    return rep
