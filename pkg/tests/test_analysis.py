import itertools
import math

import numpy as np
import pytest

from rgsde.analysis import (
    BihariSpec,
    a_priori_rhs,
    bdg_check,
    bihari_bound,
    bihari_closed_form,
    fit_apriori_constant,
    stability_rhs,
)
from rgsde.coefficients import ModulusSpec, ObstacleSpec, make_coefficients
from rgsde.errors import InvalidArgumentError, UnsupportedModulusError
from rgsde.expectation import Problem
from rgsde.scenario import VolatilityControl, VolatilitySpec, constant_controls, make_uniform_grid

LIP = ModulusSpec.lipschitz(1.0)
LOG = ModulusSpec.log_modulus(1.0, cutoff=1.0)
LOG_EXT = ModulusSpec.log_modulus(1.0)


def test_zero_initial_gives_zero():
    for m in (LIP, LOG, LOG_EXT):
        r = bihari_bound(BihariSpec(m, 3.0, 0.0), 1.0)
        assert r.bound_value == 0.0 and r.method == "closed_form"


def test_gronwall_closed_form():
    for a, k, t in itertools.product([0.01, 0.3, 1.0, 4.0], [0.1, 1.0, 2.5], [0.2, 1.0]):
        r = bihari_bound(BihariSpec(LIP, k, a), t)
        assert abs(r.bound_value - a * math.exp(k * t)) <= 1e-8
        assert r.method == "quadrature_bisection"


def test_log_modulus_example():
    r = bihari_bound(BihariSpec(LOG, math.log(2), math.exp(-1)), 1.0)
    assert abs(r.bound_value - math.exp(-0.5)) <= 1e-6


def test_extended_log_modulus_matches_piecewise_closed_form():
    for a, k, t in itertools.product([0.001, 0.05, 0.2, 0.9, 3.0], [0.5, 2.0, 6.0], [0.3, 1.0]):
        s = BihariSpec(LOG_EXT, k, a)
        assert bihari_bound(s, t).bound_value == pytest.approx(bihari_closed_form(s, t), rel=1e-9, abs=1e-10)


def test_t0_invariance():
    for m, a in ((LIP, 0.7), (LOG, 0.2), (LOG_EXT, 0.4)):
        vals = [bihari_bound(BihariSpec(m, 1.3, a, t0=t0), 1.0).bound_value for t0 in (0.1, 0.5, 1.0 if m is not LOG else 0.9)]
        assert max(vals) - min(vals) <= 1e-8


def test_monotone_in_a_and_kappa(rng):
    for _ in range(30):
        a1, a2 = np.sort(rng.uniform(0.001, 0.9, 2))
        k1, k2 = np.sort(rng.uniform(0.0, 3.0, 2))
        for m in (LIP, LOG, LOG_EXT):
            lo = bihari_bound(BihariSpec(m, k1, a1), 1.0).bound_value
            assert bihari_bound(BihariSpec(m, k1, a2), 1.0).bound_value >= lo
            assert bihari_bound(BihariSpec(m, k2, a1), 1.0).bound_value >= lo


def test_kappa_path_integral():
    grid = make_uniform_grid(1.0, 10)
    s = BihariSpec(LIP, np.linspace(0, 1.8, 10), 1.0, grid=grid)
    assert bihari_bound(s, 1.0).bound_value == pytest.approx(math.exp(0.9), rel=1e-10)


def test_blow_up_returns_inf():
    r = bihari_bound(BihariSpec(LIP, 1000.0, 1.0), 1.0)
    assert math.isinf(r.bound_value)
    assert r.to_dict()["bound"] == "inf"


def test_unsupported_modulus():
    m = ModulusSpec("custom", 1.0, func=lambda r: r**2)
    with pytest.raises(UnsupportedModulusError):
        bihari_bound(BihariSpec(m, 1.0, 0.5), 1.0)
    with pytest.raises(InvalidArgumentError):
        bihari_bound(BihariSpec(LIP, 1.0, 0.5), -1.0)


def test_a_priori_rhs():
    assert a_priori_rhs(3, 0.0, 0.0, 0.0, 5.0) == 0.0
    a = a_priori_rhs(3, 1.5, 0.0, 0.0, 2.0)
    assert a_priori_rhs(3, 3.0, 0.0, 0.0, 2.0) == 8 * a
    with pytest.raises(InvalidArgumentError):
        a_priori_rhs(2, 1.0, 0.0, 0.0, 1.0)
    C = fit_apriori_constant(10.0, 3, 1.0, 1.0, 2.0)
    assert a_priori_rhs(3, 1.0, 1.0, 2.0, C) == pytest.approx(10.0)


def test_stability_rhs():
    assert stability_rhs(3, 0.0, (0, 0, 0), 0.0, 2.0, BihariSpec(LIP), 1.5).bound_value == 0.0
    r = stability_rhs(3, 0.1, (0.001, 0, 0), 0.0, 2.0, BihariSpec(LIP), 1.5)
    a = 1.5 * (0.1**3 + 0.001)
    assert r.bound_value == pytest.approx(a * math.exp(1.5 * 2.0), rel=1e-10)
    d = r.to_dict()
    assert d["kind"] == "stability" and d["fitted_constants"] == {"C": 1.5}


def _zero_problem(n=64, lo=1.0, hi=1.0):
    grid = make_uniform_grid(1.0, n)
    return Problem(make_coefficients("zero"), ObstacleSpec.constant(-1.0), 0.0, grid, VolatilitySpec(lo, hi))


def test_bdg_zero_and_equality_witness():
    p = _zero_problem()
    ctl = [VolatilityControl.constant(1.0, 64)]
    z = bdg_check(2, "zero", p, ctl, 10, 0)
    assert z.qv_left == 0 and z.qv_right == 0 and z.qv_ratio == 0
    for power in (2, 3):
        one = bdg_check(power, "one", p, ctl, 10, 0)
        assert one.qv_left == 1.0 and one.qv_right == 1.0 and one.qv_ratio == 1.0


def test_bdg_holds_for_B():
    grid = make_uniform_grid(1.0, 64)
    vol = VolatilitySpec(0.25, 1.0)
    p = Problem(make_coefficients("zero"), ObstacleSpec.constant(-1.0), 0.0, grid, vol)
    rep = bdg_check(2, "B", p, constant_controls(grid, vol), 10_000, 1)
    assert rep.qv_holds
    assert rep.db_fitted_Cp is not None and rep.db_fitted_Cp > 0


def test_bdg_range():
    with pytest.raises(InvalidArgumentError):
        bdg_check(0.5, "one", _zero_problem(), [VolatilityControl.constant(1.0, 64)], 4, 0)
    rep = bdg_check(1.5, "one", _zero_problem(), [VolatilityControl.constant(1.0, 64)], 4, 0)
    assert rep.db_fitted_Cp is None
