import json
import math

import numpy as np
import pytest

from rgsde.coefficients import ObstacleSpec, make_coefficients
from rgsde.errors import InvalidArgumentError
from rgsde.expectation import (
    PathFunctional,
    Problem,
    capacity,
    estimate,
    register_event,
    register_functional,
    solve_control,
    solve_family,
    upper_expectation,
)
from rgsde.scenario import VolatilitySpec, bang_bang_family, constant_controls, make_uniform_grid


@pytest.fixture
def problem(grid, vol):
    c = make_coefficients("linear", {"f_a": 0.2, "f_b": -0.5, "f_c": -1.0, "g_a": 0.4, "g_b": 0.2})
    return Problem(c, ObstacleSpec.ito(-0.5, 0.0, 0.0, 0.3), 0.0, grid, vol)


@pytest.fixture
def solved(problem, controls):
    return solve_family(problem, controls, 200, 17)


def test_constant_functional(solved):
    est = estimate(PathFunctional("constant", {"c": 2.5}), solved)
    assert est.value == 2.5
    assert all(m == 2.5 and se == 0 for m, se, _ in est.per_control_means.values())


def test_terminal_B_squared_upper_expectation():
    grid = make_uniform_grid(1.0, 16)
    vol = VolatilitySpec(0.25, 1.0)
    p = Problem(make_coefficients("zero"), ObstacleSpec.constant(-1.0), 0.0, grid, vol)
    est = upper_expectation(PathFunctional("terminal_B_squared"), p, constant_controls(grid, vol), 10_000, 3)
    assert est.argmax_control == "const:hi"
    assert abs(est.value - 1.0) <= 3 * est.stderr


def test_superset_family_is_not_smaller(problem, grid, vol):
    F = PathFunctional("running_sup", {"power": 3})
    small = upper_expectation(F, problem, constant_controls(grid, vol), 100, 5)
    big = upper_expectation(F, problem, constant_controls(grid, vol) + bang_bang_family(grid, vol, 3), 100, 5)
    assert big.value >= small.value


def test_capacity_examples(problem, controls):
    assert capacity("impossible", problem, controls, 50, 1).value == 0.0
    assert capacity("certain", problem, controls, 50, 1).value == 1.0
    grid = make_uniform_grid(1.0, 8)
    vol = VolatilitySpec(0.25, 1.0)
    p = Problem(make_coefficients("zero"), ObstacleSpec.constant(-1.0), 0.0, grid, vol)
    est = capacity("B_T_positive", p, constant_controls(grid, vol), 10_000, 8)
    for m, se, _ in est.per_control_means.values():
        assert abs(m - 0.5) <= 3 * se
    # the same normals drive both controls, so the sign of B_T agrees exactly
    a, b = est.per_control_means.values()
    assert a[0] == b[0]


def test_sublinearity_homogeneity_monotonicity_exact(solved):
    F = PathFunctional("running_sup", {"power": 3})
    G = PathFunctional("terminal_K")
    eF, eG = estimate(F, solved).value, estimate(G, solved).value
    assert estimate(F + G, solved).value <= eF + eG
    for lam in (0.0, 0.5, 2.0, 8.0):
        assert estimate(lam * F, solved).value == lam * eF
    # sup |X| >= terminal value pathwise
    assert estimate(PathFunctional("terminal_value"), solved).value <= estimate(PathFunctional("running_sup"), solved).value
    with pytest.raises(InvalidArgumentError):
        -1.0 * F


def test_flatness_functional_is_zero(solved):
    assert estimate(PathFunctional("flatness"), solved).value <= 1e-12


def test_validation(problem, controls):
    with pytest.raises(InvalidArgumentError):
        solve_family(problem, [], 10, 0)
    with pytest.raises(InvalidArgumentError):
        solve_family(problem, controls, 1, 0)
    with pytest.raises(InvalidArgumentError):
        PathFunctional("nope")
    with pytest.raises(InvalidArgumentError):
        PathFunctional.event("nope")


def test_registries():
    register_functional("test_double_terminal", lambda paths: 2 * paths.X[:, -1])
    register_event("test_never", lambda paths: np.zeros(len(paths), bool))
    assert PathFunctional("test_double_terminal").name() == "test_double_terminal"
    with pytest.raises(InvalidArgumentError):
        register_functional("terminal_value", lambda p: p)


def test_jobs_do_not_change_results(problem, controls):
    a = solve_control(problem, controls[2], np.arange(37), 4, jobs=1)
    b = solve_control(problem, controls[2], np.arange(37), 4, jobs=4)
    assert a.X.tobytes() == b.X.tobytes() and a.K.tobytes() == b.K.tobytes()


def test_report_json(solved):
    est = estimate(PathFunctional("terminal_K", {"power": 3}), solved, 17)
    d = json.loads(json.dumps(est.to_dict()))
    assert set(d) == {"functional", "value", "argmax_control", "controls", "master_seed"}
    assert d["value"] == max(c["mean"] for c in d["controls"])
    assert all(c["stderr"] >= 0 and c["n_paths"] == 200 for c in d["controls"])
    assert not math.isnan(est.stderr)
