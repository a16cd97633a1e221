import numpy as np
import pytest

from rgsde.errors import ConstraintViolationError, InvalidArgumentError, ResourceLimitError
from rgsde.scenario import (
    ScenarioPath,
    TimeGrid,
    VolatilityControl,
    VolatilitySpec,
    bang_bang_family,
    constant_controls,
    make_uniform_grid,
    qv_from_increments,
    read_scenario_csv,
    sample_batch,
    sample_scenario,
    scenario_seed,
    write_scenario_csv,
)


def test_uniform_grid_nodes():
    assert make_uniform_grid(1.0, 4).nodes.tolist() == [0, 0.25, 0.5, 0.75, 1.0]
    assert make_uniform_grid(1.0, 1).nodes.tolist() == [0, 1.0]
    assert make_uniform_grid(2.0, 8).dt == 0.25


@pytest.mark.parametrize("T,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -3)])
def test_uniform_grid_rejects(T, n):
    with pytest.raises(InvalidArgumentError):
        make_uniform_grid(T, n)


def test_volatility_spec_validation():
    with pytest.raises(InvalidArgumentError):
        VolatilitySpec(1.0, 0.5)
    with pytest.raises(InvalidArgumentError):
        VolatilitySpec(-0.1, 1.0)


def test_degenerate_bounds_give_deterministic_qv():
    grid = make_uniform_grid(1.0, 128)
    spec = VolatilitySpec(1.0, 1.0)
    ctl = VolatilityControl.constant(1.0, grid.n_steps)
    for seed in (0, 1, 99):
        path = sample_scenario(ctl, grid, spec, seed)
        assert np.array_equal(path.QV, grid.nodes)


def test_low_constant_control_qv_terminal():
    grid = make_uniform_grid(1.0, 64)
    spec = VolatilitySpec(0.25, 1.0)
    path = sample_scenario(constant_controls(grid, spec)[0], grid, spec, 3)
    assert path.QV[-1] == 0.25


def test_control_checks():
    grid = make_uniform_grid(1.0, 8)
    spec = VolatilitySpec(0.25, 1.0)
    with pytest.raises(InvalidArgumentError):
        sample_scenario(VolatilityControl.constant(0.5, 7), grid, spec, 0)
    with pytest.raises(ConstraintViolationError):
        sample_scenario(VolatilityControl.constant(2.0, 8), grid, spec, 0)


def test_bang_bang_enumeration():
    grid = make_uniform_grid(1.0, 4)
    spec = VolatilitySpec(0.25, 1.0)
    one = bang_bang_family(grid, spec, 1)
    assert sorted(tuple(c.theta_sq) for c in one) == [(0.25,) * 4, (1.0,) * 4]
    two = bang_bang_family(grid, spec, 2)
    assert len(two) == 4
    for c in two:
        assert c.theta_sq[0] == c.theta_sq[1] and c.theta_sq[2] == c.theta_sq[3]
    flat = bang_bang_family(grid, VolatilitySpec(0.5, 0.5), 2)
    assert all(np.array_equal(c.theta_sq, flat[0].theta_sq) for c in flat)


def test_bang_bang_limits():
    grid = make_uniform_grid(1.0, 16)
    spec = VolatilitySpec(0.25, 1.0)
    with pytest.raises(InvalidArgumentError):
        bang_bang_family(make_uniform_grid(1.0, 2), spec, 3)
    with pytest.raises(ResourceLimitError):
        bang_bang_family(grid, spec, 13, max_controls=4096)


def test_qv_from_increments():
    grid = make_uniform_grid(1.0, 2)
    zero = ScenarioPath(np.zeros(2), np.zeros(2), np.zeros(3), np.zeros(3), "", 0, grid)
    assert qv_from_increments(zero).tolist() == [0, 0, 0]
    c = 0.3
    p = ScenarioPath(np.array([c, c]), np.zeros(2), np.array([0, c, 2 * c]), np.zeros(3), "", 0, grid)
    assert qv_from_increments(p).tolist() == [0, c * c, 2 * c * c]


def test_determinism_and_common_random_numbers():
    grid = make_uniform_grid(1.0, 32)
    spec = VolatilitySpec(0.25, 1.0)
    lo, hi = constant_controls(grid, spec)
    a = sample_scenario(hi, grid, spec, 7)
    b = sample_scenario(hi, grid, spec, 7)
    assert a.dB.tobytes() == b.dB.tobytes()
    c = sample_scenario(lo, grid, spec, 7)
    # same normals, scaled by the volatility
    assert np.allclose(c.dB * 2.0, a.dB, rtol=0, atol=1e-15)


def test_batch_rows_match_single_scenarios():
    grid = make_uniform_grid(1.0, 16)
    spec = VolatilitySpec(0.25, 1.0)
    ctl = constant_controls(grid, spec)[1]
    batch = sample_batch(ctl, grid, spec, 5, [0, 3, 4])
    for row, j in enumerate([0, 3, 4]):
        single = sample_scenario(ctl, grid, spec, scenario_seed(5, j))
        assert np.array_equal(batch.B[row], single.B)
    assert np.array_equal(sample_batch(ctl, grid, spec, 5, [3]).B[0], batch.B[1])


def test_csv_round_trip(tmp_path):
    grid = make_uniform_grid(1.0, 16)
    spec = VolatilitySpec(0.25, 1.0)
    path = sample_scenario(bang_bang_family(grid, spec, 2)[1], grid, spec, 11)
    f = tmp_path / "s.csv"
    write_scenario_csv(path, f)
    assert f.read_text().splitlines()[0] == "t,B,QV,theta_sq"
    back = read_scenario_csv(f, path.control_label)
    assert np.array_equal(back.B, path.B)
    assert np.array_equal(back.QV, path.QV)
    assert np.array_equal(back.theta_sq, path.theta_sq)
    assert back.grid == TimeGrid(1.0, 16)
