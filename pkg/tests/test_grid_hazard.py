import numpy as np
import pytest

from spatialsurv.errors import InvalidArgumentError, OutOfRangeError
from spatialsurv.model import TimeGrid, build_time_grid, piecewise_cum_hazard


def test_build_time_grid_equal_spacing():
    grid = build_time_grid(10.0, 5)
    assert grid.k == 5
    np.testing.assert_allclose(grid.knots, np.linspace(0.0, 10.0, 6))
    np.testing.assert_allclose(grid.deltas, np.full(5, 2.0))


def test_build_time_grid_rejects_bad_inputs():
    with pytest.raises(InvalidArgumentError):
        build_time_grid(0.0, 5)
    with pytest.raises(InvalidArgumentError):
        build_time_grid(-1.0, 5)
    with pytest.raises(InvalidArgumentError):
        build_time_grid(10.0, 0)


def test_time_grid_validates_knots():
    with pytest.raises(InvalidArgumentError):
        TimeGrid(np.array([1.0, 2.0]))  # must start at 0
    with pytest.raises(InvalidArgumentError):
        TimeGrid(np.array([0.0, 1.0, 1.0]))  # not strictly increasing
    with pytest.raises(InvalidArgumentError):
        TimeGrid(np.array([0.0]))


def test_interval_membership_right_closed():
    # intervals are (s_l, s_{l+1}]: a time on a knot belongs to the interval
    # ending there, and the final knot itself is a valid time
    grid = build_time_grid(4.0, 4)
    idx = grid.interval_index([0.5, 1.0, 1.5, 4.0])
    np.testing.assert_array_equal(idx, [0, 0, 1, 3])


def test_interval_index_rejects_out_of_range():
    grid = build_time_grid(4.0, 4)
    with pytest.raises(InvalidArgumentError):
        grid.interval_index([0.0])
    with pytest.raises(InvalidArgumentError):
        grid.interval_index([-1.0])
    with pytest.raises(OutOfRangeError):
        grid.interval_index([4.0 + 1e-9])


def test_exposures_hand_case():
    grid = build_time_grid(4.0, 4)
    expo = grid.exposures([2.5])
    np.testing.assert_allclose(expo[0], [1.0, 1.0, 0.5, 0.0])


def test_exposures_sum_to_time():
    grid = build_time_grid(7.3, 6)
    rng = np.random.default_rng(0)
    times = rng.uniform(1e-6, 7.3, size=50)
    expo = grid.exposures(times)
    np.testing.assert_allclose(expo.sum(axis=1), times, rtol=1e-12)
    assert np.all(expo >= 0)


def test_piecewise_cum_hazard_unit_rates():
    grid = build_time_grid(4.0, 4)
    for t in (0.0, 0.7, 2.0, 4.0):
        assert piecewise_cum_hazard(grid, np.ones(4), t) == pytest.approx(t)


def test_piecewise_cum_hazard_hand_case():
    grid = build_time_grid(4.0, 4)
    rates = np.array([2.0, 3.0, 5.0, 7.0])
    # 2*1 + 3*1 + 5*0.5
    assert piecewise_cum_hazard(grid, rates, 2.5) == pytest.approx(7.5)


def test_piecewise_cum_hazard_monotone_in_t():
    grid = build_time_grid(5.0, 5)
    rng = np.random.default_rng(1)
    rates = rng.gamma(2.0, 1.0, size=5) + 0.1
    ts = np.sort(rng.uniform(0, 5, size=30))
    vals = [piecewise_cum_hazard(grid, rates, t) for t in ts]
    assert np.all(np.diff(vals) >= 0)


def test_piecewise_cum_hazard_validates():
    grid = build_time_grid(4.0, 4)
    with pytest.raises(InvalidArgumentError):
        piecewise_cum_hazard(grid, np.ones(3), 1.0)
    with pytest.raises(InvalidArgumentError):
        piecewise_cum_hazard(grid, np.array([1.0, -1.0, 1.0, 1.0]), 1.0)
    with pytest.raises(OutOfRangeError):
        piecewise_cum_hazard(grid, np.ones(4), 4.5)
