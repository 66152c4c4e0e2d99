import numpy as np
import pytest

from sdeoperator.utils.errors import InvalidArgumentError, ValidationError
from sdeoperator.utils.paths import (BrownianPath, PathDataset, SensorSet, SolutionPath,
                                     derive_seed, make_generator, make_grid, rescale_grid,
                                     sample_brownian, sample_brownian_at_sensors,
                                     sample_brownian_batch, sample_sensor_block)


def test_grid_times_and_horizon():
    """Test grid points are derived from the index, not accumulated."""
    grid = make_grid(0.0, 0.1, 31)
    assert grid.T == pytest.approx(3.0)
    assert grid.times[0] == 0.0
    assert grid.times[17] == 17 * 0.1
    assert grid.time(30) == grid.times[-1]


@pytest.mark.parametrize("t0,h,M", [(0.0, 0.0, 5), (0.0, -0.1, 5), (0.0, 0.1, 1),
                                    (float("nan"), 0.1, 5)])
def test_invalid_grid(t0, h, M):
    with pytest.raises(InvalidArgumentError):
        make_grid(t0, h, M)


def test_rescale_grid():
    grid = make_grid(0.0, 0.01, 31)
    assert rescale_grid(grid, 1.0) is grid
    wide = rescale_grid(grid, 100.0)
    assert wide.M == 31 and wide.h == pytest.approx(1.0)
    assert wide.T == pytest.approx(30.0)
    with pytest.raises(InvalidArgumentError):
        rescale_grid(grid, 0.0)


def test_seed_bounds():
    with pytest.raises(InvalidArgumentError):
        make_generator(-1)
    with pytest.raises(InvalidArgumentError):
        make_generator(2 ** 64)
    make_generator(2 ** 64 - 1)


def test_derive_seed_is_stable_and_distinct():
    seeds = [derive_seed(7, i) for i in range(100)]
    assert seeds == [derive_seed(7, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert derive_seed(7, 0) != derive_seed(8, 0)


def test_derive_seed_has_no_collisions():
    seeds = {derive_seed(base, i) for base in (0, 1, 2 ** 40) for i in range(10000)}
    assert len(seeds) == 30000


def test_derive_seed_separates_word_overflow():
    """Test indices past 2**32 do not alias a larger base seed."""
    assert derive_seed(5, 7) != derive_seed(5 + 7 * 2 ** 32, 0)
    assert derive_seed(0, 2 ** 32) != derive_seed(1, 0)
    assert derive_seed(0, 2 ** 32) != derive_seed(0, 0)
    with pytest.raises(InvalidArgumentError):
        derive_seed(2 ** 64, 0)
    with pytest.raises(InvalidArgumentError):
        derive_seed(0, -1)


def test_brownian_path_reproducible():
    """Test identical (grid, seed) pairs give bit-identical paths."""
    grid = make_grid(0.0, 0.01, 101)
    first = sample_brownian(grid, 42)
    second = sample_brownian(grid, 42)
    assert np.array_equal(first.values, second.values)
    assert first == second
    assert first.values[0] == 0.0
    assert not np.array_equal(first.values, sample_brownian(grid, 43).values)


def test_brownian_increment_statistics():
    grid = make_grid(0.0, 0.01, 2001)
    increments = sample_brownian(grid, 5).increments
    assert increments.mean() == pytest.approx(0.0, abs=4 * 0.1 / np.sqrt(2000))
    assert increments.var() == pytest.approx(0.01, rel=0.1)


def test_brownian_marginal_variance_across_paths():
    """Test Var(B_tk) = t_k - t0 at every grid point over 10,000 paths."""
    grid = make_grid(0.0, 0.1, 11)
    matrix = np.array([b.values for b in sample_brownian_batch(grid, 3, 10000)])
    np.testing.assert_allclose(matrix[:, 1:].var(axis=0), grid.times[1:], rtol=0.05)
    terminal = matrix[:, -1]
    assert abs(terminal.mean()) < 4 * np.sqrt(1.0 / 10000)


def test_terminal_value_over_seeds():
    grid = make_grid(0.0, 0.05, 7)
    terminal = np.array([sample_brownian(grid, seed).values[-1] for seed in range(10000)])
    assert abs(terminal.mean()) < 4 * np.sqrt(0.3 / 10000)
    assert terminal.var() == pytest.approx(0.3, rel=0.05)


@pytest.mark.parametrize("factor", [0.01, 4.0, 100.0])
def test_brownian_scales_with_root_of_step(factor):
    """Test the same seed on a grid with step c*h gives sqrt(c) times the path."""
    grid = make_grid(0.0, 0.01, 31)
    base = sample_brownian(grid, 17)
    scaled = sample_brownian(rescale_grid(grid, factor), 17)
    np.testing.assert_allclose(scaled.values, np.sqrt(factor) * base.values,
                               rtol=1e-12, atol=1e-12)


def test_brownian_values_are_read_only():
    path = sample_brownian(make_grid(0.0, 0.1, 5), 1)
    with pytest.raises(ValueError):
        path.values[1] = 3.0


def test_brownian_path_must_start_at_zero():
    grid = make_grid(0.0, 0.1, 3)
    with pytest.raises(ValidationError):
        BrownianPath(grid=grid, values=[0.1, 0.2, 0.3], seed=0)
    with pytest.raises(ValidationError):
        BrownianPath(grid=grid, values=[0.0, 0.2], seed=0)


def test_solution_path_must_start_at_x0():
    grid = make_grid(0.0, 0.1, 3)
    with pytest.raises(ValidationError):
        SolutionPath(grid=grid, values=[1.0, 2.0, 3.0], x0=0.5)


def test_batch_matches_individual_paths():
    grid = make_grid(0.0, 0.1, 11)
    batch = sample_brownian_batch(grid, 3, 4)
    for index, path in enumerate(batch):
        assert path == sample_brownian(grid, derive_seed(3, index))


def test_batch_threads_do_not_change_paths():
    grid = make_grid(0.0, 0.1, 11)
    assert sample_brownian_batch(grid, 3, 8) == sample_brownian_batch(grid, 3, 8, threads=4)


def test_batch_start_index():
    grid = make_grid(0.0, 0.1, 6)
    tail = sample_brownian_batch(grid, 9, 2, start_index=3)
    assert tail == sample_brownian_batch(grid, 9, 5)[3:]


def test_sensor_set_validation():
    with pytest.raises(InvalidArgumentError):
        SensorSet(np.array([]))
    with pytest.raises(InvalidArgumentError):
        SensorSet(np.array([0.2, 0.1]))
    with pytest.raises(InvalidArgumentError):
        SensorSet(np.array([-0.1, 0.3]))


def test_sensor_indices_on_grid():
    grid = make_grid(0.0, 0.01, 31)
    assert SensorSet(np.array([0.3])).indices_on(grid).tolist() == [30]
    assert SensorSet.terminal(grid).indices_on(grid).tolist() == [30]
    with pytest.raises(ValidationError):
        SensorSet(np.array([0.005])).indices_on(grid)
    with pytest.raises(ValidationError):
        SensorSet(np.array([0.5])).indices_on(grid)


def test_single_sensor_variance():
    """Test B_T sampled at a single sensor has variance T."""
    sensors = SensorSet(np.array([0.3]))
    draws = np.array([sample_brownian_at_sensors(sensors, seed)[0] for seed in range(10000)])
    assert draws.var() == pytest.approx(0.3, rel=0.05)


def test_sensor_at_time_zero_is_zero():
    values = sample_brownian_at_sensors(SensorSet(np.array([0.0, 0.5])), 4)
    assert values[0] == 0.0


def test_sensors_on_full_grid_match_grid_sampling():
    """Test sampling every grid point as a sensor reproduces the grid path bit for bit."""
    grid = make_grid(0.0, 0.1, 8)
    full = sample_brownian(grid, 21)
    at_sensors = sample_brownian_at_sensors(SensorSet.on_grid(grid), 21)
    assert np.array_equal(at_sensors, full.values)


def test_sensors_on_shifted_full_grid_match_grid_sampling():
    grid = make_grid(0.7, 0.03, 12)
    full = sample_brownian(grid, 5)
    at_sensors = sample_brownian_at_sensors(SensorSet.on_grid(grid), 5)
    assert np.array_equal(at_sensors, full.values)


def test_sensor_sampling_starts_at_grid_origin():
    """Test B at a terminal sensor of a grid starting at t0 = 0.5 has variance T - t0."""
    grid = make_grid(0.5, 0.1, 4)
    sensors = SensorSet.terminal(grid)
    assert sensors.origin == 0.5
    assert sensors.gaps() == pytest.approx([0.3])
    draws = sample_sensor_block(sensors, 3, 20000)[:, 0]
    assert draws.var() == pytest.approx(0.3, rel=0.05)
    assert sample_brownian_at_sensors(SensorSet.on_grid(grid, [0.5, 0.8]), 1)[0] == 0.0


def test_sensor_origin_is_part_of_identity():
    grid = make_grid(0.5, 0.1, 4)
    assert SensorSet.on_grid(grid, [0.8]) != SensorSet(np.array([0.8]))
    assert SensorSet.on_grid(grid, [0.8]) == SensorSet(np.array([0.8]), origin=0.5)
    with pytest.raises(InvalidArgumentError):
        SensorSet(np.array([0.4, 0.8]), origin=0.5)
    with pytest.raises(InvalidArgumentError):
        SensorSet(np.array([0.8]), step=0.0)


def test_sensor_block_shape_and_reproducibility():
    sensors = SensorSet(np.array([0.1, 0.3]))
    block = sample_sensor_block(sensors, 2, 500)
    assert block.shape == (500, 2)
    assert np.array_equal(block, sample_sensor_block(sensors, 2, 500))
    assert block[:, 1].var() == pytest.approx(0.3, rel=0.2)


def test_dataset_requires_matching_grids(tiny_grid):
    bpath = sample_brownian(tiny_grid, 0)
    other = make_grid(0.0, 0.2, 5)
    solution = SolutionPath(grid=other, values=np.ones(5), x0=1.0)
    with pytest.raises(ValidationError):
        PathDataset(grid=tiny_grid, brownian=[bpath], solutions=[solution])
    with pytest.raises(ValidationError):
        PathDataset(grid=tiny_grid, brownian=[bpath], solutions=[])


def test_dataset_subset(ou_dataset):
    head = ou_dataset.subset([1])
    assert len(head) == 1
    assert head.brownian[0] == ou_dataset.brownian[1]
    assert head.x0s.tolist() == [1.0]
    assert ou_dataset.brownian_matrix().shape == (2, 5)
