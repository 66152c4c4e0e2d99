import numpy as np
import pytest

from sdeoperator.services.evaluation import strong_order_study
from sdeoperator.utils.errors import InvalidArgumentError, NumericOverflowError
from sdeoperator.utils.paths import BrownianPath, make_grid, sample_brownian, sample_brownian_batch
from sdeoperator.utils.solvers import (ModelDescriptor, SdeModel, brownian_model,
                                       euler_maruyama, euler_maruyama_batch, exact_gbm,
                                       exact_ou, gaussian_langevin_model, gbm_model,
                                       ou_model, solve_batch, strong_error)


def test_pure_noise_reproduces_brownian_path():
    """Test EM with a = 0, b = 1 returns x0 + B exactly."""
    bpath = sample_brownian(make_grid(0.0, 0.01, 101), 8)
    solution = euler_maruyama(brownian_model(1.0), 0.0, bpath)
    assert np.array_equal(solution.values, bpath.values)


def test_zero_coefficients_keep_initial_value():
    model = SdeModel(drift=lambda t, x: 0.0 * x, diffusion=lambda t, x: 0.0 * x,
                     descriptor=ModelDescriptor("zero"))
    bpath = sample_brownian(make_grid(0.0, 0.1, 11), 2)
    assert np.all(euler_maruyama(model, 2.5, bpath).values == 2.5)


def test_single_gbm_step():
    """Test one EM step of GBM by hand: 1 + 0.05*0.1 + 0.2*0.3 = 1.065."""
    grid = make_grid(0.0, 0.1, 2)
    bpath = BrownianPath(grid=grid, values=[0.0, 0.3], seed=0)
    solution = euler_maruyama(gbm_model(0.05, 0.2), 1.0, bpath)
    assert solution.values[1] == pytest.approx(1.065, abs=1e-15)


def test_batch_matches_single_path_solver():
    grid = make_grid(0.0, 0.01, 51)
    bpaths = sample_brownian_batch(grid, 4, 6)
    x0s = np.linspace(0.5, 1.5, 6)
    model = ou_model(1.0, 1.0)
    batch = euler_maruyama_batch(model, x0s, np.stack([b.increments for b in bpaths]), grid)
    for row, x0, bpath in zip(batch, x0s, bpaths):
        assert np.array_equal(row, euler_maruyama(model, x0, bpath).values)


def test_batch_rejects_wrong_increments():
    grid = make_grid(0.0, 0.1, 5)
    with pytest.raises(InvalidArgumentError):
        euler_maruyama_batch(brownian_model(), np.zeros(2), np.zeros((2, 5)), grid)


def test_exact_solutions_start_at_x0():
    bpath = sample_brownian(make_grid(0.0, 0.01, 31), 1)
    assert exact_gbm(0.05, 0.2, 1.5, bpath).values[0] == 1.5
    assert exact_ou(1.0, 1.0, -0.7, bpath).values[0] == -0.7


def test_gbm_closed_form_value():
    grid = make_grid(0.0, 0.5, 3)
    bpath = BrownianPath(grid=grid, values=[0.0, 0.4, -0.1], seed=0)
    values = exact_gbm(0.05, 0.2, 2.0, bpath).values
    expected = 2.0 * np.exp((0.05 - 0.02) * np.array([0.0, 0.5, 1.0]) + 0.2 * np.array([0.0, 0.4, -0.1]))
    np.testing.assert_allclose(values, expected, rtol=1e-14)


def test_exact_ou_without_restoring_force_is_scaled_noise():
    bpath = sample_brownian(make_grid(0.0, 0.01, 51), 6)
    values = exact_ou(0.0, 0.7, 1.2, bpath).values
    np.testing.assert_allclose(values, 1.2 + 0.7 * bpath.values, rtol=1e-14, atol=1e-14)


def test_exact_ou_without_noise_decays():
    bpath = sample_brownian(make_grid(0.0, 0.01, 51), 6)
    values = exact_ou(1.5, 0.0, 2.0, bpath).values
    np.testing.assert_allclose(values, 2.0 * np.exp(-1.5 * bpath.grid.times), rtol=1e-14)


def test_exact_gbm_degenerate_cases():
    """Test b = 0 gives pure growth and a = b^2/2 leaves x0 * exp(b B_t)."""
    bpath = sample_brownian(make_grid(0.0, 0.02, 26), 12)
    np.testing.assert_allclose(exact_gbm(0.3, 0.0, 1.5, bpath).values,
                               1.5 * np.exp(0.3 * bpath.grid.times), rtol=1e-14)
    b = 0.4
    np.testing.assert_allclose(exact_gbm(b * b / 2, b, 1.5, bpath).values,
                               1.5 * np.exp(b * bpath.values), rtol=1e-14)


def test_exact_ou_agrees_with_em_on_fine_grid():
    bpath = sample_brownian(make_grid(0.0, 1e-4, 10001), 3)
    exact = exact_ou(1.0, 1.0, 1.0, bpath)
    approx = euler_maruyama(ou_model(1.0, 1.0), 1.0, bpath)
    assert strong_error(exact, approx) < 1e-4


def test_strong_error_requires_same_grid():
    a = exact_gbm(0.05, 0.2, 1.0, sample_brownian(make_grid(0.0, 0.1, 5), 0))
    b = exact_gbm(0.05, 0.2, 1.0, sample_brownian(make_grid(0.0, 0.2, 5), 0))
    with pytest.raises(InvalidArgumentError):
        strong_error(a, b)


def test_overflow_reports_step():
    model = SdeModel(drift=lambda t, x: x * 1e200, diffusion=lambda t, x: 0.0 * x,
                     descriptor=ModelDescriptor("explosive"))
    bpath = sample_brownian(make_grid(0.0, 1.0, 10), 0)
    with pytest.raises(NumericOverflowError) as excinfo:
        euler_maruyama(model, 1e200, bpath)
    assert excinfo.value.step == 0
    assert excinfo.value.exit_code == 3


def test_nonfinite_initial_value():
    bpath = sample_brownian(make_grid(0.0, 0.1, 5), 0)
    with pytest.raises(InvalidArgumentError):
        euler_maruyama(brownian_model(), float("inf"), bpath)


def test_langevin_drift_is_half_score():
    model = gaussian_langevin_model(0.0, 1.0)
    assert model.drift(0.0, 2.0) == pytest.approx(-1.0)
    assert model.diffusion(0.0, 2.0) == 1.0
    shifted = gaussian_langevin_model(1.0, 2.0)
    assert shifted.drift(0.0, 3.0) == pytest.approx(0.5 * -(3.0 - 1.0) / 4.0)


def test_solve_batch_uses_closed_form_when_available():
    grid = make_grid(0.0, 0.01, 11)
    bpaths = sample_brownian_batch(grid, 6, 3)
    dataset = solve_batch(gbm_model(), 1.0, bpaths)
    assert dataset.metadata["model"]["name"] == "gbm"
    for solution, bpath in zip(dataset.solutions, bpaths):
        assert solution == exact_gbm(0.05, 0.2, 1.0, bpath)


def test_solve_batch_falls_back_to_em():
    grid = make_grid(0.0, 0.01, 11)
    bpaths = sample_brownian_batch(grid, 6, 3)
    model = gaussian_langevin_model()
    dataset = solve_batch(model, 0.0, bpaths)
    for solution, bpath in zip(dataset.solutions, bpaths):
        assert solution == euler_maruyama(model, 0.0, bpath)


def test_langevin_reaches_stationary_law():
    """Test long EM Langevin runs are approximately N(0, 1) at T = 10."""
    grid = make_grid(0.0, 0.01, 1001)
    bpaths = sample_brownian_batch(grid, 12, 2000)
    terminal = solve_batch(gaussian_langevin_model(), 0.0, bpaths).solution_matrix()[:, -1]
    assert terminal.mean() == pytest.approx(0.0, abs=0.1)
    assert terminal.var() == pytest.approx(1.0, rel=0.15)


def test_em_strong_order_is_one_half():
    """Test the fitted EM strong order for GBM over h = 2^-5 ... 2^-9 is 0.5 +- 0.1."""
    result = strong_order_study(gbm_model(0.05, 0.2), 1.0, 1.0, [5, 6, 7, 8, 9], 2000, 0)
    assert result.steps == [2.0 ** -e for e in (5, 6, 7, 8, 9)]
    assert 0.4 <= result.slope <= 0.6
