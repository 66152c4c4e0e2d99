import os

import numpy as np
import pytest

from sdeoperator.services.evaluation import (ExactOperatorStub, MultiscaleRow, TimingTriple,
                                             bench_emp, bench_operator, multiscale_eval,
                                             per_path_mse, read_samples, sample_size_study,
                                             strong_order_study, write_convergence_report,
                                             write_ecdf, write_multiscale_report,
                                             write_path_errors, write_samples,
                                             write_timing_report)
from sdeoperator.services.training import TrainConfig
from sdeoperator.utils.errors import (DegenerateInputError, FormatError, InvalidArgumentError,
                                      ValidationError)
from sdeoperator.utils.metrics import ecdf
from sdeoperator.utils.operator_net import DeepONet, NetConfig, init_params, zero_params
from sdeoperator.utils.particles import burgers_model
from sdeoperator.utils.paths import SensorSet, make_grid
from sdeoperator.utils.report_formatter import ReportFormatter
from sdeoperator.utils.solvers import brownian_model, gbm_model, ou_model

SCALES = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]


def test_exact_stub_scores_zero_at_every_scale():
    """Test the exact solver scored against itself gives zero error."""
    model = ou_model(1.0, 1.0)
    rows = multiscale_eval(ExactOperatorStub(model), model, make_grid(0.0, 0.01, 31), SCALES,
                           n_paths=10, base_seed=0)
    assert [row.scale_factor for row in rows] == SCALES
    for row in rows:
        assert row.mean < 1e-12
        assert row.n_paths == 10 and row.failures == 0


def test_multiscale_threads_do_not_change_rows(tiny_net_config):
    params = init_params(tiny_net_config)
    model = ou_model()
    grid = make_grid(0.0, 0.1, 5)
    serial = multiscale_eval(params, model, grid, [0.1, 1.0], n_paths=6, base_seed=3)
    threaded = multiscale_eval(params, model, grid, [0.1, 1.0], n_paths=6, base_seed=3, threads=3)
    assert serial == threaded


def test_multiscale_all_failures_raise(tiny_net_config):
    """Test a constant prediction makes every path degenerate."""
    with pytest.raises(DegenerateInputError):
        multiscale_eval(zero_params(tiny_net_config), ou_model(), make_grid(0.0, 0.1, 5), [1.0],
                        n_paths=3, base_seed=0)


def test_multiscale_rejects_empty_evaluation():
    model = ou_model()
    with pytest.raises(InvalidArgumentError):
        multiscale_eval(ExactOperatorStub(model), model, make_grid(0.0, 0.1, 5), [1.0],
                        n_paths=0, base_seed=0)


def test_evaluation_seeds_differ_from_training_seeds():
    model = brownian_model()
    grid = make_grid(0.0, 0.1, 5)

    class Recorder:
        def __init__(self):
            self.seeds = []

        def predict_paths(self, x0s, bpaths):
            self.seeds.extend(b.seed for b in bpaths)
            return np.stack([b.values + 1.0 for b in bpaths])

    fresh, replay = Recorder(), Recorder()
    multiscale_eval(fresh, model, grid, [1.0], n_paths=4, base_seed=5)
    multiscale_eval(replay, model, grid, [1.0], n_paths=4, base_seed=5, reuse_training_noise=True)
    assert not set(fresh.seeds) & set(replay.seeds)


def test_per_path_mse_of_exact_stub_is_zero():
    model = gbm_model()
    errors = per_path_mse(ExactOperatorStub(model), model, make_grid(0.0, 0.01, 11), 5, 0)
    assert errors.shape == (5,)
    assert np.all(errors == 0.0)


def test_timing_triple_validation():
    TimingTriple(0.1, 0.2)
    with pytest.raises(ValidationError):
        TimingTriple(-1.0, 0.2)
    with pytest.raises(ValidationError):
        TimingTriple(0.1, float("nan"), 1.0)


def test_bench_single_path():
    """Test the benchmark protocol with N = 1 returns finite timings."""
    emp = bench_emp(burgers_model(), N=1, M=5, h=0.01, seed=0, repeats=1, warmup=0)
    assert emp.t_time is None
    assert emp.b_time >= 0 and emp.o_time >= 0
    config = NetConfig(rnn_hidden=4, branch_layers=(4,), trunk_layers=(4,), p=4)
    op = bench_operator(init_params(config), SensorSet(np.array([0.04])), N=1, seed=0,
                        t_time=2.5, repeats=1, warmup=0)
    assert op.t_time == 2.5
    assert np.isfinite(op.o_time)


def test_strong_order_needs_closed_form():
    with pytest.raises(InvalidArgumentError):
        strong_order_study(brownian_model(), 0.0, 1.0, [3, 4], 10, 0)
    with pytest.raises(InvalidArgumentError):
        strong_order_study(gbm_model(), 1.0, 1.0, [3], 10, 0)


def test_strong_order_small_study():
    result = strong_order_study(gbm_model(0.05, 0.2), 1.0, 1.0, [3, 4, 5, 6], 500, 1)
    assert result.steps == [2.0 ** -e for e in (3, 4, 5, 6)]
    assert result.rms_errors[0] > result.rms_errors[-1]
    assert 0.2 < result.slope < 0.9


def test_sample_size_study_rows(tiny_net_config):
    rows = sample_size_study(ou_model(), make_grid(0.0, 0.1, 5), [1, 3], 4, tiny_net_config,
                             TrainConfig(max_epochs=3, threshold=0.0), 0)
    assert [row.n_train for row in rows] == [1, 3]
    assert all(np.isfinite(row.mean) and row.mean >= 0 for row in rows)
    with pytest.raises(InvalidArgumentError):
        sample_size_study(ou_model(), make_grid(0.0, 0.1, 5), [0], 4, tiny_net_config,
                          TrainConfig(max_epochs=1), 0)


def test_multiscale_report_layout(temp_dir):
    path = os.path.join(temp_dir, 'multiscale.csv')
    rows = [MultiscaleRow(0.1, 0.01, 0.002, 10), MultiscaleRow(10.0, 0.2, 0.05, 9, failures=1)]
    write_multiscale_report(rows, path, ReportFormatter.provenance("cafe"))
    metadata, columns, data = ReportFormatter.read_table(path)
    assert columns == ["scale", "mean", "std", "n"]
    assert data[1] == ["10.0", "0.2", "0.05", "9"]
    assert metadata["failures"] == {"0.1": 0, "10.0": 1}
    assert metadata["config_hash"] == "cafe"


def test_empty_report_is_header_only(temp_dir):
    path = os.path.join(temp_dir, 'timing.csv')
    write_timing_report([], path)
    _, columns, rows = ReportFormatter.read_table(path)
    assert columns == ["method", "N", "M", "B_time", "O_time", "T_time"]
    assert rows == []


def test_timing_report_leaves_missing_training_time_empty(temp_dir):
    path = os.path.join(temp_dir, 'timing.csv')
    write_timing_report([("EMP", 100, 31, TimingTriple(0.5, 1.5)),
                         ("operator", 100, 31, TimingTriple(0.01, 0.02, 3.0))], path)
    _, _, rows = ReportFormatter.read_table(path)
    assert rows[0] == ["EMP", "100", "31", "0.5", "1.5", ""]
    assert rows[1][-1] == "3.0"


def test_samples_and_ecdf_files(temp_dir):
    samples_path = os.path.join(temp_dir, 'samples.csv')
    write_samples([0.5, -1.0, 2.0], samples_path)
    assert read_samples(samples_path).tolist() == [0.5, -1.0, 2.0]
    ecdf_path = os.path.join(temp_dir, 'ecdf.csv')
    write_ecdf(ecdf([0.5, -1.0, 2.0]), ecdf_path)
    _, columns, rows = ReportFormatter.read_table(ecdf_path)
    assert columns == ["x", "F"]
    assert rows[-1] == ["2.0", "1.0"]


def test_read_samples_needs_x_column(temp_dir):
    path = os.path.join(temp_dir, 'errors.csv')
    write_path_errors([0.1, 0.2], path)
    with pytest.raises(FormatError):
        read_samples(path)


def test_convergence_report(temp_dir):
    result = strong_order_study(gbm_model(), 1.0, 1.0, [2, 3], 20, 0)
    path = os.path.join(temp_dir, 'convergence.csv')
    write_convergence_report(result, path)
    metadata, columns, rows = ReportFormatter.read_table(path)
    assert columns == ["h", "rms_error"]
    assert len(rows) == 2
    assert metadata["slope"] == pytest.approx(result.slope)


@pytest.mark.slow
def test_operator_cost_grows_slower_than_emp():
    """Test EMP O-time grows superlinearly in N while operator O-time stays near linear."""
    params = init_params(NetConfig())
    sensors = SensorSet(np.array([0.3]))
    emp_small = bench_emp(burgers_model(), 1000, 31, 0.01, 0, repeats=3)
    emp_large = bench_emp(burgers_model(), 10000, 31, 0.01, 0, repeats=3)
    op_small = bench_operator(params, sensors, 1000, 0, repeats=3)
    op_large = bench_operator(params, sensors, 10000, 0, repeats=3)
    assert emp_large.o_time / emp_small.o_time > 20
    assert op_large.o_time / op_small.o_time < 20


def test_multiscale_rejects_sensor_operator(tiny_net_config):
    operator = DeepONet(init_params(tiny_net_config), SensorSet(np.array([0.4])))
    with pytest.raises(ValidationError, match="full grid paths"):
        multiscale_eval(operator, ou_model(), make_grid(0.0, 0.1, 5), [1.0, 10.0], 3, 0)


def test_cost_ratio_when_doubling_particles():
    """Test doubling N roughly quadruples EMP O-time but at most ~doubles the operator's."""
    params = init_params(NetConfig())
    sensors = SensorSet(np.array([0.3]))
    emp_small = bench_emp(burgers_model(), 1000, 31, 0.01, 0, repeats=3, warmup=1)
    emp_large = bench_emp(burgers_model(), 2000, 31, 0.01, 0, repeats=3, warmup=1)
    op_small = bench_operator(params, sensors, 1000, 0, repeats=3, warmup=1)
    op_large = bench_operator(params, sensors, 2000, 0, repeats=3, warmup=1)
    assert emp_large.o_time / emp_small.o_time > 2.5
    assert op_large.o_time / op_small.o_time < 3.0


@pytest.mark.slow
def test_ou_multiscale_error_is_smallest_at_training_step(trained_ou):
    cfg, model, report = trained_ou
    rows = multiscale_eval(report.final_params, model, cfg.grid.to_grid(), cfg.scales,
                           cfg.n_eval, cfg.seed, x0=cfg.initial.value)
    error = {row.scale_factor: row.mean for row in rows}
    assert min(error, key=error.get) == 1.0
    assert error[10.0] < error[100.0]
    assert error[0.1] < error[0.01]


@pytest.mark.slow
def test_burgers_operator_samples_match_particles(tmp_path):
    """Test the burgers preset (2000 particles) samples X_T within KS 0.1 of EMP."""
    from config import TestingConfig
    from sdeoperator.config_schema import load_config
    from sdeoperator.services.experiments import ExperimentService

    cfg = load_config(preset="burgers", overrides={
        "model": {"name": "burgers", "params": {"sigma": 1.0}, "solver": "emp",
                  "n_particles": 2000},
        "n_samples": 2000,
    })
    service = ExperimentService(cfg, TestingConfig, out_dir=str(tmp_path))
    dataset = service.simulate()
    checkpoint, _, _ = service.train(dataset)
    result = service.mv_sample(checkpoint, reference_path=service.path("reference_samples.csv"))
    assert result["ks"]["reference"] <= 0.1
