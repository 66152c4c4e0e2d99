import os
import tempfile

import numpy as np
import pytest

from sdeoperator.utils.operator_net import NetConfig
from sdeoperator.utils.paths import make_grid, sample_brownian_batch
from sdeoperator.utils.solvers import ou_model, solve_batch


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run full-size reproduction tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size reproduction run (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir


@pytest.fixture
def tiny_grid():
    """Five-point grid with h = 0.1."""
    return make_grid(0.0, 0.1, 5)


@pytest.fixture
def tiny_net_config():
    return NetConfig(rnn_hidden=8, branch_layers=(8, 8), trunk_layers=(8, 8), p=8, init_seed=3)


@pytest.fixture
def ou_dataset(tiny_grid):
    """Two OU paths (a = b = 1, x0 = 1) on the tiny grid."""
    bpaths = sample_brownian_batch(tiny_grid, 11, 2)
    return solve_batch(ou_model(1.0, 1.0), np.ones(2), bpaths)


@pytest.fixture
def cli_settings(tmp_path):
    """TestingConfig with its output root redirected into tmp_path."""
    from config import TestingConfig

    class IsolatedConfig(TestingConfig):
        OUTPUT_DIR = str(tmp_path / 'runs')

    return IsolatedConfig


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment payload to a JSON file and return its path."""
    import json

    def _write(payload, name='experiment.json'):
        path = os.path.join(str(tmp_path), name)
        with open(path, 'w') as handle:
            json.dump(payload, handle)
        return path

    return _write


@pytest.fixture(scope="session")
def trained_ou():
    """The ou preset trained end to end: (config, model, report). Slow."""
    from sdeoperator.config_schema import load_config
    from sdeoperator.services.training import train
    from sdeoperator.utils.paths import sample_brownian_batch as brownian_batch

    cfg = load_config(preset="ou")
    model = cfg.model.build()
    grid = cfg.grid.to_grid()
    bpaths = brownian_batch(grid, cfg.seed, cfg.n_train)
    dataset = solve_batch(model, cfg.initial.sample(cfg.n_train, cfg.seed), bpaths)
    report = train(dataset, cfg.net_config(), cfg.train.to_train_config(cfg.seed))
    return cfg, model, report
