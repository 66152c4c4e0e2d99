"""
SDE Operator Learning - Configuration
=====================================
Centralized configuration for the command-line tool and the built-in
experiment presets.

Key Features:
- Environment-based configuration (development/production/testing)
- Output, threading and determinism settings overridable from a .env file
- Complete experiment presets with every default the experiments leave unstated

Version: 1.0
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file (if exists)
load_dotenv()


def _env_bool(name: str, default: bool) -> bool:
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Base configuration class with default settings."""

    # ===================================================================
    # OUTPUT CONFIGURATION
    # ===================================================================

    # Root directory for run artifacts (datasets, checkpoints, reports)
    OUTPUT_DIR = os.environ.get('SDEOP_OUTPUT_DIR', 'runs')

    # ===================================================================
    # EXECUTION
    # ===================================================================

    # Worker threads for per-path generation and evaluation
    THREADS = int(os.environ.get('SDEOP_THREADS', 1))

    # Deterministic mode forces single-threaded reductions and timing
    DETERMINISTIC = _env_bool('SDEOP_DETERMINISTIC', True)

    LOG_LEVEL = os.environ.get('SDEOP_LOG_LEVEL', 'INFO')

    # ===================================================================
    # EVALUATION AND BENCHMARKS
    # ===================================================================

    # Added to the training base seed for every evaluation stream so that
    # held-out paths never reuse a training seed
    EVAL_SEED_OFFSET = int(os.environ.get('SDEOP_EVAL_SEED_OFFSET', 1_000_003))

    # Timing protocol: median of TIMING_REPEATS runs after TIMING_WARMUP runs
    TIMING_REPEATS = int(os.environ.get('SDEOP_TIMING_REPEATS', 5))
    TIMING_WARMUP = int(os.environ.get('SDEOP_TIMING_WARMUP', 1))


# ===================================================================
# ENVIRONMENT-SPECIFIC CONFIGURATIONS
# ===================================================================

class DevelopmentConfig(Config):
    """Development configuration with verbose logging."""
    LOG_LEVEL = os.environ.get('SDEOP_LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Production configuration for long reproduction runs."""


class TestingConfig(Config):
    """Testing configuration with deterministic behaviour."""
    LOG_LEVEL = os.environ.get('SDEOP_LOG_LEVEL', 'WARNING')
    DETERMINISTIC = True
    # Keep benchmark tests fast
    TIMING_REPEATS = int(os.environ.get('SDEOP_TIMING_REPEATS', 1))
    TIMING_WARMUP = int(os.environ.get('SDEOP_TIMING_WARMUP', 0))


# Configuration dictionary for easy access
# Usage: config[os.getenv('SDEOP_ENV', 'default')]
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


# ===================================================================
# EXPERIMENT PRESETS
# ===================================================================
# Complete experiment configs, validated against sdeoperator.config_schema.
# Values the experiments never state (coefficients, initial values,
# optimizer settings) are declared here and echoed into every output header.
# ===================================================================

MULTISCALE_FACTORS = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]

# Adam schedule and network shared by the operator presets: the step size
# decays by 0.7 every 2000 epochs down to 1e-5, and the first trunk layer
# starts as smooth steps centred across the training grid.
OPERATOR_TRAIN = {
    "learning_rate": 3e-3,
    "lr_decay": 0.7,
    "lr_decay_every": 2000,
    "min_learning_rate": 1e-5,
    "max_epochs": 30000,
    "threshold": 1e-5,
    "log_every": 1000,
}
OPERATOR_NET = {
    "rnn_hidden": 64,
    "branch_layers": [128, 128, 64],
    "trunk_layers": [128, 128, 64],
    "p": 64,
    "trunk_init": "grid",
}

EXPERIMENT_PRESETS = {
    # -----------------------------------------------------------
    # 1. ORNSTEIN-UHLENBECK: operator fitting and multiscale generalization
    # -----------------------------------------------------------
    # 20 training paths, 800 held-out paths, errors at h/1000 ... 1000h
    "ou": {
        "name": "ou",
        "model": {"name": "ou", "params": {"a": 1.0, "b": 1.0}, "solver": "exact"},
        "grid": {"t0": 0.0, "h": 0.01, "M": 31},
        "initial": {"kind": "fixed", "value": 1.0},
        "n_train": 20,
        "n_eval": 800,
        "scales": MULTISCALE_FACTORS,
        "net": OPERATOR_NET,
        "train": OPERATOR_TRAIN,
    },

    # -----------------------------------------------------------
    # 2. BURGERS-TYPE MCKEAN-VLASOV: fast amortized sampling
    # -----------------------------------------------------------
    # EMP reference with N = 10,000 particles; the operator trains on 20
    # trajectories and samples X_T from the Brownian value at T only
    "burgers": {
        "name": "burgers",
        "model": {"name": "burgers", "params": {"sigma": 1.0}, "solver": "emp",
                  "n_particles": 10000},
        "grid": {"t0": 0.0, "h": 0.01, "M": 31},
        "initial": {"kind": "normal", "mean": 0.0, "std": 1.0},
        "n_train": 20,
        "n_eval": 10000,
        "sensors": [0.3],
        "scales": [1.0],
        "net": OPERATOR_NET,
        "train": OPERATOR_TRAIN,
        "bench": {"N_values": [100, 1000, 10000], "M_values": [31, 51, 101]},
    },

    # -----------------------------------------------------------
    # 3. LANGEVIN: stationary sampling of a standard Gaussian target
    # -----------------------------------------------------------
    "langevin": {
        "name": "langevin",
        "model": {"name": "langevin", "params": {"mean": 0.0, "std": 1.0}, "solver": "em"},
        "grid": {"t0": 0.0, "h": 0.1, "M": 101},
        "initial": {"kind": "fixed", "value": 0.0},
        "n_train": 20,
        "n_eval": 800,
        "sensors": [10.0],
        "scales": [1.0],
        "train": {"learning_rate": 1e-3, "max_epochs": 20000, "threshold": 1e-5},
    },
}
