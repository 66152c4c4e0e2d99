"""
Experiment configuration schema
===============================
An experiment is one JSON document validated by the models below. Unknown
keys are rejected; every field has an explicit default so a resolved config
fully determines a run. ``sdeop schema`` prints the JSON schema.
"""

import hashlib
import json
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from sdeoperator.utils.errors import ConfigError, SdeOperatorError
from sdeoperator.utils.model_registry import MODEL_REGISTRY, AnyModel, build_model, get_entry
from sdeoperator.utils.operator_net import NetConfig
from sdeoperator.utils.paths import SensorSet, TimeGrid, derive_seed, make_generator
from sdeoperator.services.training import TrainConfig

# Stream index (under the experiment seed) for random initial values.
X0_STREAM = 2 ** 40


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: str = "ou"
    params: Dict[str, float] = Field(default_factory=dict)
    solver: Literal["auto", "em", "exact", "emp"] = "auto"
    n_particles: int = Field(10000, ge=1, description="EMP ensemble size")

    @field_validator("name")
    @classmethod
    def _known(cls, name: str) -> str:
        if name not in MODEL_REGISTRY:
            raise ValueError(f"unknown model '{name}', known: {', '.join(sorted(MODEL_REGISTRY))}")
        return name

    @model_validator(mode="after")
    def _solver_fits_model(self) -> "ModelSpec":
        entry = get_entry(self.name)
        if entry.mean_field and self.solver not in ("auto", "emp"):
            raise ValueError(f"'{self.name}' is a McKean-Vlasov model and needs the emp solver")
        if not entry.mean_field and self.solver == "emp":
            raise ValueError(f"'{self.name}' has no measure dependence; use em or exact")
        build_model(self.name, self.params)
        return self

    def build(self) -> AnyModel:
        return build_model(self.name, self.params)


class GridSpec(_Strict):
    t0: float = 0.0
    h: float = Field(0.01, gt=0)
    M: int = Field(31, ge=2)

    def to_grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.h, self.M)


class InitialCondition(_Strict):
    kind: Literal["fixed", "normal"] = "fixed"
    value: float = 1.0
    mean: float = 0.0
    std: float = Field(1.0, gt=0)

    def sample(self, n: int, seed: int) -> np.ndarray:
        """Initial values for ``n`` paths; random draws are keyed by ``seed``."""
        if self.kind == "fixed":
            return np.full(n, self.value, dtype=np.float64)
        rng = make_generator(derive_seed(seed, X0_STREAM))
        return self.mean + self.std * rng.standard_normal(n)


class NetSpec(_Strict):
    rnn_hidden: int = 64
    branch_layers: List[int] = Field(default_factory=lambda: [128, 128, 64])
    trunk_layers: List[int] = Field(default_factory=lambda: [128, 128, 64])
    p: int = 64
    activation: str = "tanh"
    init_seed: int = 0
    rnn_input: Literal["values", "increments"] = "values"
    trunk_init: Literal["uniform", "grid"] = "uniform"

    @model_validator(mode="after")
    def _consistent(self) -> "NetSpec":
        self.to_net_config()
        return self

    def to_net_config(self, grid: Optional[TimeGrid] = None) -> NetConfig:
        """
        The network description. ``trunk_init="grid"`` places the first trunk
        layer's steps half a step beyond each end of ``grid``, with half a
        step as their width.
        """
        steps = None
        if self.trunk_init == "grid" and grid is not None:
            steps = (grid.t0 - grid.h / 2, grid.time(grid.M - 1) + grid.h / 2, grid.h / 2)
        return NetConfig(rnn_hidden=self.rnn_hidden, branch_layers=tuple(self.branch_layers),
                         trunk_layers=tuple(self.trunk_layers), p=self.p,
                         activation=self.activation, init_seed=self.init_seed,
                         rnn_input=self.rnn_input, trunk_steps=steps)


class TrainSpec(_Strict):
    learning_rate: float = 1e-3
    max_epochs: int = 20000
    threshold: float = 1e-5
    batch_size: Optional[int] = None
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    clip_norm: Optional[float] = None
    log_every: int = 500
    lr_decay: float = 1.0
    lr_decay_every: Optional[int] = None
    min_learning_rate: float = 0.0

    @model_validator(mode="after")
    def _consistent(self) -> "TrainSpec":
        self.to_train_config(0)
        return self

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                           threshold=self.threshold, batch_size=self.batch_size,
                           betas=self.betas, epsilon=self.epsilon, seed=seed,
                           clip_norm=self.clip_norm, log_every=self.log_every,
                           lr_decay=self.lr_decay, lr_decay_every=self.lr_decay_every,
                           min_learning_rate=self.min_learning_rate)


class BenchSpec(_Strict):
    N_values: List[int] = Field(default_factory=lambda: [100, 1000, 10000])
    M_values: List[int] = Field(default_factory=lambda: [31, 51, 101])
    repeats: Optional[int] = Field(None, ge=1)
    warmup: Optional[int] = Field(None, ge=0)

    @field_validator("N_values", "M_values")
    @classmethod
    def _positive(cls, values: List[int]) -> List[int]:
        if not values or min(values) < 1:
            raise ValueError("benchmark sizes must be a non-empty list of positive counts")
        return values


class ConvergenceSpec(_Strict):
    exponents: List[int] = Field(default_factory=lambda: [5, 6, 7, 8, 9])
    n_paths: int = Field(2000, ge=1)
    T: float = Field(1.0, gt=0)


class ExperimentConfig(_Strict):
    name: str = "custom"
    model: ModelSpec = Field(default_factory=ModelSpec)
    grid: GridSpec = Field(default_factory=GridSpec)
    initial: InitialCondition = Field(default_factory=InitialCondition)
    n_train: int = Field(20, ge=1)
    n_eval: int = Field(800, ge=1)
    net: NetSpec = Field(default_factory=NetSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    scales: List[float] = Field(default_factory=lambda: [1.0])
    sensors: Optional[List[float]] = None
    reuse_training_noise: bool = False
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None
    n_samples: int = Field(10000, ge=1, description="mv-sample draw count")
    sample_sizes: List[int] = Field(default_factory=lambda: [5, 10, 20])
    bench: BenchSpec = Field(default_factory=BenchSpec)
    convergence: ConvergenceSpec = Field(default_factory=ConvergenceSpec)

    @field_validator("scales")
    @classmethod
    def _positive_scales(cls, scales: List[float]) -> List[float]:
        if not scales or any(not s > 0 for s in scales):
            raise ValueError("scales must be a non-empty list of positive factors")
        return scales

    @model_validator(mode="after")
    def _sensors_on_grid(self) -> "ExperimentConfig":
        if self.sensors is not None:
            try:
                SensorSet.on_grid(self.grid.to_grid(), self.sensors)
            except SdeOperatorError as exc:
                raise ValueError(str(exc))
        return self

    def net_config(self) -> NetConfig:
        return self.net.to_net_config(self.grid.to_grid())

    def sensor_set(self) -> Optional[SensorSet]:
        return None if self.sensors is None else SensorSet.on_grid(self.grid.to_grid(), self.sensors)

    def dump(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _format_errors(exc: PydanticValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def parse_config(payload: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except PydanticValidationError as exc:
        raise ConfigError(f"Invalid experiment config: {_format_errors(exc)}")


def load_config(path: Optional[str] = None, preset: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Resolve an experiment config from a preset, a JSON file layered on top of
    it and top-level overrides (CLI flags), in that order.
    """
    from config import EXPERIMENT_PRESETS

    payload: Dict[str, Any] = {}
    if preset is not None:
        if preset not in EXPERIMENT_PRESETS:
            raise ConfigError(
                f"Unknown preset '{preset}'. Known presets: {', '.join(sorted(EXPERIMENT_PRESETS))}")
        payload = json.loads(json.dumps(EXPERIMENT_PRESETS[preset]))
    if path is not None:
        try:
            with open(path) as handle:
                document = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc.strerror or exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config {path} is not valid JSON (line {exc.lineno}: {exc.msg})")
        if not isinstance(document, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        payload = _merge(payload, document)
    for key, value in (overrides or {}).items():
        if value is not None:
            payload[key] = value
    return parse_config(payload)


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def config_hash(cfg: ExperimentConfig) -> str:
    """First 16 hex digits of SHA-256 over the canonical JSON dump."""
    canonical = json.dumps(cfg.dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def json_schema() -> Dict[str, Any]:
    return ExperimentConfig.model_json_schema()
