"""
Operator fitting
================
Minimizes the trajectory MSE of F_theta over a PathDataset with Adam and
threshold stopping, and persists the result as a JSON checkpoint.

Each epoch evaluates the loss on the current parameters. If it is at or below
the threshold training ends; otherwise the parameters take one Adam step per
batch. The loss history therefore records the loss *before* each epoch's
update, and the reported final loss is evaluated once more on the parameters
training returns.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdeoperator.utils.autograd import Tape, Tensor, backward, mean_sq, sub
from sdeoperator.utils.errors import (FormatError, InvalidArgumentError,
                                      TrainingDivergedError, ValidationError)
from sdeoperator.utils.operator_net import (DeepONet, DeepONetParams, NetConfig,
                                            deeponet_forward, init_params)
from sdeoperator.utils.paths import PathDataset, SensorSet, derive_seed, make_generator
from sdeoperator.utils.report_formatter import ReportFormatter

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sdeoperator-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_HISTORY_COLUMNS = ["epoch", "loss"]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 20000
    threshold: float = 1e-5
    batch_size: Optional[int] = None
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    clip_norm: Optional[float] = None
    log_every: int = 500
    # step decay: lr * lr_decay ** ((epoch - 1) // lr_decay_every), floored at min_learning_rate
    lr_decay: float = 1.0
    lr_decay_every: Optional[int] = None
    min_learning_rate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.threshold < 0:
            raise InvalidArgumentError(f"threshold must be >= 0, got {self.threshold}")
        if self.max_epochs < 1:
            raise InvalidArgumentError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise InvalidArgumentError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise InvalidArgumentError(f"clip_norm must be positive, got {self.clip_norm}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidArgumentError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.lr_decay_every is not None and self.lr_decay_every < 1:
            raise InvalidArgumentError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if not 0.0 <= self.min_learning_rate <= self.learning_rate:
            raise InvalidArgumentError(
                f"min_learning_rate must be in [0, learning_rate], got {self.min_learning_rate}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "threshold": self.threshold,
            "batch_size": self.batch_size,
            "betas": list(self.betas),
            "epsilon": self.epsilon,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
            "log_every": self.log_every,
            "lr_decay": self.lr_decay,
            "lr_decay_every": self.lr_decay_every,
            "min_learning_rate": self.min_learning_rate,
        }

    def learning_rate_at(self, epoch: int) -> float:
        """Step size used by the updates of 1-based ``epoch``."""
        if self.lr_decay_every is None or self.lr_decay == 1.0:
            return self.learning_rate
        decayed = self.learning_rate * self.lr_decay ** ((epoch - 1) // self.lr_decay_every)
        return max(self.min_learning_rate, decayed)


@dataclass
class AdamState:
    """First/second moment accumulators and the step count."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.step, {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


@dataclass
class TrainReport:
    final_params: DeepONetParams
    loss_history: List[float]
    stopped_by: str
    wall_time: float
    optimizer_state: AdamState
    sensors: Optional[SensorSet] = None
    train_config: TrainConfig = field(default_factory=TrainConfig)
    # loss of final_params; the history holds pre-update losses only
    final_loss: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.loss_history:
            raise ValidationError("A training report needs at least one recorded loss")
        if self.stopped_by not in ("threshold", "epoch-cap"):
            raise ValidationError(f"Unknown stopping reason '{self.stopped_by}'")
        if self.final_loss is None:
            self.final_loss = self.loss_history[-1]

    @property
    def epochs(self) -> int:
        return len(self.loss_history)

    def operator(self) -> DeepONet:
        return DeepONet(self.final_params, self.sensors)


def branch_matrix(dataset: PathDataset, sensors: Optional[SensorSet] = None) -> np.ndarray:
    """Brownian inputs of every path as rows, restricted to ``sensors`` if given."""
    matrix = dataset.brownian_matrix()
    if sensors is None:
        return matrix
    return matrix[:, sensors.indices_on(dataset.grid)]


def trajectory_loss(params: DeepONetParams, dataset: PathDataset,
                    sensors: Optional[SensorSet] = None) -> Tensor:
    """
    ``(1/NM) sum_i sum_k (F_theta(X0_i, B_i)(t_k) - X_i(t_k))^2`` as a scalar
    tensor, differentiable when recorded on a tape. The initial time point is
    part of the sum.
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("trajectory_loss needs a non-empty dataset")
    pred = deeponet_forward(params, dataset.x0s, branch_matrix(dataset, sensors),
                            dataset.grid.times)
    return mean_sq(sub(pred, Tensor(dataset.solution_matrix())))


def adam_step(params: DeepONetParams, grads: Dict[str, np.ndarray], state: AdamState,
              config: TrainConfig,
              learning_rate: Optional[float] = None) -> Tuple[DeepONetParams, AdamState]:
    """
    One bias-corrected Adam update, applied to ``params`` in place.
    ``learning_rate`` overrides ``config.learning_rate`` for this step.
    """
    beta1, beta2 = config.betas
    lr = config.learning_rate if learning_rate is None else learning_rate
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, tensor in params.tensors.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != tensor.shape:
            raise InvalidArgumentError(
                f"Gradient for {name} has shape {g.shape}, expected {tensor.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
    return params, state


def _loss_and_grads(params: DeepONetParams, dataset: PathDataset,
                    sensors: Optional[SensorSet]) -> Tuple[float, Dict[str, np.ndarray]]:
    with Tape() as tape:
        loss = trajectory_loss(params, dataset, sensors)
    grads = backward(tape, loss, params.parameters())
    return loss.item(), dict(zip(params.names(), grads))


def _clip(grads: Dict[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm:
        return grads
    logger.debug("Clipping gradient norm %.4g to %.4g", norm, max_norm)
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


def _batches(n: int, config: TrainConfig, epoch: int) -> List[np.ndarray]:
    if config.batch_size is None or config.batch_size >= n:
        return [np.arange(n)]
    order = make_generator(derive_seed(config.seed, epoch)).permutation(n)
    return [order[start:start + config.batch_size] for start in range(0, n, config.batch_size)]


def train(dataset: PathDataset, net_config: NetConfig, train_config: TrainConfig,
          sensors: Optional[SensorSet] = None,
          initial_params: Optional[DeepONetParams] = None,
          initial_state: Optional[AdamState] = None,
          start_epoch: int = 0) -> TrainReport:
    """
    Fit F_theta to ``dataset``.

    ``initial_params``/``initial_state``/``start_epoch`` resume an earlier run;
    resuming for k epochs reproduces the tail of an uninterrupted run.

    Raises:
        InvalidArgumentError: empty dataset
        TrainingDivergedError: the loss or a gradient stops being finite
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("Cannot train on an empty dataset")
    if sensors is not None:
        sensors.indices_on(dataset.grid)
        if sensors.origin != dataset.grid.t0:
            raise ValidationError(
                f"Sensors start at {sensors.origin}, dataset grid starts at {dataset.grid.t0}")
    params = init_params(net_config) if initial_params is None else initial_params.copy()
    if params.config != net_config:
        raise ValidationError("Initial parameters were built for a different network config")
    params.requires_grad_(True)
    state = AdamState() if initial_state is None else initial_state.copy()

    history: List[float] = []
    stopped_by = "epoch-cap"
    started = time.perf_counter()
    for offset in range(train_config.max_epochs):
        epoch = start_epoch + offset + 1
        batches = _batches(len(dataset), train_config, epoch)
        lr = train_config.learning_rate_at(epoch)
        if len(batches) == 1:
            loss, grads = _loss_and_grads(params, dataset, sensors)
            _check_finite(epoch, loss, grads)
            history.append(loss)
            if loss <= train_config.threshold:
                stopped_by = "threshold"
                break
            if train_config.clip_norm is not None:
                grads = _clip(grads, train_config.clip_norm)
            adam_step(params, grads, state, train_config, lr)
        else:
            total = 0.0
            for indices in batches:
                loss, grads = _loss_and_grads(params, dataset.subset(indices), sensors)
                _check_finite(epoch, loss, grads)
                total += loss * indices.size
                if train_config.clip_norm is not None:
                    grads = _clip(grads, train_config.clip_norm)
                adam_step(params, grads, state, train_config, lr)
            loss = total / len(dataset)
            history.append(loss)
            if loss <= train_config.threshold:
                stopped_by = "threshold"
                break
        if train_config.log_every and epoch % train_config.log_every == 0:
            logger.info("epoch %d loss %.6e", epoch, loss)

    wall_time = time.perf_counter() - started
    if stopped_by == "threshold" and len(batches) == 1:
        final_loss = history[-1]
    else:
        final_loss = trajectory_loss(params, dataset, sensors).item()
        _check_finite(len(history), final_loss, {})
    logger.info("Training stopped by %s after %d epochs (loss %.6e, %.2fs)",
                stopped_by, len(history), final_loss, wall_time)
    return TrainReport(final_params=params, loss_history=history, stopped_by=stopped_by,
                       wall_time=wall_time, optimizer_state=state, sensors=sensors,
                       train_config=train_config, final_loss=final_loss)


def _check_finite(epoch: int, loss: float, grads: Dict[str, np.ndarray]) -> None:
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise TrainingDivergedError(epoch, loss)


@dataclass
class Checkpoint:
    params: DeepONetParams
    sensors: Optional[SensorSet]
    metadata: Dict[str, Any]
    optimizer_state: Optional[AdamState] = None
    loss_history: List[float] = field(default_factory=list)

    def operator(self) -> DeepONet:
        return DeepONet(self.params, self.sensors)


def _pack(array: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(array.shape), "data": np.asarray(array).reshape(-1).tolist()}


def _unpack(entry: Dict[str, Any], path: str, name: str) -> np.ndarray:
    try:
        shape = tuple(int(d) for d in entry["shape"])
        data = np.array(entry["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"tensor '{name}' is malformed ({exc})", path=path)


def save_checkpoint(report: TrainReport, path: str,
                    provenance: Optional[Dict[str, Any]] = None,
                    include_optimizer: bool = True,
                    extra: Optional[Dict[str, Any]] = None) -> str:
    """Write parameters, sensors and training metadata to a JSON checkpoint."""
    params = report.final_params
    document: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "net_config": params.config.to_dict(),
        "sensors": None if report.sensors is None else report.sensors.times.tolist(),
        "sensor_grid": None if report.sensors is None else {
            "origin": report.sensors.origin, "step": report.sensors.step},
        "tensors": {name: _pack(tensor.data) for name, tensor in params.tensors.items()},
        "training": {
            "final_loss": report.final_loss,
            "epochs": report.epochs,
            "stopped_by": report.stopped_by,
            "train_config": report.train_config.to_dict(),
            "loss_history": list(report.loss_history),
        },
        "provenance": provenance or {},
    }
    document.update(extra or {})
    if include_optimizer:
        state = report.optimizer_state
        document["optimizer"] = {
            "step": state.step,
            "m": {name: _pack(a) for name, a in state.m.items()},
            "v": {name: _pack(a) for name, a in state.v.items()},
        }
    ReportFormatter.write_json(path, document)
    logger.info("Wrote checkpoint %s", path)
    return path


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        DatasetIOError: unreadable file
        FormatError: wrong format marker, version or malformed content
    """
    document = ReportFormatter.read_json(path)
    if document.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not a {CHECKPOINT_FORMAT} file", path=path)
    if document.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {document.get('version')} "
                          f"(expected {CHECKPOINT_VERSION})", path=path)
    try:
        net = document["net_config"]
        config = NetConfig(
            rnn_hidden=int(net["rnn_hidden"]), branch_layers=tuple(net["branch_layers"]),
            trunk_layers=tuple(net["trunk_layers"]), p=int(net["p"]),
            activation=net["activation"], init_seed=int(net["init_seed"]),
            rnn_input=net.get("rnn_input", "values"),
            trunk_steps=None if net.get("trunk_steps") is None else tuple(net["trunk_steps"]))
        tensors = document["tensors"]
        training = document.get("training", {})
    except (KeyError, TypeError, ValueError, InvalidArgumentError) as exc:
        raise FormatError(f"incomplete network description ({exc})", path=path)
    if not isinstance(tensors, dict):
        raise FormatError("'tensors' must be an object", path=path)
    arrays = {name: _unpack(entry, path, name) for name, entry in tensors.items()}
    try:
        params = DeepONetParams.from_arrays(config, arrays)
    except ValidationError as exc:
        raise FormatError(str(exc), path=path)

    sensors = document.get("sensors")
    sensor_set = None
    if sensors is not None:
        sensor_grid = document.get("sensor_grid") or {}
        try:
            sensor_set = SensorSet(np.array(sensors, dtype=np.float64),
                                   origin=sensor_grid.get("origin", 0.0),
                                   step=sensor_grid.get("step"))
        except (InvalidArgumentError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"malformed sensor set ({exc})", path=path)

    state = None
    optimizer = document.get("optimizer")
    if optimizer is not None:
        try:
            state = AdamState(
                step=int(optimizer["step"]),
                m={name: _unpack(e, path, name) for name, e in optimizer["m"].items()},
                v={name: _unpack(e, path, name) for name, e in optimizer["v"].items()})
        except (KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"malformed optimizer state ({exc})", path=path)

    metadata = {key: value for key, value in document.items()
                if key not in ("tensors", "optimizer")}
    return Checkpoint(params=params, sensors=sensor_set, metadata=metadata,
                      optimizer_state=state,
                      loss_history=[float(x) for x in training.get("loss_history", [])])


def write_loss_history(history: Sequence[float], path: str,
                       provenance: Optional[Dict[str, Any]] = None, first_epoch: int = 1) -> str:
    rows = ((first_epoch + i, float(loss)) for i, loss in enumerate(history))
    return ReportFormatter.write_table(path, LOSS_HISTORY_COLUMNS, rows, provenance)
