"""
Operator network for the solution map X = F(X0, B)
==================================================
Branch:  MLP(concat(RNN(B), X0))   hidden layers activated, last layer affine
Trunk:   MLP(t)                    every layer activated, including the last
Output:  sum_k branch_k * trunk_k  (a p-dimensional dot product)

Batches are row-major: a batch of N Brownian sequences is an (N, L) matrix,
hidden states are (N, H) and a dense layer computes ``x @ W + b`` with W of
shape (fan_in, fan_out). The recurrent cell is

    h_0 = 0,  h_j = tanh(b_j * W_in + h_{j-1} @ W_rec + bias)

and the encoding is h_L. Any sequence length L >= 1 is accepted.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdeoperator.utils.autograd import (ACTIVATIONS, Tensor, add, concat, matmul, reshape,
                                        tanh, transpose)
from sdeoperator.utils.errors import InvalidArgumentError, ValidationError
from sdeoperator.utils.paths import BrownianPath, SensorSet, make_generator

RNN_INPUTS = ("values", "increments")

# Trunk rows are evaluated in blocks of this many queries (zero padded), so the
# same query gives the same bits whether it is evaluated alone or in a batch.
QUERY_BLOCK = 64


@dataclass(frozen=True)
class NetConfig:
    rnn_hidden: int = 64
    branch_layers: Tuple[int, ...] = (128, 128, 64)
    trunk_layers: Tuple[int, ...] = (128, 128, 64)
    p: int = 64
    activation: str = "tanh"
    init_seed: int = 0
    rnn_input: str = "values"
    # (first centre, last centre, width) of the step-shaped first trunk layer
    trunk_steps: Optional[Tuple[float, float, float]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "branch_layers", tuple(int(w) for w in self.branch_layers))
        object.__setattr__(self, "trunk_layers", tuple(int(w) for w in self.trunk_layers))
        widths = (self.rnn_hidden, self.p) + self.branch_layers + self.trunk_layers
        if not self.branch_layers or not self.trunk_layers or min(widths) < 1:
            raise InvalidArgumentError(f"All layer widths must be positive: {self}")
        if self.branch_layers[-1] != self.p or self.trunk_layers[-1] != self.p:
            raise InvalidArgumentError(
                f"Branch and trunk must end in p={self.p}, got "
                f"{self.branch_layers[-1]} and {self.trunk_layers[-1]}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(
                f"Unknown activation '{self.activation}'. Known: {', '.join(ACTIVATIONS)}")
        if self.rnn_input not in RNN_INPUTS:
            raise InvalidArgumentError(
                f"rnn_input must be one of {RNN_INPUTS}, got '{self.rnn_input}'")
        if self.trunk_steps is not None:
            steps = tuple(float(v) for v in self.trunk_steps)
            if len(steps) != 3 or not steps[2] > 0 or steps[1] < steps[0]:
                raise InvalidArgumentError(
                    f"trunk_steps must be (start, stop, width) with stop >= start and "
                    f"width > 0, got {self.trunk_steps}")
            object.__setattr__(self, "trunk_steps", steps)

    def to_dict(self) -> Dict[str, object]:
        return {
            "rnn_hidden": self.rnn_hidden,
            "branch_layers": list(self.branch_layers),
            "trunk_layers": list(self.trunk_layers),
            "p": self.p,
            "activation": self.activation,
            "init_seed": self.init_seed,
            "rnn_input": self.rnn_input,
            "trunk_steps": None if self.trunk_steps is None else list(self.trunk_steps),
        }

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Parameter name -> shape, in the canonical parameter order."""
        shapes: Dict[str, Tuple[int, ...]] = {
            "rnn.w_in": (1, self.rnn_hidden),
            "rnn.w_rec": (self.rnn_hidden, self.rnn_hidden),
            "rnn.bias": (self.rnn_hidden,),
        }
        for prefix, fan_in, widths in (("branch", self.rnn_hidden + 1, self.branch_layers),
                                       ("trunk", 1, self.trunk_layers)):
            for index, fan_out in enumerate(widths):
                shapes[f"{prefix}.{index}.weight"] = (fan_in, fan_out)
                shapes[f"{prefix}.{index}.bias"] = (fan_out,)
                fan_in = fan_out
        return shapes


@dataclass
class DeepONetParams:
    """Every trainable tensor of F_theta, keyed by canonical name."""

    config: NetConfig
    tensors: Dict[str, Tensor]

    def __post_init__(self) -> None:
        expected = self.config.shapes()
        if list(self.tensors) != list(expected):
            raise ValidationError(
                f"Parameter names {list(self.tensors)} do not match config {list(expected)}")
        for name, shape in expected.items():
            tensor = self.tensors[name]
            if tensor.shape != shape:
                raise ValidationError(f"{name} has shape {tensor.shape}, expected {shape}")
            if not np.all(np.isfinite(tensor.data)):
                raise ValidationError(f"{name} contains non-finite entries")
            tensor.name = name

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> List[str]:
        return list(self.tensors)

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.tensors.items()}

    def copy(self) -> "DeepONetParams":
        return DeepONetParams(self.config, {
            name: Tensor(tensor.data.copy(), requires_grad=tensor.requires_grad)
            for name, tensor in self.tensors.items()})

    def requires_grad_(self, flag: bool = True) -> "DeepONetParams":
        for tensor in self.tensors.values():
            tensor.requires_grad = flag
        return self

    @classmethod
    def from_arrays(cls, config: NetConfig, arrays: Dict[str, np.ndarray]) -> "DeepONetParams":
        missing = [name for name in config.shapes() if name not in arrays]
        if missing:
            raise ValidationError(f"Missing parameter tensors: {missing}")
        return cls(config, {name: Tensor(arrays[name]) for name in config.shapes()})


def init_params(config: NetConfig) -> DeepONetParams:
    """
    Scaled-uniform weights (bound ``sqrt(6 / (fan_in + fan_out))``), zero biases.

    Draws come from the package stream keyed by ``config.init_seed`` in the
    canonical parameter order, so the same config always yields the same
    parameters.

    With ``config.trunk_steps = (start, stop, width)`` the first trunk layer
    is set afterwards to smooth steps ``act((t - c_j) / width)`` with centres
    ``c_j`` evenly spaced on [start, stop]; the random draws are unchanged.
    """
    rng = make_generator(config.init_seed)
    tensors: Dict[str, Tensor] = {}
    for name, shape in config.shapes().items():
        if name.endswith("bias"):
            tensors[name] = Tensor(np.zeros(shape), requires_grad=True)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)
    if config.trunk_steps is not None:
        start, stop, width = config.trunk_steps
        centres = np.linspace(start, stop, config.trunk_layers[0])
        tensors["trunk.0.weight"].data[...] = 1.0 / width
        tensors["trunk.0.bias"].data[...] = -centres / width
    return DeepONetParams(config, tensors)


def zero_params(config: NetConfig) -> DeepONetParams:
    return DeepONetParams(config, {name: Tensor(np.zeros(shape), requires_grad=True)
                                   for name, shape in config.shapes().items()})


@dataclass
class EvalCounter:
    """Counts sub-network passes; a trunk pass is one query row."""

    encodes: int = 0
    branches: int = 0
    trunk_rows: int = 0


def _as_sequences(params: DeepONetParams, bvalues) -> np.ndarray:
    seq = np.asarray(bvalues, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[np.newaxis, :]
    if seq.ndim != 2 or seq.shape[1] == 0:
        raise InvalidArgumentError(f"Brownian input must be a non-empty sequence, got shape {seq.shape}")
    if params.config.rnn_input == "increments":
        seq = np.diff(seq, axis=1, prepend=0.0)
    return seq


def encode_path(params: DeepONetParams, bvalues, counter: Optional[EvalCounter] = None) -> Tensor:
    """
    Run the recurrent encoder over one sequence (returns shape (H,)) or a batch
    of equal-length sequences (rows of an (N, L) matrix, returns (N, H)).
    """
    seq = _as_sequences(params, bvalues)
    single = np.ndim(bvalues) == 1
    w_in, w_rec, bias = params["rnn.w_in"], params["rnn.w_rec"], params["rnn.bias"]
    hidden: Optional[Tensor] = None
    for j in range(seq.shape[1]):
        pre = matmul(Tensor(seq[:, j:j + 1]), w_in)
        if hidden is not None:
            pre = add(pre, matmul(hidden, w_rec))
        hidden = tanh(add(pre, bias))
    if counter is not None:
        counter.encodes += seq.shape[0]
    if single:
        return reshape(hidden, (params.config.rnn_hidden,))
    return hidden


def _mlp(params: DeepONetParams, prefix: str, z: Tensor, n_layers: int,
         activate_last: bool) -> Tensor:
    activation = ACTIVATIONS[params.config.activation]
    for index in range(n_layers):
        z = add(matmul(z, params[f"{prefix}.{index}.weight"]), params[f"{prefix}.{index}.bias"])
        if index < n_layers - 1 or activate_last:
            z = activation(z)
    return z


def branch_forward(params: DeepONetParams, hidden: Tensor, x0) -> Tensor:
    """MLP over concat(hidden, x0); the last layer is affine."""
    hidden = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    single = hidden.data.ndim == 1
    if single:
        hidden = reshape(hidden, (1, hidden.size))
    x0_col = np.asarray(x0, dtype=np.float64).reshape(-1, 1)
    if hidden.data.ndim != 2 or hidden.shape[1] != params.config.rnn_hidden \
            or x0_col.shape[0] != hidden.shape[0]:
        raise InvalidArgumentError(
            f"branch_forward: hidden {hidden.shape} and {x0_col.shape[0]} initial values do not "
            f"match rnn_hidden={params.config.rnn_hidden}")
    z = concat(hidden, Tensor(x0_col))
    out = _mlp(params, "branch", z, len(params.config.branch_layers), activate_last=False)
    return reshape(out, (params.config.p,)) if single else out


def trunk_forward(params: DeepONetParams, t) -> Tensor:
    """MLP over the raw query time; every layer, the last included, is activated."""
    times = np.asarray(t, dtype=np.float64)
    column = Tensor(times.reshape(-1, 1))
    out = _mlp(params, "trunk", column, len(params.config.trunk_layers), activate_last=True)
    return reshape(out, (params.config.p,)) if times.ndim == 0 else out


def deeponet_forward(params: DeepONetParams, x0s, bmatrix, queries) -> Tensor:
    """
    Differentiable batch forward: predictions of shape (N, Q) for N
    (x0, Brownian sequence) pairs at Q shared query times.
    """
    hidden = encode_path(params, np.atleast_2d(np.asarray(bmatrix, dtype=np.float64)))
    branch = branch_forward(params, hidden, x0s)
    trunk = trunk_forward(params, np.asarray(queries, dtype=np.float64).reshape(-1))
    return matmul(branch, transpose(trunk))


def _check_queries(queries) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(queries)):
        raise InvalidArgumentError("Query times must be finite")
    return queries


def deeponet_eval(params: DeepONetParams, x0: float, bvalues, queries,
                  counter: Optional[EvalCounter] = None) -> np.ndarray:
    """
    F_theta(x0, B)(t) for every t in ``queries``.

    The branch vector is computed once. Trunk rows are evaluated in zero-padded
    blocks of QUERY_BLOCK, so each output depends only on its own query time.
    """
    queries = _check_queries(queries)
    hidden = encode_path(params, bvalues, counter)
    latent = branch_forward(params, hidden, x0).data
    if counter is not None:
        counter.branches += 1
        counter.trunk_rows += queries.size
    out = np.empty(queries.size)
    block = np.zeros(QUERY_BLOCK)
    for start in range(0, queries.size, QUERY_BLOCK):
        stop = min(start + QUERY_BLOCK, queries.size)
        block[:] = 0.0
        block[:stop - start] = queries[start:stop]
        out[start:stop] = (trunk_forward(params, block).data @ latent)[:stop - start]
    return out


def predict_batch(params: DeepONetParams, x0s, bmatrix, queries, chunk: int = 1024,
                  counter: Optional[EvalCounter] = None) -> np.ndarray:
    """
    Amortized inference for many paths at shared query times, shape (N, Q).

    The trunk is evaluated once; paths are encoded ``chunk`` at a time. Agrees
    with deeponet_eval up to floating-point summation order.
    """
    x0s = np.asarray(x0s, dtype=np.float64).reshape(-1)
    bmatrix = np.atleast_2d(np.asarray(bmatrix, dtype=np.float64))
    if bmatrix.shape[0] != x0s.size:
        raise InvalidArgumentError(f"{x0s.size} initial values for {bmatrix.shape[0]} Brownian inputs")
    queries = _check_queries(queries)
    trunk = trunk_forward(params, queries).data
    out = np.empty((x0s.size, queries.size))
    for start in range(0, x0s.size, chunk):
        stop = min(start + chunk, x0s.size)
        hidden = encode_path(params, bmatrix[start:stop], counter)
        out[start:stop] = branch_forward(params, hidden, x0s[start:stop]).data @ trunk.T
    if counter is not None:
        counter.branches += x0s.size
        counter.trunk_rows += queries.size
    return out


class DeepONet:
    """
    A trained operator together with the sensor set its branch input was
    sampled on (``None`` means the full grid of each Brownian path).
    """

    def __init__(self, params: DeepONetParams, sensors: Optional[SensorSet] = None) -> None:
        self.params = params
        self.sensors = sensors

    @property
    def config(self) -> NetConfig:
        return self.params.config

    def branch_input(self, bpath: BrownianPath) -> np.ndarray:
        if self.sensors is None:
            return np.asarray(bpath.values)
        return np.asarray(bpath.values)[self.sensors.indices_on(bpath.grid)]

    def branch_inputs(self, bpaths: Sequence[BrownianPath]) -> np.ndarray:
        return np.stack([self.branch_input(bpath) for bpath in bpaths])

    def __call__(self, x0: float, bpath: BrownianPath, queries=None) -> np.ndarray:
        queries = bpath.grid.times if queries is None else queries
        return deeponet_eval(self.params, x0, self.branch_input(bpath), queries)

    def predict_paths(self, x0s, bpaths: Sequence[BrownianPath]) -> np.ndarray:
        """Predictions on the (shared) grid of ``bpaths``, shape (N, M)."""
        if not bpaths:
            raise InvalidArgumentError("No Brownian paths to predict on")
        grid = bpaths[0].grid
        if any(bpath.grid != grid for bpath in bpaths):
            raise InvalidArgumentError("predict_paths needs paths on one grid")
        return predict_batch(self.params, x0s, self.branch_inputs(bpaths), grid.times)

    def predict_from_sensors(self, x0s, sensor_values: np.ndarray, queries) -> np.ndarray:
        """Predictions at ``queries`` from Brownian values at the sensor times only, shape (N, Q)."""
        if self.sensors is None:
            raise ValidationError("Sensor-only sampling needs an operator trained on a sensor set")
        sensor_values = np.atleast_2d(sensor_values)
        if sensor_values.shape[1] != len(self.sensors):
            raise ValidationError(
                f"Expected {len(self.sensors)} sensor values per path, got {sensor_values.shape[1]}")
        return predict_batch(self.params, x0s, sensor_values, queries)

    def sample_terminal(self, x0s, sensor_values: np.ndarray, T: float) -> np.ndarray:
        return self.predict_from_sensors(x0s, sensor_values, [T])[:, 0]
