"""
Reverse-mode differentiation over a dynamic tape
================================================
Dense float64 tensors of rank <= 2 and the handful of primitives the operator
network needs. Operations are recorded on the innermost active ``Tape`` when
any input requires gradients; with no active tape they only compute values.

    with Tape() as tape:
        loss = mean_sq(sub(matmul(x, w), y))
    (grad_w,) = backward(tape, loss, [w])

Broadcasting is limited to adding a row vector to every row of a matrix
(``add(matrix, bias)``); every other binary op requires equal shapes.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdeoperator.utils.errors import InvalidArgumentError

_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None) -> None:
        array = np.array(data, dtype=np.float64)
        if array.ndim > 2:
            raise InvalidArgumentError(f"Tensors are limited to rank 2, got shape {array.shape}")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgumentError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tape:
    """Ordered record of primitive operations; inputs always precede their users."""

    def __init__(self) -> None:
        self.records: List[TapeRecord] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
               backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]) -> None:
        self.records.append(TapeRecord(op, inputs, output, backward))


def _emit(op: str, inputs: Tuple[Tensor, ...], value: np.ndarray,
          backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]) -> Tensor:
    requires_grad = any(tensor.requires_grad for tensor in inputs)
    out = Tensor(value, requires_grad=requires_grad)
    tape = _active_tape()
    if requires_grad and tape is not None:
        tape.record(op, inputs, out, backward)
    return out


def _shape_error(op: str, a: Tensor, b: Tensor) -> InvalidArgumentError:
    return InvalidArgumentError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (n,k)@(k,m), (n,k)@(k,) and (k,)@(k,m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or (a.data.ndim == 1 and b.data.ndim == 1):
        raise _shape_error("matmul", a, b)
    if a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    av, bv = a.data, b.data

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return np.outer(g, bv), av.T @ g
        return bv @ g, np.outer(av, g)

    return _emit("matmul", (a, b), av @ bv, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector added to every row of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return _emit("add_row", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))
    raise _shape_error("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    value = np.tanh(a.data)
    return _emit("tanh", (a,), value, lambda g: (g * (1.0 - value * value),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    value = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", (a,), value, lambda g: (g * value * (1.0 - value),))


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join along the last axis (vectors end to end, matrices side by side)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim or a.data.ndim == 0 or a.shape[:-1] != b.shape[:-1]:
        raise _shape_error("concat", a, b)
    split = a.shape[-1]
    value = np.concatenate((a.data, b.data), axis=-1)
    return _emit("concat", (a, b), value, lambda g: (g[..., :split], g[..., split:]))


def dot(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise _shape_error("dot", a, b)
    av, bv = a.data, b.data
    return _emit("dot", (a, b), np.dot(av, bv), lambda g: (g * bv, g * av))


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise InvalidArgumentError(f"transpose needs a matrix, got shape {a.shape}")
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size or len(shape) > 2:
        raise InvalidArgumentError(f"reshape: cannot view shape {a.shape} as {shape}")
    original = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape).copy(), lambda g: (g.reshape(original),))


def mean_sq(a: Tensor) -> Tensor:
    """Mean of squared entries, a scalar."""
    a = as_tensor(a)
    if a.size == 0:
        raise InvalidArgumentError("mean_sq of an empty tensor")
    av = a.data
    n = av.size
    return _emit("mean_sq", (a,), np.mean(av * av), lambda g: (g * 2.0 * av / n,))


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {"tanh": tanh, "sigmoid": sigmoid}


def backward(tape: Tape, output: Tensor,
             wrt: Optional[Sequence[Tensor]] = None) -> List[np.ndarray]:
    """
    Propagate adjoints of a scalar ``output`` back through ``tape``.

    Returns one gradient per tensor in ``wrt`` (zeros for tensors the output
    does not depend on) and stores it in ``tensor.grad``. When ``wrt`` is
    omitted, gradients are returned for every requires-grad leaf on the tape.
    """
    if output.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar output, got shape {output.shape}")
    adjoints: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    produced = set()
    for record in reversed(tape.records):
        produced.add(id(record.output))
        grad_out = adjoints.pop(id(record.output), None)
        if grad_out is None:
            continue
        for tensor, grad_in in zip(record.inputs, record.backward(grad_out)):
            if grad_in is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in adjoints:
                adjoints[key] = adjoints[key] + grad_in
            else:
                adjoints[key] = np.array(grad_in, dtype=np.float64).reshape(tensor.shape)

    if wrt is None:
        seen = set()
        wrt = []
        for record in tape.records:
            for tensor in record.inputs:
                key = id(tensor)
                if tensor.requires_grad and key not in produced and key not in seen:
                    seen.add(key)
                    wrt.append(tensor)
    grads = []
    for tensor in wrt:
        grad = adjoints.get(id(tensor))
        grad = np.zeros_like(tensor.data) if grad is None else grad.reshape(tensor.shape)
        tensor.grad = grad
        grads.append(grad)
    return grads


def _central_difference(f: Callable[[], Tensor], tensor: Tensor, index: int,
                        eps: float, order: int) -> float:
    flat = tensor.data.reshape(-1)
    original = flat[index]

    def at(offset: float) -> float:
        flat[index] = original + offset
        return f().item()

    try:
        if order == 2:
            return (at(eps) - at(-eps)) / (2.0 * eps)
        return (8.0 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12.0 * eps)
    finally:
        flat[index] = original


def grad_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
               eps: float = 1e-5, n_coords: int = 100, seed: int = 0,
               order: int = 2) -> float:
    """
    Compare tape gradients of ``f(params)`` with central differences.

    Samples up to ``n_coords`` coordinates across ``params`` and returns the
    largest ``|autodiff - fd| / max(|fd|, 1e-8)``. ``order`` selects the
    2-point (default) or 4-point central stencil.
    """
    if eps <= 0:
        raise InvalidArgumentError(f"Finite-difference step must be positive, got {eps}")
    if order not in (2, 4):
        raise InvalidArgumentError(f"Stencil order must be 2 or 4, got {order}")
    with Tape() as tape:
        output = f(params)
    grads = backward(tape, output, params)

    coords = [(i, j) for i, tensor in enumerate(params) for j in range(tensor.size)]
    if len(coords) > n_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[k] for k in sorted(picked)]

    worst = 0.0
    for i, j in coords:
        fd = _central_difference(lambda: f(params), params[i], j, eps, order)
        ad = float(grads[i].reshape(-1)[j])
        worst = max(worst, abs(ad - fd) / max(abs(fd), 1e-8))
    return worst
