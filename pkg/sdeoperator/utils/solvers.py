"""
Reference SDE solvers
=====================
Euler-Maruyama for coefficient-defined scalar SDEs

    dX_t = a(t, X_t) dt + b(t, X_t) dB_t

closed forms for geometric Brownian motion and Ornstein-Uhlenbeck, and the
Langevin drift construction. Coefficients are evaluated at the left end of
each step (Ito convention). Coefficient callables must accept either a float
or a numpy array for ``x`` so that the batched solver can call them once per
step for all paths.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence

import numpy as np

from sdeoperator.utils.errors import InvalidArgumentError, NumericOverflowError
from sdeoperator.utils.paths import BrownianPath, PathDataset, SolutionPath, TimeGrid

Coefficient = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelDescriptor:
    """Human-readable model name plus numeric parameters."""

    name: str
    params: Dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        inner = ",".join(f"{key}={value!r}" for key, value in sorted(self.params.items()))
        return f"{self.name}({inner})"

    def to_dict(self) -> Dict[str, object]:
        return {"name": self.name, "params": dict(self.params)}


@dataclass(frozen=True)
class SdeModel:
    """Drift/diffusion pair; ``reference`` is an optional exact solver."""

    drift: Coefficient
    diffusion: Coefficient
    descriptor: ModelDescriptor
    reference: Optional[Callable[[float, BrownianPath], SolutionPath]] = None

    def solve(self, x0: float, bpath: BrownianPath) -> SolutionPath:
        """Reference solution on ``bpath``: the closed form if known, else EM."""
        if self.reference is not None:
            return self.reference(x0, bpath)
        return euler_maruyama(self, x0, bpath)


def _elapsed(grid: TimeGrid) -> np.ndarray:
    return np.arange(grid.M, dtype=np.float64) * grid.h


def euler_maruyama(model: SdeModel, x0: float, bpath: BrownianPath) -> SolutionPath:
    """
    Integrate ``model`` along ``bpath`` with the Euler-Maruyama scheme.

    Args:
        model: SDE coefficients
        x0: initial value
        bpath: driving Brownian path; the output lives on its grid

    Returns:
        SolutionPath with ``X_{k+1} = X_k + a(t_k, X_k) h + b(t_k, X_k) dB_k``

    Raises:
        NumericOverflowError: a coefficient or the state stops being finite
    """
    x0 = float(x0)
    if not np.isfinite(x0):
        raise InvalidArgumentError(f"Initial value must be finite, got {x0}")
    grid = bpath.grid
    times = grid.times
    h = grid.h
    dB = bpath.increments
    values = np.empty(grid.M)
    values[0] = x0
    for k in range(grid.M - 1):
        x = values[k]
        a = model.drift(times[k], x)
        b = model.diffusion(times[k], x)
        nxt = x + a * h + b * dB[k]
        if not (np.isfinite(a) and np.isfinite(b) and np.isfinite(nxt)):
            raise NumericOverflowError(f"Non-finite value in {model.descriptor}", step=k)
        values[k + 1] = nxt
    return SolutionPath(grid=grid, values=values, x0=x0)


def euler_maruyama_batch(model: SdeModel, x0s: np.ndarray, increments: np.ndarray,
                         grid: TimeGrid) -> np.ndarray:
    """
    Vectorized EM over many paths sharing ``grid``.

    ``increments`` has shape (n_paths, M-1). Row i of the result equals
    ``euler_maruyama`` on path i bit for bit, since the same elementwise
    expression is evaluated.
    """
    x0s = np.asarray(x0s, dtype=np.float64)
    increments = np.asarray(increments, dtype=np.float64)
    if increments.shape != (x0s.size, grid.M - 1):
        raise InvalidArgumentError(
            f"Increments shape {increments.shape} does not match ({x0s.size}, {grid.M - 1})")
    times = grid.times
    h = grid.h
    values = np.empty((x0s.size, grid.M))
    values[:, 0] = x0s
    for k in range(grid.M - 1):
        x = values[:, k]
        a = model.drift(times[k], x)
        b = model.diffusion(times[k], x)
        nxt = x + a * h + b * increments[:, k]
        if not np.all(np.isfinite(nxt)):
            raise NumericOverflowError(f"Non-finite value in {model.descriptor}", step=k)
        values[:, k + 1] = nxt
    return values


def exact_gbm(a: float, b: float, x0: float, bpath: BrownianPath) -> SolutionPath:
    """``X_t = x0 * exp((a - b^2/2) t + b B_t)`` evaluated on the grid."""
    elapsed = _elapsed(bpath.grid)
    values = x0 * np.exp((a - 0.5 * b * b) * elapsed + b * bpath.values)
    return SolutionPath(grid=bpath.grid, values=values, x0=x0)


def exact_ou(a: float, b: float, x0: float, bpath: BrownianPath) -> SolutionPath:
    """
    OU solution ``X_t = e^{-at} (x0 + b * int_0^t e^{as} dB_s)`` for
    ``dX = -aX dt + b dB``.

    The stochastic integral is the left-point sum on the path's own grid, so
    this is a grid-biased reference that converges to the true solution as
    h -> 0 and stays pathwise comparable with solver output.
    """
    elapsed = _elapsed(bpath.grid)
    weighted = np.exp(a * elapsed[:-1]) * bpath.increments
    integral = np.concatenate(([0.0], np.cumsum(weighted)))
    values = np.exp(-a * elapsed) * (x0 + b * integral)
    return SolutionPath(grid=bpath.grid, values=values, x0=x0)


def strong_error(reference: SolutionPath, approx: SolutionPath) -> float:
    """``sup_k |ref_k - approx_k|^2`` for one path."""
    if reference.grid != approx.grid:
        raise InvalidArgumentError(
            f"Cannot compare paths on different grids: {reference.grid} vs {approx.grid}")
    return float(np.max((reference.values - approx.values) ** 2))


def gbm_model(a: float = 0.05, b: float = 0.2) -> SdeModel:
    """Geometric Brownian motion ``dX = aX dt + bX dB``."""
    return SdeModel(
        drift=lambda t, x: a * x,
        diffusion=lambda t, x: b * x,
        descriptor=ModelDescriptor("gbm", {"a": float(a), "b": float(b)}),
        reference=lambda x0, bpath: exact_gbm(a, b, x0, bpath),
    )


def ou_model(a: float = 1.0, b: float = 1.0) -> SdeModel:
    """Ornstein-Uhlenbeck ``dX = -aX dt + b dB``."""
    return SdeModel(
        drift=lambda t, x: -a * x,
        diffusion=lambda t, x: b * np.ones_like(x),
        descriptor=ModelDescriptor("ou", {"a": float(a), "b": float(b)}),
        reference=lambda x0, bpath: exact_ou(a, b, x0, bpath),
    )


def brownian_model(sigma: float = 1.0) -> SdeModel:
    """``dX = sigma dB``; EM is exact here."""
    return SdeModel(
        drift=lambda t, x: np.zeros_like(x),
        diffusion=lambda t, x: sigma * np.ones_like(x),
        descriptor=ModelDescriptor("brownian", {"sigma": float(sigma)}),
    )


def langevin_model(grad_log_p: Callable[[np.ndarray], np.ndarray],
                   target: str = "custom",
                   params: Optional[Dict[str, float]] = None) -> SdeModel:
    """Langevin SDE ``dX = 1/2 grad log p(X) dt + dB`` whose stationary law is p."""
    descriptor_params = {"target": target}
    descriptor_params.update(params or {})
    return SdeModel(
        drift=lambda t, x: 0.5 * grad_log_p(x),
        diffusion=lambda t, x: np.ones_like(x),
        descriptor=ModelDescriptor("langevin", descriptor_params),
    )


def gaussian_langevin_model(mean: float = 0.0, std: float = 1.0) -> SdeModel:
    """Langevin SDE targeting N(mean, std^2), i.e. ``grad log p(x) = -(x - mean)/std^2``."""
    variance = std * std
    return langevin_model(lambda x: -(x - mean) / variance, target="gaussian",
                          params={"mean": float(mean), "std": float(std)})


def solve_batch(model: SdeModel, x0s, bpaths: Sequence[BrownianPath],
                metadata: Optional[Dict[str, Any]] = None) -> PathDataset:
    """
    Reference solutions for many paths on one grid, paired into a dataset.

    Uses the closed form when the model has one, otherwise the vectorized EM
    (which matches euler_maruyama path by path).
    """
    x0s = np.broadcast_to(np.asarray(x0s, dtype=np.float64), (len(bpaths),))
    if len(bpaths) == 0:
        raise InvalidArgumentError("solve_batch needs at least one Brownian path")
    grid = bpaths[0].grid
    if model.reference is not None:
        solutions = [model.reference(float(x0), bpath) for x0, bpath in zip(x0s, bpaths)]
    else:
        increments = np.stack([bpath.increments for bpath in bpaths])
        values = euler_maruyama_batch(model, x0s, increments, grid)
        solutions = [SolutionPath(grid=grid, values=row, x0=float(x0))
                     for row, x0 in zip(values, x0s)]
    meta = {"model": model.descriptor.to_dict()}
    meta.update(metadata or {})
    return PathDataset(grid=grid, brownian=list(bpaths), solutions=solutions, metadata=meta)
