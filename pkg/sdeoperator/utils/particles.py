"""
McKean-Vlasov models and the Euler-Maruyama particle (EMP) solver.

The law ``mu_t`` in the coefficients is replaced by the empirical measure of
N particles. Coefficients receive the particle array and must depend on it
only through its empirical distribution (i.e. be permutation invariant).
"""

from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from sdeoperator.utils.errors import InvalidArgumentError, NumericOverflowError
from sdeoperator.utils.paths import BrownianPath, TimeGrid
from sdeoperator.utils.solvers import ModelDescriptor

MeasureCoefficient = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

# Rows of the (chunk, N) comparison block evaluated at once by the generic drift.
DEFAULT_CHUNK = 256


@dataclass(frozen=True)
class McKeanVlasovModel:
    drift: MeasureCoefficient
    diffusion: MeasureCoefficient
    descriptor: ModelDescriptor


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Trajectories of an N-particle run, shape (N, M)."""

    grid: TimeGrid
    trajectories: np.ndarray
    seeds: List[int]

    def __post_init__(self) -> None:
        trajectories = np.array(self.trajectories, dtype=np.float64)
        if trajectories.ndim != 2 or trajectories.shape[1] != self.grid.M:
            raise InvalidArgumentError(
                f"Trajectories shape {trajectories.shape} does not match grid M={self.grid.M}")
        if len(self.seeds) != trajectories.shape[0]:
            raise InvalidArgumentError("One seed per particle is required")
        trajectories.setflags(write=False)
        object.__setattr__(self, "trajectories", trajectories)

    @property
    def n_particles(self) -> int:
        return int(self.trajectories.shape[0])

    @property
    def terminal(self) -> np.ndarray:
        return self.trajectories[:, -1]


def _check_particles(particles: np.ndarray) -> np.ndarray:
    particles = np.asarray(particles, dtype=np.float64)
    if particles.size == 0:
        raise InvalidArgumentError("Empirical measure needs at least one particle")
    return particles


def burgers_drift(particles: np.ndarray, x):
    """
    ``int H(x - y) mu(dy)`` with ``H = 1[. >= 0]`` under the empirical measure:
    the fraction of particles ``<= x``. Ties count fully, since H(0) = 1.

    Direct counting, O(N) per query point.
    """
    particles = _check_particles(particles)
    x_arr = np.asarray(x, dtype=np.float64)
    counts = np.count_nonzero(particles[np.newaxis, :] <= x_arr.reshape(-1, 1), axis=1)
    result = counts / particles.size
    return float(result[0]) if x_arr.ndim == 0 else result.reshape(x_arr.shape)


def burgers_drift_sorted(particles: np.ndarray, x):
    """Same values as burgers_drift via sorting, O(log N) per query point."""
    particles = _check_particles(particles)
    ordered = np.sort(particles)
    counts = np.searchsorted(ordered, np.asarray(x, dtype=np.float64), side="right")
    result = counts / particles.size
    return float(result) if np.ndim(result) == 0 else result


def burgers_model(sigma: float = 1.0, fast: bool = False) -> McKeanVlasovModel:
    """Burgers-type McKean-Vlasov SDE ``dX = (int H(X - y) mu(dy)) dt + sigma dB``."""
    kernel = burgers_drift_sorted if fast else burgers_drift
    return McKeanVlasovModel(
        drift=lambda t, x, particles: kernel(particles, x),
        diffusion=lambda t, x, particles: sigma * np.ones_like(x),
        descriptor=ModelDescriptor("burgers", {"sigma": float(sigma)}),
    )


def interaction_free_model(drift: float = 0.0, sigma: float = 1.0) -> McKeanVlasovModel:
    """Constant coefficients; the particles decouple. Used as an EMP sanity case."""
    return McKeanVlasovModel(
        drift=lambda t, x, particles: drift * np.ones_like(x),
        diffusion=lambda t, x, particles: sigma * np.ones_like(x),
        descriptor=ModelDescriptor("free", {"drift": float(drift), "sigma": float(sigma)}),
    )


def _evaluate(coefficient: MeasureCoefficient, t: float, snapshot: np.ndarray,
              chunk: int) -> np.ndarray:
    out = np.empty_like(snapshot)
    for start in range(0, snapshot.size, chunk):
        stop = min(start + chunk, snapshot.size)
        out[start:stop] = coefficient(t, snapshot[start:stop], snapshot)
    return out


def emp_solve(model: McKeanVlasovModel, x0s: Sequence[float], bpaths: Sequence[BrownianPath],
              chunk: int = DEFAULT_CHUNK) -> ParticleEnsemble:
    """
    Euler-Maruyama particle iteration.

    Every step freezes the empirical measure from all positions at step m
    before any particle advances:
    ``X^n_{m+1} = X^n_m + h a(t_m, X^n_m, mu^N_m) + b(t_m, X^n_m, mu^N_m) dB^n_m``.

    Raises:
        InvalidArgumentError: empty ensemble, count mismatch or paths on different grids
        NumericOverflowError: a particle becomes non-finite (reports particle and step)
    """
    x0s = np.asarray(x0s, dtype=np.float64)
    if len(bpaths) == 0:
        raise InvalidArgumentError("EMP needs at least one particle")
    if x0s.shape != (len(bpaths),):
        raise InvalidArgumentError(f"{x0s.size} initial values for {len(bpaths)} Brownian paths")
    grid = bpaths[0].grid
    for index, bpath in enumerate(bpaths):
        if bpath.grid != grid:
            raise InvalidArgumentError(f"Brownian path {index} is on {bpath.grid}, expected {grid}")

    increments = np.stack([bpath.increments for bpath in bpaths])
    times = grid.times
    h = grid.h
    positions = np.empty((x0s.size, grid.M))
    positions[:, 0] = x0s
    for m in range(grid.M - 1):
        snapshot = positions[:, m].copy()
        a = _evaluate(model.drift, times[m], snapshot, chunk)
        b = _evaluate(model.diffusion, times[m], snapshot, chunk)
        nxt = snapshot + a * h + b * increments[:, m]
        bad = np.flatnonzero(~np.isfinite(nxt))
        if bad.size:
            raise NumericOverflowError(
                f"Non-finite particle in {model.descriptor}", step=m, particle=int(bad[0]))
        positions[:, m + 1] = nxt
    return ParticleEnsemble(grid=grid, trajectories=positions,
                            seeds=[bpath.seed for bpath in bpaths])
