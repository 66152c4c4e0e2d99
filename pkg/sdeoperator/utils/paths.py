"""
Time grids and Brownian paths
=============================
Uniform time grids, seeded Brownian-path generation (full grid and sparse
sensor sets), multiscale rescaling and the in-memory dataset container.

Random streams
--------------
Every path owns a Philox-4x64 counter-based stream (``numpy.random.Philox``)
keyed by a 64-bit seed. Per-path seeds are derived from ``(base_seed, index)``
with ``numpy.random.SeedSequence``, so any single path can be regenerated
without replaying the others. Gaussian variates come from
``Generator.standard_normal`` (numpy's ziggurat sampler); the pair
(Philox, ziggurat) is fixed for the whole package.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from sdeoperator.utils.errors import InvalidArgumentError, ValidationError

SEED_LIMIT = 2 ** 64
WORD_MASK = 2 ** 32 - 1


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    array.setflags(write=False)
    return array


def make_generator(seed: int) -> np.random.Generator:
    """Return the package's Gaussian stream for a 64-bit seed."""
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise InvalidArgumentError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.Philox(key=seed))


def derive_seed(base_seed: int, index: int) -> int:
    """Hash ``(base_seed, index)`` into the 64-bit seed of one path."""
    if base_seed < 0 or index < 0:
        raise InvalidArgumentError("Base seed and path index must be non-negative")
    base_seed, index = int(base_seed), int(index)
    if base_seed >= SEED_LIMIT or index >= SEED_LIMIT:
        raise InvalidArgumentError("Base seed and path index must fit in 64 bits")
    # fixed-width words: SeedSequence would otherwise alias (x, i) with (x + i * 2**32, 0)
    words = [base_seed & WORD_MASK, base_seed >> 32, index & WORD_MASK, index >> 32]
    state = np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)
    return int(state[0])


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = t0 + k*h`` for ``k = 0..M-1``."""

    t0: float
    h: float
    M: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.t0):
            raise InvalidArgumentError(f"Grid origin must be finite, got {self.t0}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise InvalidArgumentError(f"Grid step must be positive, got h={self.h}")
        if int(self.M) != self.M or self.M < 2:
            raise InvalidArgumentError(f"Grid needs at least 2 points, got M={self.M}")

    @property
    def T(self) -> float:
        return (self.M - 1) * self.h

    @property
    def times(self) -> np.ndarray:
        # derived from k each time; never accumulated
        return self.t0 + np.arange(self.M, dtype=np.float64) * self.h

    def time(self, k: int) -> float:
        return self.t0 + k * self.h

    def describe(self) -> Dict[str, float]:
        return {"t0": self.t0, "h": self.h, "M": self.M}


def make_grid(t0: float, h: float, M: int) -> TimeGrid:
    return TimeGrid(float(t0), float(h), int(M))


def rescale_grid(grid: TimeGrid, factor: float) -> TimeGrid:
    """Scale the step by ``factor`` keeping M and t0, so T scales too."""
    if not (np.isfinite(factor) and factor > 0):
        raise InvalidArgumentError(f"Scale factor must be positive, got {factor}")
    if factor == 1:
        return grid
    return TimeGrid(grid.t0, grid.h * factor, grid.M)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Brownian values on a grid; ``values[0]`` is always 0."""

    grid: TimeGrid
    values: np.ndarray
    seed: int
    increments: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.shape != (self.grid.M,):
            raise ValidationError(
                f"Brownian path has {values.shape[0] if values.ndim else 0} values "
                f"for a grid of {self.grid.M} points")
        if values[0] != 0.0:
            raise ValidationError(f"Brownian path must start at 0, got {values[0]}")
        object.__setattr__(self, "values", values)
        increments = self.increments
        increments = np.diff(values) if increments is None else increments
        object.__setattr__(self, "increments", _frozen(increments))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BrownianPath):
            return NotImplemented
        return (self.grid == other.grid and self.seed == other.seed
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """SDE solution values on a grid with ``values[0] == x0``."""

    grid: TimeGrid
    values: np.ndarray
    x0: float

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.shape != (self.grid.M,):
            raise ValidationError(
                f"Solution path length {values.shape} does not match grid M={self.grid.M}")
        if values[0] != self.x0:
            raise ValidationError(f"Solution path starts at {values[0]}, expected x0={self.x0}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "x0", float(self.x0))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SolutionPath):
            return NotImplemented
        return (self.grid == other.grid and self.x0 == other.x0
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SensorSet:
    """
    Strictly increasing query times for the Brownian input.

    ``origin`` is the time at which the Brownian motion starts (the grid's
    t0). ``step`` is set for sensor sets built on a grid; gaps are then whole
    multiples of the grid step, so sampling every grid point reproduces
    ``sample_brownian`` bit for bit.
    """

    times: np.ndarray
    origin: float = 0.0
    step: Optional[float] = None

    def __post_init__(self) -> None:
        times = _frozen(self.times)
        origin = float(self.origin)
        if times.ndim != 1 or times.size == 0:
            raise InvalidArgumentError("Sensor set must be a non-empty list of times")
        if not np.all(np.isfinite(times)) or not np.isfinite(origin) or times[0] < origin:
            raise InvalidArgumentError(
                f"Sensor times must be finite and >= {origin}, got {times.tolist()}")
        if np.any(np.diff(times) <= 0):
            raise InvalidArgumentError(f"Sensor times must be strictly increasing, got {times.tolist()}")
        if self.step is not None and not (np.isfinite(self.step) and self.step > 0):
            raise InvalidArgumentError(f"Sensor grid step must be positive, got {self.step}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "step", None if self.step is None else float(self.step))

    def __len__(self) -> int:
        return int(self.times.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensorSet):
            return NotImplemented
        return self.origin == other.origin and np.array_equal(self.times, other.times)

    __hash__ = None

    @classmethod
    def on_grid(cls, grid: TimeGrid, times: Optional[Sequence[float]] = None) -> "SensorSet":
        """Sensors at ``times`` (default: every grid point), checked against ``grid``."""
        times = grid.times if times is None else np.asarray(times, dtype=np.float64)
        sensors = cls(times, origin=grid.t0, step=grid.h)
        sensors.indices_on(grid)
        return sensors

    @classmethod
    def terminal(cls, grid: TimeGrid) -> "SensorSet":
        return cls.on_grid(grid, [grid.time(grid.M - 1)])

    def indices_on(self, grid: TimeGrid) -> np.ndarray:
        """Grid indices of the sensor times; every sensor must sit on the grid."""
        raw = (self.times - grid.t0) / grid.h
        indices = np.rint(raw).astype(np.int64)
        if np.any(indices < 0) or np.any(indices >= grid.M):
            raise ValidationError(f"Sensor times {self.times.tolist()} fall outside the grid")
        tolerance = 1e-9 * max(1.0, abs(grid.T))
        if np.any(np.abs(grid.times[indices] - self.times) > tolerance):
            raise ValidationError(f"Sensor times {self.times.tolist()} are not grid points")
        return indices

    def gaps(self) -> np.ndarray:
        """Time between consecutive sensors, the first measured from ``origin``."""
        if self.step is not None:
            steps = np.rint((self.times - self.origin) / self.step).astype(np.int64)
            return np.diff(np.concatenate(([0], steps))) * self.step
        return np.diff(np.concatenate(([self.origin], self.times)))


@dataclass(eq=False)
class PathDataset:
    """Paired Brownian inputs and SDE solutions on one shared grid."""

    grid: TimeGrid
    brownian: List[BrownianPath]
    solutions: List[SolutionPath]
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.brownian) != len(self.solutions):
            raise ValidationError(
                f"Dataset has {len(self.brownian)} Brownian paths but "
                f"{len(self.solutions)} solution paths")
        for index, (bpath, xpath) in enumerate(zip(self.brownian, self.solutions)):
            if bpath.grid != self.grid or xpath.grid != self.grid:
                raise ValidationError(f"Path {index} is not on the dataset grid {self.grid}")

    def __len__(self) -> int:
        return len(self.brownian)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PathDataset):
            return NotImplemented
        return (self.grid == other.grid and self.brownian == other.brownian
                and self.solutions == other.solutions)

    __hash__ = None

    @property
    def x0s(self) -> np.ndarray:
        return np.array([path.x0 for path in self.solutions], dtype=np.float64)

    @property
    def seeds(self) -> List[int]:
        return [path.seed for path in self.brownian]

    def brownian_matrix(self) -> np.ndarray:
        if not self.brownian:
            return np.zeros((0, self.grid.M))
        return np.stack([path.values for path in self.brownian])

    def solution_matrix(self) -> np.ndarray:
        if not self.solutions:
            return np.zeros((0, self.grid.M))
        return np.stack([path.values for path in self.solutions])

    def subset(self, indices: Sequence[int]) -> "PathDataset":
        return PathDataset(
            grid=self.grid,
            brownian=[self.brownian[i] for i in indices],
            solutions=[self.solutions[i] for i in indices],
            metadata=dict(self.metadata),
        )


def sample_brownian(grid: TimeGrid, seed: int) -> BrownianPath:
    """
    Sample a Brownian path on ``grid`` from the stream keyed by ``seed``.

    ``values[k+1] = values[k] + sqrt(h) * xi_k`` with ``xi_k`` the k-th
    standard normal of the stream, so identical (grid, seed) pairs give
    bit-identical paths.
    """
    rng = make_generator(seed)
    increments = np.sqrt(grid.h) * rng.standard_normal(grid.M - 1)
    values = np.concatenate(([0.0], np.cumsum(increments)))
    return BrownianPath(grid=grid, values=values, seed=int(seed), increments=increments)


def sample_brownian_batch(grid: TimeGrid, base_seed: int, n: int,
                          start_index: int = 0, threads: int = 1) -> List[BrownianPath]:
    """Sample ``n`` paths with seeds ``derive_seed(base_seed, start_index + i)``."""
    if n < 0:
        raise InvalidArgumentError(f"Path count must be non-negative, got {n}")
    seeds = [derive_seed(base_seed, start_index + i) for i in range(n)]
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: sample_brownian(grid, s), seeds))
    return [sample_brownian(grid, s) for s in seeds]


def sample_brownian_at_sensors(sensors: SensorSet, seed: int) -> np.ndarray:
    """
    Sample ``B`` jointly at the sensor times only.

    Increments between consecutive sensors, starting from ``B = 0`` at the
    sensor origin, are independent Gaussians with variance equal to the time
    gap, so a single sensor ``{T}`` costs one draw. A sensor at the origin
    consumes no draw.
    """
    if not isinstance(sensors, SensorSet):
        sensors = SensorSet(np.asarray(sensors, dtype=np.float64))
    gaps = sensors.gaps()
    positive = gaps > 0
    increments = np.zeros_like(gaps)
    rng = make_generator(seed)
    increments[positive] = np.sqrt(gaps[positive]) * rng.standard_normal(int(positive.sum()))
    return np.cumsum(increments)


def sample_sensor_block(sensors: SensorSet, base_seed: int, n: int) -> np.ndarray:
    """
    Sample ``n`` independent sensor-only paths from one block stream.

    Rows are drawn in row-major order from the stream keyed by
    ``derive_seed(base_seed, 0)``; this is the fast-sampling mode, with one
    generator for the whole batch instead of one per path.
    """
    if n < 1:
        raise InvalidArgumentError(f"Path count must be positive, got {n}")
    gaps = sensors.gaps()
    positive = gaps > 0
    rng = make_generator(derive_seed(base_seed, 0))
    draws = rng.standard_normal((n, int(positive.sum())))
    increments = np.zeros((n, gaps.size))
    increments[:, positive] = draws * np.sqrt(gaps[positive])
    return np.cumsum(increments, axis=1)
