"""
Error measures and empirical distribution comparison.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from sdeoperator.utils.errors import DegenerateInputError, InvalidArgumentError
from sdeoperator.utils.paths import SolutionPath


def _paired(pred: SolutionPath, truth: SolutionPath) -> Tuple[np.ndarray, np.ndarray]:
    if pred.grid != truth.grid:
        raise InvalidArgumentError(
            f"Cannot compare paths on different grids: {pred.grid} vs {truth.grid}")
    return np.asarray(pred.values), np.asarray(truth.values)


def path_mse(pred: SolutionPath, truth: SolutionPath) -> float:
    """Mean over grid points of the squared pointwise difference."""
    p, t = _paired(pred, truth)
    return float(np.mean((p - t) ** 2))


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if not high > low:
        raise DegenerateInputError(f"Cannot min-max normalize a constant series (value {low!r})")
    return (values - low) / (high - low)


def standardized_mse(pred: SolutionPath, truth: SolutionPath) -> float:
    """
    MSE after scaling prediction and truth independently onto [0, 1] by
    their own minimum and maximum over the grid.

    Raises:
        DegenerateInputError: either path is constant
    """
    p, t = _paired(pred, truth)
    return float(np.mean((min_max_normalize(p) - min_max_normalize(t)) ** 2))


@dataclass(frozen=True, eq=False)
class Ecdf:
    """Right-continuous step function of a finite sample."""

    sorted_samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.sort(np.asarray(self.sorted_samples, dtype=np.float64).reshape(-1))
        if samples.size == 0:
            raise InvalidArgumentError("An empirical CDF needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("Empirical CDF samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "sorted_samples", samples)

    def __len__(self) -> int:
        return int(self.sorted_samples.size)

    def __call__(self, x):
        counts = np.searchsorted(self.sorted_samples, np.asarray(x, dtype=np.float64), side="right")
        result = counts / self.sorted_samples.size
        return float(result) if np.ndim(result) == 0 else result

    def breakpoints(self) -> List[Tuple[float, float]]:
        """(x, F(x)) at every distinct sample value, for external plotting."""
        support = np.unique(self.sorted_samples)
        return list(zip(support.tolist(), np.atleast_1d(self(support)).tolist()))


def ecdf(samples) -> Ecdf:
    return Ecdf(np.asarray(samples, dtype=np.float64))


def ks_distance(e1: Ecdf, e2: Ecdf) -> float:
    """sup_x |e1(x) - e2(x)|, attained on the merged support."""
    support = np.concatenate((e1.sorted_samples, e2.sorted_samples))
    return float(np.max(np.abs(e1(support) - e2(support))))
