"""
Measurement harness
===================
Multiscale generalization, held-out error distributions, empirical-CDF
comparison, the B-time/O-time/T-time benchmark protocol and convergence
studies, plus the delimited-text reports they produce.
"""

import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sdeoperator.services.training import train
from sdeoperator.utils.errors import (DegenerateInputError, FormatError, InvalidArgumentError,
                                      NumericOverflowError, ValidationError)
from sdeoperator.utils.metrics import Ecdf, path_mse, standardized_mse
from sdeoperator.utils.operator_net import DeepONet, DeepONetParams
from sdeoperator.utils.particles import McKeanVlasovModel, emp_solve
from sdeoperator.utils.paths import (BrownianPath, SensorSet, SolutionPath, TimeGrid,
                                     make_generator, make_grid, rescale_grid,
                                     sample_brownian_batch, sample_sensor_block)
from sdeoperator.utils.report_formatter import ReportFormatter
from sdeoperator.utils.solvers import SdeModel, euler_maruyama_batch, solve_batch

logger = logging.getLogger(__name__)

# Added to a training base seed to key evaluation paths, so evaluation never
# replays a training stream.
EVAL_SEED_OFFSET = 1_000_003

MULTISCALE_COLUMNS = ["scale", "mean", "std", "n"]
TIMING_COLUMNS = ["method", "N", "M", "B_time", "O_time", "T_time"]
ECDF_COLUMNS = ["x", "F"]
MSE_COLUMNS = ["path_id", "mse"]
SAMPLE_COLUMNS = ["sample_id", "x"]


@dataclass(frozen=True)
class MultiscaleRow:
    scale_factor: float
    mean: float
    std: float
    n_paths: int
    failures: int = 0

    def __post_init__(self) -> None:
        if self.std < 0 or self.n_paths < 1:
            raise ValidationError(f"Invalid multiscale row: {self}")


@dataclass(frozen=True)
class TimingTriple:
    b_time: float
    o_time: float
    t_time: Optional[float] = None

    def __post_init__(self) -> None:
        times = [self.b_time, self.o_time] + ([] if self.t_time is None else [self.t_time])
        if any(not np.isfinite(t) or t < 0 for t in times):
            raise ValidationError(f"Timings must be finite and non-negative: {self}")


class ExactOperatorStub:
    """Stands in for a trained operator by returning the model's reference solution."""

    def __init__(self, model: SdeModel) -> None:
        self.model = model

    def predict_paths(self, x0s, bpaths: Sequence[BrownianPath]) -> np.ndarray:
        return solve_batch(self.model, x0s, bpaths).solution_matrix()


def _as_operator(operator) -> Any:
    if isinstance(operator, DeepONetParams):
        return DeepONet(operator)
    return operator


def _initial_values(x0: Union[float, Sequence[float]], n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(x0, dtype=np.float64), (n,)).copy()


def multiscale_eval(operator, model: SdeModel, base_grid: TimeGrid, scales: Sequence[float],
                    n_paths: int, base_seed: int, x0: Union[float, Sequence[float]] = 1.0,
                    reuse_training_noise: bool = False, threads: int = 1,
                    seed_offset: int = EVAL_SEED_OFFSET) -> List[MultiscaleRow]:
    """
    Standardized MSE of ``operator`` against the model's reference solution on
    rescaled grids, one row per scale.

    Evaluation paths are keyed by ``base_seed + seed_offset`` unless
    ``reuse_training_noise`` is set, in which case the training streams are
    replayed on each rescaled grid. Paths whose error is undefined or whose
    reference overflows are counted in ``failures`` and left out of the
    statistics.
    """
    if n_paths < 1:
        raise InvalidArgumentError(f"n_paths must be >= 1, got {n_paths}")
    operator = _as_operator(operator)
    if getattr(operator, "sensors", None) is not None:
        raise ValidationError("Multiscale evaluation needs an operator trained on full grid paths; "
                              "sensor times do not carry over to rescaled grids")
    seed = base_seed if reuse_training_noise else base_seed + seed_offset
    x0s = _initial_values(x0, n_paths)
    rows: List[MultiscaleRow] = []
    for scale in scales:
        grid = rescale_grid(base_grid, scale)
        bpaths = sample_brownian_batch(grid, seed, n_paths, threads=threads)
        predictions = operator.predict_paths(x0s, bpaths)

        def score(index: int) -> Optional[float]:
            try:
                truth = model.solve(float(x0s[index]), bpaths[index])
                pred = SolutionPath(grid=grid, values=predictions[index],
                                    x0=float(predictions[index][0]))
                return standardized_mse(pred, truth)
            except (DegenerateInputError, NumericOverflowError) as exc:
                logger.warning("scale %g, path %d skipped: %s", scale, index, exc)
                return None

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scores = list(pool.map(score, range(n_paths)))
        else:
            scores = [score(index) for index in range(n_paths)]
        valid = np.array([s for s in scores if s is not None])
        if valid.size == 0:
            raise DegenerateInputError(f"Every evaluation path failed at scale {scale}")
        rows.append(MultiscaleRow(scale_factor=float(scale), mean=float(valid.mean()),
                                  std=float(valid.std()), n_paths=int(valid.size),
                                  failures=n_paths - int(valid.size)))
        logger.info("scale %g: mean %.4e std %.4e (%d paths)", scale, rows[-1].mean,
                    rows[-1].std, valid.size)
    return rows


def per_path_mse(operator, model: SdeModel, grid: TimeGrid, n_paths: int, base_seed: int,
                 x0: Union[float, Sequence[float]] = 1.0,
                 seed_offset: int = EVAL_SEED_OFFSET) -> np.ndarray:
    """Plain MSE of every held-out path, the raw error distribution."""
    operator = _as_operator(operator)
    bpaths = sample_brownian_batch(grid, base_seed + seed_offset, n_paths)
    x0s = _initial_values(x0, n_paths)
    truth = solve_batch(model, x0s, bpaths)
    predictions = operator.predict_paths(x0s, bpaths)
    return np.array([
        path_mse(SolutionPath(grid=grid, values=row, x0=float(row[0])), solution)
        for row, solution in zip(predictions, truth.solutions)])


def _median_time(fn: Callable[[], Any], repeats: int, warmup: int) -> Tuple[float, Any]:
    for _ in range(warmup):
        fn()
    samples = []
    result = None
    for _ in range(max(repeats, 1)):
        started = time.perf_counter()
        result = fn()
        samples.append(time.perf_counter() - started)
    return statistics.median(samples), result


def bench_emp(model: McKeanVlasovModel, N: int, M: int, h: float, seed: int,
              repeats: int = 5, warmup: int = 1) -> TimingTriple:
    """B-time: N full Brownian paths. O-time: the particle iteration. No T-time."""
    grid = make_grid(0.0, h, M)
    x0s = make_generator(seed).standard_normal(N)
    b_time, bpaths = _median_time(lambda: sample_brownian_batch(grid, seed, N), repeats, warmup)
    o_time, _ = _median_time(lambda: emp_solve(model, x0s, bpaths), repeats, warmup)
    return TimingTriple(b_time=b_time, o_time=o_time)


def bench_operator(params: DeepONetParams, sensors: SensorSet, N: int, seed: int,
                   t_time: Optional[float] = None, repeats: int = 5,
                   warmup: int = 1) -> TimingTriple:
    """
    B-time: sensor-only Brownian values for N paths. O-time: N operator
    inferences at the last sensor time. T-time is the training time, if known.
    """
    operator = DeepONet(params, sensors)
    x0s = make_generator(seed).standard_normal(N)
    T = float(sensors.times[-1])
    b_time, values = _median_time(lambda: sample_sensor_block(sensors, seed, N), repeats, warmup)
    o_time, _ = _median_time(lambda: operator.sample_terminal(x0s, values, T), repeats, warmup)
    return TimingTriple(b_time=b_time, o_time=o_time, t_time=t_time)


@dataclass(frozen=True)
class StrongOrderResult:
    steps: List[float]
    rms_errors: List[float]
    slope: float


def strong_order_study(model: SdeModel, x0: float, T: float, exponents: Sequence[int],
                       n_paths: int, seed: int) -> StrongOrderResult:
    """
    RMS terminal error of EM against the closed-form solution for
    ``h = 2^-e``, and the least-squares slope of log error against log h.
    """
    if model.reference is None:
        raise InvalidArgumentError(f"{model.descriptor} has no closed-form reference")
    if len(exponents) < 2:
        raise InvalidArgumentError("A convergence study needs at least two step sizes")
    steps, errors = [], []
    for exponent in exponents:
        h = 2.0 ** -exponent
        grid = make_grid(0.0, h, int(round(T / h)) + 1)
        bpaths = sample_brownian_batch(grid, seed, n_paths)
        x0s = np.full(n_paths, float(x0))
        approx = euler_maruyama_batch(model, x0s, np.stack([b.increments for b in bpaths]), grid)
        exact = np.array([model.reference(float(x0), b).values[-1] for b in bpaths])
        steps.append(h)
        errors.append(float(np.sqrt(np.mean((approx[:, -1] - exact) ** 2))))
    slope = float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
    logger.info("Strong order estimate for %s: %.3f", model.descriptor, slope)
    return StrongOrderResult(steps=steps, rms_errors=errors, slope=slope)


def write_multiscale_report(rows: Sequence[MultiscaleRow], path: str,
                            provenance: Optional[Dict[str, Any]] = None) -> str:
    metadata = dict(provenance or {})
    metadata["failures"] = {repr(row.scale_factor): row.failures for row in rows}
    return ReportFormatter.write_table(
        path, MULTISCALE_COLUMNS,
        ((row.scale_factor, row.mean, row.std, row.n_paths) for row in rows), metadata)


def write_timing_report(rows: Sequence[Tuple[str, int, int, TimingTriple]], path: str,
                        provenance: Optional[Dict[str, Any]] = None) -> str:
    return ReportFormatter.write_table(
        path, TIMING_COLUMNS,
        ((method, n, m, t.b_time, t.o_time, t.t_time) for method, n, m, t in rows),
        provenance)


def write_ecdf(e: Ecdf, path: str, provenance: Optional[Dict[str, Any]] = None) -> str:
    return ReportFormatter.write_table(path, ECDF_COLUMNS, e.breakpoints(), provenance)


def write_path_errors(errors: Sequence[float], path: str,
                      provenance: Optional[Dict[str, Any]] = None) -> str:
    return ReportFormatter.write_table(path, MSE_COLUMNS, enumerate(map(float, errors)),
                                       provenance)


def write_samples(samples: Sequence[float], path: str,
                  provenance: Optional[Dict[str, Any]] = None) -> str:
    return ReportFormatter.write_table(path, SAMPLE_COLUMNS, enumerate(map(float, samples)),
                                       provenance)


def read_samples(path: str) -> np.ndarray:
    """Read the ``x`` column of a sample file (also accepts a bare ``x`` table)."""
    _, columns, rows = ReportFormatter.read_table(path)
    if "x" not in columns:
        raise FormatError(f"expected an 'x' column, found {columns}", path=path, row=2)
    column = columns.index("x")
    try:
        return np.array([float(row[column]) for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"unparseable sample ({exc})", path=path)


@dataclass(frozen=True)
class SampleSizeRow:
    n_train: int
    mean: float
    std: float
    final_loss: float


def sample_size_study(model: SdeModel, grid: TimeGrid, sizes: Sequence[int], n_eval: int,
                      net_config, train_config, base_seed: int,
                      initial: Callable[[int, int], np.ndarray] = lambda n, seed: np.ones(n),
                      sensors: Optional[SensorSet] = None,
                      seed_offset: int = EVAL_SEED_OFFSET) -> List[SampleSizeRow]:
    """
    Train one operator per training-set size on the first ``n`` paths of a
    common stream and measure held-out MSE on a shared evaluation set.
    """
    if not sizes or min(sizes) < 1:
        raise InvalidArgumentError(f"Training-set sizes must be positive, got {list(sizes)}")
    largest = max(sizes)
    bpaths = sample_brownian_batch(grid, base_seed, largest)
    full = solve_batch(model, initial(largest, base_seed), bpaths)
    eval_x0s = initial(n_eval, base_seed + seed_offset)
    rows = []
    for n in sizes:
        report = train(full.subset(range(n)), net_config, train_config, sensors=sensors)
        errors = per_path_mse(report.operator(), model, grid, n_eval, base_seed, eval_x0s,
                              seed_offset)
        rows.append(SampleSizeRow(n_train=int(n), mean=float(errors.mean()),
                                  std=float(errors.std()), final_loss=report.final_loss))
        logger.info("n_train %d: held-out MSE %.4e", n, rows[-1].mean)
    return rows


def write_sample_size_report(rows: Sequence[SampleSizeRow], path: str,
                             provenance: Optional[Dict[str, Any]] = None) -> str:
    return ReportFormatter.write_table(
        path, ["n_train", "mean", "std", "final_loss"],
        ((r.n_train, r.mean, r.std, r.final_loss) for r in rows), provenance)


def write_convergence_report(result: StrongOrderResult, path: str,
                             provenance: Optional[Dict[str, Any]] = None) -> str:
    metadata = dict(provenance or {})
    metadata["slope"] = result.slope
    return ReportFormatter.write_table(path, ["h", "rms_error"],
                                       zip(result.steps, result.rms_errors), metadata)
