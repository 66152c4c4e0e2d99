import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sdeoperator.config_schema import ExperimentConfig, config_hash
from sdeoperator.services.evaluation import (EVAL_SEED_OFFSET, ExactOperatorStub, bench_emp,
                                             bench_operator, multiscale_eval,
                                             read_samples, sample_size_study,
                                             strong_order_study, write_convergence_report,
                                             write_ecdf, write_multiscale_report,
                                             write_path_errors, write_sample_size_report,
                                             write_samples, write_timing_report)
from sdeoperator.services.training import (Checkpoint, TrainReport, load_checkpoint,
                                           save_checkpoint, train, write_loss_history)
from sdeoperator.utils.dataset_io import read_dataset, write_dataset
from sdeoperator.utils.errors import ConfigError, ValidationError
from sdeoperator.utils.metrics import ecdf, ks_distance
from sdeoperator.utils.model_registry import get_entry
from sdeoperator.utils.operator_net import init_params
from sdeoperator.utils.particles import McKeanVlasovModel, emp_solve
from sdeoperator.utils.paths import (PathDataset, SensorSet, SolutionPath, derive_seed,
                                     make_generator, make_grid, sample_brownian_batch,
                                     sample_sensor_block)
from sdeoperator.utils.report_formatter import ReportFormatter
from sdeoperator.utils.solvers import SdeModel, euler_maruyama_batch, solve_batch

logger = logging.getLogger(__name__)

# Stream index for the target sample drawn when a Langevin run has no reference file.
TARGET_STREAM = 2 ** 41

PREDICTION_COLUMNS = ["path_id", "k", "t", "X_pred", "X_ref"]


class ExperimentService:
    """Runs the experiment commands for one resolved config and writes their artifacts."""

    def __init__(self, cfg: ExperimentConfig, settings, out_dir: Optional[str] = None,
                 threads: Optional[int] = None, deterministic: Optional[bool] = None):
        """
        Args:
            cfg: validated experiment config
            settings: Config class (output directory, threads, timing protocol)
            out_dir: overrides both the config and the settings output directory
            threads: worker threads for per-path work
            deterministic: force single-threaded execution
        """
        self.cfg = cfg
        self.settings = settings
        self.deterministic = settings.DETERMINISTIC if deterministic is None else deterministic
        requested = settings.THREADS if threads is None else threads
        self.threads = 1 if self.deterministic else max(1, int(requested))
        self.out_dir = out_dir or cfg.output_dir or os.path.join(settings.OUTPUT_DIR, cfg.name)
        self.eval_offset = getattr(settings, 'EVAL_SEED_OFFSET', EVAL_SEED_OFFSET)
        self.config_hash = config_hash(cfg)
        self.model = cfg.model.build()
        self.grid = cfg.grid.to_grid()
        self.sensors = cfg.sensor_set()

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def provenance(self, **extra: Any) -> Dict[str, Any]:
        meta = ReportFormatter.provenance(self.config_hash, **extra)
        meta["experiment"] = self.cfg.name
        meta["initial"] = self.cfg.initial.model_dump(mode="json")
        return meta

    @property
    def mean_field(self) -> bool:
        return get_entry(self.cfg.model.name).mean_field

    def _require_sde(self, command: str) -> SdeModel:
        if self.mean_field:
            raise ConfigError(f"'{command}' needs a model without measure dependence, "
                              f"got '{self.cfg.model.name}'")
        return self.model

    def _require_mean_field(self, command: str) -> McKeanVlasovModel:
        if not self.mean_field:
            raise ConfigError(f"'{command}' needs a McKean-Vlasov model, got '{self.cfg.model.name}'")
        return self.model

    def _eval_seed(self) -> int:
        return self.cfg.seed + self.eval_offset

    def load_operator(self, checkpoint_path: str) -> Checkpoint:
        """Load a checkpoint and check it against this experiment's network and sensors."""
        checkpoint = load_checkpoint(checkpoint_path)
        expected = self.cfg.net_config()
        if checkpoint.params.config != expected:
            raise ValidationError(
                f"Checkpoint {checkpoint_path} was trained with {checkpoint.params.config}, "
                f"config expects {expected}")
        if checkpoint.sensors != self.sensors:
            raise ValidationError(
                f"Checkpoint sensors {_times(checkpoint.sensors)} differ from config sensors "
                f"{_times(self.sensors)}")
        return checkpoint

    # ------------------------------------------------------------------
    # simulate
    # ------------------------------------------------------------------

    def build_dataset(self, n: int, seed: int) -> PathDataset:
        """Reference solutions for ``n`` paths keyed by ``seed`` with the configured solver."""
        if n < 1:
            raise ConfigError(f"Path count must be positive, got {n}")
        solver = self.cfg.model.solver
        meta: Dict[str, Any] = {"solver": solver, "model": self.model.descriptor.to_dict()}
        if self.mean_field:
            return self._emp_dataset(n, seed, meta)
        bpaths = sample_brownian_batch(self.grid, seed, n, threads=self.threads)
        x0s = self.cfg.initial.sample(n, seed)
        if solver == "exact" and self.model.reference is None:
            raise ConfigError(f"'{self.cfg.model.name}' has no closed-form solution; use em")
        if solver == "em":
            increments = np.stack([b.increments for b in bpaths])
            values = euler_maruyama_batch(self.model, x0s, increments, self.grid)
            solutions = [SolutionPath(self.grid, row, float(x0)) for row, x0 in zip(values, x0s)]
            return PathDataset(self.grid, bpaths, solutions, metadata=meta)
        dataset = solve_batch(self.model, x0s, bpaths)
        dataset.metadata.update(meta)
        return dataset

    def _emp_dataset(self, n: int, seed: int, meta: Dict[str, Any]) -> PathDataset:
        n_particles = self.cfg.model.n_particles
        if n > n_particles:
            raise ConfigError(f"Cannot store {n} trajectories of a {n_particles}-particle run")
        bpaths = sample_brownian_batch(self.grid, seed, n_particles, threads=self.threads)
        x0s = self.cfg.initial.sample(n_particles, seed)
        ensemble = emp_solve(self.model, x0s, bpaths)
        solutions = [SolutionPath(self.grid, ensemble.trajectories[i], float(x0s[i]))
                     for i in range(n)]
        meta["n_particles"] = n_particles
        return PathDataset(self.grid, bpaths[:n], solutions, metadata=meta)

    def simulate(self, n: Optional[int] = None, out: Optional[str] = None) -> str:
        if n is None:
            n = self.cfg.model.n_particles if self.mean_field else self.cfg.n_train
        dataset = self.build_dataset(n, self.cfg.seed)
        path = out or self.path("dataset.csv")
        write_dataset(dataset, path, self.provenance())
        if self.mean_field:
            terminal = dataset.solution_matrix()[:, -1]
            write_samples(terminal, self.path("reference_samples.csv"),
                          self.provenance(source="emp", T=self.grid.T))
        return path

    # ------------------------------------------------------------------
    # train
    # ------------------------------------------------------------------

    def train(self, dataset_path: str, resume: Optional[str] = None,
              checkpoint_out: Optional[str] = None) -> Tuple[str, str, TrainReport]:
        dataset = read_dataset(dataset_path)
        if dataset.grid != self.grid:
            raise ValidationError(
                f"Dataset {dataset_path} is on {dataset.grid}, config grid is {self.grid}")
        if len(dataset) > self.cfg.n_train:
            dataset = dataset.subset(range(self.cfg.n_train))
        elif len(dataset) < self.cfg.n_train:
            logger.warning("Dataset has %d paths, fewer than n_train=%d; using all of them",
                           len(dataset), self.cfg.n_train)

        net_config = self.cfg.net_config()
        train_config = self.cfg.train.to_train_config(self.cfg.seed)
        previous: List[float] = []
        if resume is not None:
            checkpoint = self.load_operator(resume)
            previous = checkpoint.loss_history
            report = train(dataset, net_config, train_config, sensors=self.sensors,
                           initial_params=checkpoint.params,
                           initial_state=checkpoint.optimizer_state, start_epoch=len(previous))
            report.loss_history = previous + report.loss_history
        else:
            report = train(dataset, net_config, train_config, sensors=self.sensors)

        checkpoint_path = checkpoint_out or self.path("checkpoint.json")
        save_checkpoint(report, checkpoint_path, self.provenance(dataset=dataset_path),
                        extra={"experiment_config": self.cfg.dump()})
        history_path = self.path("loss_history.csv")
        write_loss_history(report.loss_history, history_path, self.provenance())
        ReportFormatter.write_json(self.path("train_summary.json"), {
            "t_time": report.wall_time,
            "epochs_this_run": report.epochs - len(previous),
            "final_loss": report.final_loss,
            "stopped_by": report.stopped_by,
            "checkpoint": checkpoint_path,
            "provenance": self.provenance(dataset=dataset_path, resumed_from=resume,
                                          seed=self.cfg.seed),
        })
        return checkpoint_path, history_path, report

    # ------------------------------------------------------------------
    # predict
    # ------------------------------------------------------------------

    def predict(self, checkpoint_path: str, n: Optional[int] = None,
                dataset_path: Optional[str] = None,
                queries: Optional[Sequence[float]] = None) -> Dict[str, str]:
        """
        Evaluate the operator on replayed dataset inputs or on fresh seeds.

        With a sensor-trained checkpoint and no dataset, only the sensor
        values are sampled and the operator is queried at ``queries``
        (default: the last sensor time). Otherwise full paths are predicted
        and compared with the reference solution.
        """
        checkpoint = self.load_operator(checkpoint_path)
        operator = checkpoint.operator()
        outputs: Dict[str, str] = {}
        provenance = self.provenance(checkpoint=checkpoint_path)

        if dataset_path is None and operator.sensors is not None:
            n = n or self.cfg.n_eval
            seed = self._eval_seed()
            queries = list(queries) if queries else [float(operator.sensors.times[-1])]
            values = sample_sensor_block(operator.sensors, seed, n)
            x0s = self.cfg.initial.sample(n, seed)
            predictions = operator.predict_from_sensors(x0s, values, queries)
            rows = ((i, k, t, predictions[i, k], None)
                    for i in range(n) for k, t in enumerate(queries))
            outputs["predictions"] = ReportFormatter.write_table(
                self.path("predictions.csv"), PREDICTION_COLUMNS, rows, provenance)
            return outputs

        if dataset_path is not None:
            dataset = read_dataset(dataset_path)
            if n is not None:
                dataset = dataset.subset(range(min(n, len(dataset))))
        else:
            self._require_sde("predict")
            n = n or self.cfg.n_eval
            seed = self._eval_seed()
            bpaths = sample_brownian_batch(self.grid, seed, n, threads=self.threads)
            dataset = solve_batch(self.model, self.cfg.initial.sample(n, seed), bpaths)

        predicted = operator.predict_paths(dataset.x0s, dataset.brownian)
        truth = dataset.solution_matrix()
        times = dataset.grid.times
        rows = ((i, k, times[k], predicted[i, k], truth[i, k])
                for i in range(len(dataset)) for k in range(dataset.grid.M))
        outputs["predictions"] = ReportFormatter.write_table(
            self.path("predictions.csv"), PREDICTION_COLUMNS, rows, provenance)
        errors = np.mean((predicted - truth) ** 2, axis=1)
        outputs["path_mse"] = write_path_errors(errors, self.path("path_mse.csv"), provenance)
        logger.info("Median per-path MSE over %d paths: %.4e", len(dataset), float(np.median(errors)))
        return outputs

    # ------------------------------------------------------------------
    # multiscale
    # ------------------------------------------------------------------

    def multiscale(self, checkpoint_path: Optional[str] = None, stub: bool = False) -> str:
        model = self._require_sde("multiscale")
        if stub:
            operator = ExactOperatorStub(model)
        elif checkpoint_path is None:
            raise ConfigError("multiscale needs a checkpoint or the exact-solver stub")
        else:
            operator = self.load_operator(checkpoint_path).operator()
            if operator.sensors is not None:
                raise ValidationError(
                    f"Multiscale evaluation needs a checkpoint trained on full grid paths, "
                    f"{checkpoint_path} was trained on sensors {_times(operator.sensors)}")
        x0s = self.cfg.initial.sample(self.cfg.n_eval, self._eval_seed())
        rows = multiscale_eval(operator, model, self.grid, self.cfg.scales, self.cfg.n_eval,
                               self.cfg.seed, x0=x0s,
                               reuse_training_noise=self.cfg.reuse_training_noise,
                               threads=self.threads, seed_offset=self.eval_offset)
        return write_multiscale_report(
            rows, self.path("multiscale.csv"),
            self.provenance(checkpoint=checkpoint_path, stub=stub,
                            reuse_training_noise=self.cfg.reuse_training_noise))

    # ------------------------------------------------------------------
    # bench
    # ------------------------------------------------------------------

    def bench(self, checkpoint_path: Optional[str] = None) -> str:
        model = self._require_mean_field("bench")
        bench = self.cfg.bench
        repeats = bench.repeats or self.settings.TIMING_REPEATS
        warmup = self.settings.TIMING_WARMUP if bench.warmup is None else bench.warmup
        if checkpoint_path is not None:
            params = self.load_operator(checkpoint_path).params
            t_time = _training_time(checkpoint_path)
        else:
            params = init_params(self.cfg.net_config())
            t_time = None
        rows = []
        for M in bench.M_values:
            sensors = SensorSet.terminal(make_grid(self.grid.t0, self.grid.h, M))
            for N in bench.N_values:
                logger.info("Benchmarking N=%d M=%d", N, M)
                rows.append(("EMP", N, M, bench_emp(model, N, M, self.grid.h, self.cfg.seed,
                                                    repeats=repeats, warmup=warmup)))
                rows.append(("operator", N, M, bench_operator(params, sensors, N, self.cfg.seed,
                                                              t_time=t_time, repeats=repeats,
                                                              warmup=warmup)))
        return write_timing_report(rows, self.path("timing.csv"),
                                   self.provenance(repeats=repeats, warmup=warmup))

    # ------------------------------------------------------------------
    # mv-sample
    # ------------------------------------------------------------------

    def mv_sample(self, checkpoint_path: str, n: Optional[int] = None, T: Optional[float] = None,
                  reference_path: Optional[str] = None) -> Dict[str, Any]:
        """
        Operator samples of X_T from sensor-only Brownian inputs, their ECDF
        and the KS distance against a reference sample.

        Without a reference file, a Langevin run compares with draws from its
        target law and with EM samples at T.
        """
        checkpoint = self.load_operator(checkpoint_path)
        operator = checkpoint.operator()
        if operator.sensors is None:
            raise ValidationError("mv-sample needs a checkpoint trained on a sensor set")
        n = n or self.cfg.n_samples
        T = float(operator.sensors.times[-1]) if T is None else float(T)
        seed = self._eval_seed()
        values = sample_sensor_block(operator.sensors, seed, n)
        x0s = self.cfg.initial.sample(n, seed)
        samples = operator.predict_from_sensors(x0s, values, [T])[:, 0]

        provenance = self.provenance(checkpoint=checkpoint_path, T=T, n=n)
        result: Dict[str, Any] = {
            "samples": write_samples(samples, self.path("operator_samples.csv"), provenance),
            "ecdf": write_ecdf(ecdf(samples), self.path("operator_ecdf.csv"), provenance),
            "ks": {},
        }
        generated = ecdf(samples)
        if reference_path is not None:
            reference = read_samples(reference_path)
            result["ks"]["reference"] = ks_distance(generated, ecdf(reference))
            write_ecdf(ecdf(reference), self.path("reference_ecdf.csv"), provenance)
        elif self.cfg.model.name == "langevin":
            params = self.cfg.model.params
            target = (params.get("mean", 0.0) + params.get("std", 1.0)
                      * make_generator(derive_seed(self.cfg.seed, TARGET_STREAM)).standard_normal(n))
            result["ks"]["target"] = ks_distance(generated, ecdf(target))
            result["ks"]["em"] = ks_distance(generated, ecdf(self._em_terminal(n, seed)))
        ReportFormatter.write_json(self.path("mv_sample_summary.json"),
                                   dict(result, provenance=provenance))
        for name, value in result["ks"].items():
            logger.info("KS distance vs %s: %.4f", name, value)
        return result

    def _em_terminal(self, n: int, seed: int) -> np.ndarray:
        bpaths = sample_brownian_batch(self.grid, seed, n, threads=self.threads)
        return solve_batch(self.model, self.cfg.initial.sample(n, seed),
                           bpaths).solution_matrix()[:, -1]

    # ------------------------------------------------------------------
    # studies
    # ------------------------------------------------------------------

    def sweep(self) -> str:
        model = self._require_sde("sweep")
        rows = sample_size_study(model, self.grid, self.cfg.sample_sizes, self.cfg.n_eval,
                                 self.cfg.net_config(),
                                 self.cfg.train.to_train_config(self.cfg.seed), self.cfg.seed,
                                 initial=self.cfg.initial.sample, sensors=self.sensors,
                                 seed_offset=self.eval_offset)
        return write_sample_size_report(rows, self.path("sample_size.csv"), self.provenance())

    def convergence(self) -> str:
        model = self._require_sde("convergence")
        conv = self.cfg.convergence
        x0 = self.cfg.initial.value
        result = strong_order_study(model, x0, conv.T, conv.exponents, conv.n_paths, self.cfg.seed)
        return write_convergence_report(result, self.path("convergence.csv"),
                                        self.provenance(x0=x0, T=conv.T))


def _times(sensors: Optional[SensorSet]) -> Optional[List[float]]:
    return None if sensors is None else sensors.times.tolist()


def _training_time(checkpoint_path: str) -> Optional[float]:
    summary = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "train_summary.json")
    if not os.path.exists(summary):
        return None
    try:
        with open(summary) as handle:
            return float(json.load(handle)["t_time"])
    except (OSError, ValueError, KeyError, TypeError):
        logger.warning("Ignoring unreadable training summary %s", summary)
        return None
