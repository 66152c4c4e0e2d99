import functools
import json

import click

from sdeoperator.config_schema import load_config
from sdeoperator.services.experiments import ExperimentService
from sdeoperator.utils.errors import SdeOperatorError


experiment_commands = []


def register(command):
    experiment_commands.append(command)
    return command


def handle_errors(func):
    """Translate library failures into a one-line message and the documented exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except SdeOperatorError as exc:
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"Error: {exc}", err=True)
            ctx.exit(2)

    return wrapper


def experiment_options(func):
    """Options shared by every experiment command."""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                     help='Experiment config (JSON), layered over the preset.'),
        click.option('--preset', type=str, default=None,
                     help='Built-in experiment: ou, burgers or langevin.'),
        click.option('--seed', type=int, default=None, help='Base seed for every random stream.'),
        click.option('--out-dir', type=click.Path(file_okay=False), default=None,
                     help='Directory for all artifacts of this run.'),
        click.option('--deterministic/--no-deterministic', default=None,
                     help='Force single-threaded, bit-reproducible execution.'),
        click.option('--threads', type=int, default=None,
                     help='Worker threads for per-path work.'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _service(config_path, preset, seed, out_dir, deterministic, threads) -> ExperimentService:
    settings = click.get_current_context().obj['settings']
    cfg = load_config(config_path, preset, overrides={'seed': seed})
    return ExperimentService(cfg, settings, out_dir=out_dir, threads=threads,
                             deterministic=deterministic)


def _report(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


@register
@click.command('simulate')
@experiment_options
@click.option('--n', 'n_paths', type=int, default=None,
              help='Paths to store (default: n_train, or every particle for EMP).')
@click.option('--output', type=click.Path(dir_okay=False), default=None)
@handle_errors
def simulate(config_path, preset, seed, out_dir, deterministic, threads, n_paths, output):
    """Generate Brownian paths and reference solutions."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report({"dataset": service.simulate(n_paths, output)})


@register
@click.command('train')
@experiment_options
@click.option('--dataset', 'dataset_path', required=True, type=click.Path(dir_okay=False))
@click.option('--resume', type=click.Path(dir_okay=False), default=None,
              help='Continue from a checkpoint that carries optimizer state.')
@click.option('--checkpoint', 'checkpoint_out', type=click.Path(dir_okay=False), default=None)
@handle_errors
def train_command(config_path, preset, seed, out_dir, deterministic, threads, dataset_path,
                  resume, checkpoint_out):
    """Fit the operator to a dataset."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    checkpoint, history, report = service.train(dataset_path, resume, checkpoint_out)
    _report({
        "checkpoint": checkpoint,
        "loss_history": history,
        "final_loss": report.final_loss,
        "epochs": report.epochs,
        "stopped_by": report.stopped_by,
        "t_time": report.wall_time,
    })


@register
@click.command('predict')
@experiment_options
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False))
@click.option('--n', 'n_paths', type=int, default=None, help='Paths to predict (default n_eval).')
@click.option('--dataset', 'dataset_path', type=click.Path(dir_okay=False), default=None,
              help='Replay the Brownian inputs of a dataset instead of fresh seeds.')
@click.option('--query', 'queries', type=float, multiple=True,
              help='Query time for sensor-only prediction (repeatable).')
@handle_errors
def predict(config_path, preset, seed, out_dir, deterministic, threads, checkpoint_path,
            n_paths, dataset_path, queries):
    """Evaluate a trained operator on Brownian inputs."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report(service.predict(checkpoint_path, n_paths, dataset_path, list(queries) or None))


@register
@click.command('multiscale')
@experiment_options
@click.option('--checkpoint', 'checkpoint_path', type=click.Path(dir_okay=False), default=None)
@click.option('--stub', is_flag=True, help='Use the exact solver in place of a trained operator.')
@handle_errors
def multiscale(config_path, preset, seed, out_dir, deterministic, threads, checkpoint_path, stub):
    """Standardized MSE across rescaled time grids."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report({"report": service.multiscale(checkpoint_path, stub)})


@register
@click.command('bench')
@experiment_options
@click.option('--checkpoint', 'checkpoint_path', type=click.Path(dir_okay=False), default=None)
@handle_errors
def bench(config_path, preset, seed, out_dir, deterministic, threads, checkpoint_path):
    """Time the particle solver against operator sampling."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report({"report": service.bench(checkpoint_path)})


@register
@click.command('mv-sample')
@experiment_options
@click.option('--checkpoint', 'checkpoint_path', required=True, type=click.Path(dir_okay=False))
@click.option('--n', 'n_samples', type=int, default=None)
@click.option('--T', 'terminal_time', type=float, default=None)
@click.option('--reference', 'reference_path', type=click.Path(dir_okay=False), default=None,
              help='Sample file to compare against (KS distance).')
@handle_errors
def mv_sample(config_path, preset, seed, out_dir, deterministic, threads, checkpoint_path,
              n_samples, terminal_time, reference_path):
    """Sample X_T with the operator and compare its ECDF with a reference."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report(service.mv_sample(checkpoint_path, n_samples, terminal_time, reference_path))


@register
@click.command('sweep')
@experiment_options
@handle_errors
def sweep(config_path, preset, seed, out_dir, deterministic, threads):
    """Held-out error as a function of training-set size."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report({"report": service.sweep()})


@register
@click.command('convergence')
@experiment_options
@handle_errors
def convergence(config_path, preset, seed, out_dir, deterministic, threads):
    """Empirical strong order of Euler-Maruyama against the closed form."""
    service = _service(config_path, preset, seed, out_dir, deterministic, threads)
    _report({"report": service.convergence()})
