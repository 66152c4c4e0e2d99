import logging
import os

import click

__version__ = "1.0.0"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def create_cli(config_name: str = 'default') -> click.Group:
    """CLI factory that wires configuration, logging and command modules."""
    # Load configuration class by name with graceful fallback to default.
    from config import config as config_map
    settings = config_map.get(config_name, config_map['default'])

    logging.basicConfig(level=getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO),
                        format=LOG_FORMAT)

    @click.group(help="Learn SDE solution operators and reproduce their experiments.")
    @click.version_option(__version__, prog_name="sdeop")
    @click.pass_context
    def cli(ctx):
        ctx.ensure_object(dict)
        ctx.obj.setdefault('settings', settings)
        # Ensure the output root exists so commands can write artifacts.
        os.makedirs(ctx.obj['settings'].OUTPUT_DIR, exist_ok=True)

    from sdeoperator.commands.experiment import experiment_commands
    from sdeoperator.commands.schema import schema
    for command in experiment_commands:
        cli.add_command(command)
    cli.add_command(schema)

    return cli
