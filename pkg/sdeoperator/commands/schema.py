import json

import click

from sdeoperator.config_schema import json_schema, load_config
from sdeoperator.commands.experiment import handle_errors


@click.command('schema')
@click.option('--preset', type=str, default=None,
              help='Print this preset fully resolved instead of the schema.')
@handle_errors
def schema(preset):
    """Print the experiment config JSON schema."""
    if preset is None:
        click.echo(json.dumps(json_schema(), indent=2))
    else:
        click.echo(json.dumps(load_config(preset=preset).dump(), indent=2, sort_keys=True))
