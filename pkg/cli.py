"""
SDE Operator Learning - Command Line Entry Point
================================================
Entry point for running experiments from a source checkout:

    python cli.py simulate --preset ou
    python cli.py train --preset ou --dataset runs/ou/dataset.csv

Environment selection follows SDEOP_ENV (development/production/testing).
"""

from sdeoperator import create_cli
import os

# Create the command group with environment-specific configuration
# Defaults to 'default' (development) if SDEOP_ENV is not set
cli = create_cli(os.getenv('SDEOP_ENV', 'default'))

if __name__ == '__main__':
    cli(prog_name='sdeop')
