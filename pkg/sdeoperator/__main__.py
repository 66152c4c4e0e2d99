import os

from sdeoperator import create_cli

create_cli(os.getenv('SDEOP_ENV', 'default'))(prog_name="sdeop")
