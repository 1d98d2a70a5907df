import sys

import click
from scripts import check_kernel, report, simulate, solve, verify


@click.group()
def cli():
    pass


cli.add_command(check_kernel.main)
cli.add_command(solve.main)
cli.add_command(solve.main_var)
cli.add_command(simulate.main)
cli.add_command(verify.main)
cli.add_command(report.main)


def main_cli():

    cli(sys.argv[1:])
