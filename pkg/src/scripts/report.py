#!/usr/bin/env python3

import os
import sys

import click
from nonlocal_cauchy import utils
from nonlocal_cauchy.errors import exit_on_error
from nonlocal_cauchy.simulator import report


@click.command(name="report")
@click.option(
    "--output-dir",
    "-o",
    required=True,
    type=click.Path(exists=True, file_okay=False, dir_okay=True),
    help="directory holding the JSON reports",
)
@click.option("--verbose", "-v", is_flag=True)
def main(output_dir, verbose):
    """Collect reports into summary.csv and print a pass/fail table."""
    with exit_on_error():
        rows = report(output_dir, verbose=verbose)
    width = max(len(r[0]) for r in rows)
    for path, kind, item, passed, detail in rows:
        status = {"True": "pass", "False": "FAIL"}.get(passed, "-")
        click.echo(f"{path:<{width}}  {kind:<14} {item:<24} {status:<5} {detail}")


if __name__ == "__main__":
    main(
        args=sys.argv[
            (
                utils.list_find(
                    lambda x: os.path.basename(x) == os.path.basename(__file__),
                    sys.argv,
                )
                + 1
            ) :
        ]
    )
