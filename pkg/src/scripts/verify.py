#!/usr/bin/env python3

import os
import sys

import click
from nonlocal_cauchy import utils
from nonlocal_cauchy.errors import exit_on_error
from nonlocal_cauchy.simulator import CRITERIA, verify
from scripts.options import collect_overrides, config_options


@click.command(name="verify")
@config_options
@click.option(
    "--criterion",
    "-k",
    "criteria",
    multiple=True,
    type=click.Choice(list(CRITERIA)),
    help="run only the named acceptance criteria; repeatable",
)
def main(
    config,
    config_prefix,
    output_dir,
    alpha,
    beta,
    lam,
    dim,
    seed,
    set_,
    verbose,
    criteria,
):
    """Run the acceptance criteria and write the consolidated verify.json."""
    overrides = collect_overrides(
        set_, alpha=alpha, beta=beta, lam=lam, dim=dim, seed=seed
    )
    with exit_on_error():
        verify(
            config,
            output_dir=output_dir,
            overrides=overrides,
            criteria=list(criteria),
            verbose=verbose,
            config_prefix=config_prefix,
        )


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
