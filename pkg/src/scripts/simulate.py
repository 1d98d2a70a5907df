#!/usr/bin/env python3

import os
import sys

import click
from nonlocal_cauchy import utils
from nonlocal_cauchy.errors import exit_on_error
from nonlocal_cauchy.simulator import simulate
from scripts.options import collect_overrides, config_options


@click.command(name="simulate")
@config_options
@click.option(
    "--paths",
    type=click.IntRange(min=1),
    default=None,
    help="paths per probe point (default: Simulation.paths)",
)
@click.option(
    "--compare/--no-compare",
    default=True,
    help="also solve the backward equation at the probe points",
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
    paths,
    compare,
):
    """Feynman-Kac estimates at the probe points and individual path dumps."""
    overrides = collect_overrides(
        set_, alpha=alpha, beta=beta, lam=lam, dim=dim, seed=seed
    )
    with exit_on_error():
        simulate(
            config,
            output_dir=output_dir,
            overrides=overrides,
            paths=paths,
            compare=compare,
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
