#!/usr/bin/env python3

import os
import sys

import click
from nonlocal_cauchy import utils
from nonlocal_cauchy.errors import exit_on_error
from nonlocal_cauchy.simulator import solve
from scripts.options import collect_overrides, config_options


def _forcing_options(f):
    f = click.option(
        "--all-forcings",
        is_flag=True,
        help="solve for every member of the forcing suite",
    )(f)
    f = click.option(
        "--forcing-index",
        type=int,
        default=0,
        help="member of the forcing suite to solve for",
    )(f)
    return f


@click.command(name="solve-const")
@config_options
@_forcing_options
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
    forcing_index,
    all_forcings,
):
    """Solve the constant-coefficient problem by the exponential integrator."""
    overrides = collect_overrides(
        set_, alpha=alpha, beta=beta, lam=lam, dim=dim, seed=seed
    )
    with exit_on_error():
        solve(
            config,
            mode="const",
            output_dir=output_dir,
            overrides=overrides,
            forcing_index=None if all_forcings else forcing_index,
            verbose=verbose,
            config_prefix=config_prefix,
        )


@click.command(name="solve-var")
@config_options
@_forcing_options
@click.option(
    "--calibrate",
    is_flag=True,
    help="find a contracting lambda first and shift back to the requested one",
)
def main_var(
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
    forcing_index,
    all_forcings,
    calibrate,
):
    """Solve the variable-coefficient problem by Picard iteration (exit 3 if it stalls)."""
    overrides = collect_overrides(
        set_, alpha=alpha, beta=beta, lam=lam, dim=dim, seed=seed
    )
    with exit_on_error():
        solve(
            config,
            mode="var",
            output_dir=output_dir,
            overrides=overrides,
            forcing_index=None if all_forcings else forcing_index,
            calibrate=calibrate,
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
