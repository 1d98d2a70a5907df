from typing import Any, Dict, Optional, Sequence

import functools

import click
from nonlocal_cauchy.env import parse_override
from nonlocal_cauchy.utils import update_dict

SCALAR_OVERRIDES = {
    "alpha": "Parameters.alpha",
    "beta": "Parameters.beta",
    "lam": "Parameters.lambda",
    "dim": "Parameters.dim",
    "seed": "Random Seeds.Global",
}


def config_options(f):
    """Options shared by every experiment command."""

    @click.option(
        "--config",
        "-c",
        required=False,
        type=str,
        default=None,
        help="experiment configuration file, merged over the defaults",
    )
    @click.option(
        "--config-prefix",
        type=click.Path(file_okay=False, dir_okay=True),
        default="",
        help="path to directory containing relative configuration files",
    )
    @click.option(
        "--output-dir",
        "-o",
        type=click.Path(file_okay=False, dir_okay=True),
        default=None,
        help="directory for reports and data files (default: Output.directory)",
    )
    @click.option("--alpha", type=float, default=None, help="stable order")
    @click.option("--beta", type=float, default=None, help="Hölder exponent")
    @click.option("--lam", type=float, default=None, help="damping lambda")
    @click.option("--dim", type=click.IntRange(1, 2), default=None)
    @click.option("--seed", type=int, default=None, help="global random seed")
    @click.option(
        "--set",
        "set_",
        multiple=True,
        type=str,
        help="override section.key=value (YAML scalar value); repeatable",
    )
    @click.option("--verbose", "-v", is_flag=True)
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        return f(*args, **kwargs)

    return wrapper


def collect_overrides(
    set_: Sequence[str] = (), **scalars: Optional[Any]
) -> Dict[str, Any]:
    """Nested configuration updates from ``--set`` items and scalar flags."""
    overrides: Dict[str, Any] = {}
    for item in set_:
        overrides = update_dict(overrides, parse_override(item))
    for name, value in scalars.items():
        if value is not None:
            overrides = update_dict(
                overrides, parse_override(f"{SCALAR_OVERRIDES[name]}={value}")
            )
    return overrides
