__doc__ = """Schauder-type solvers and Monte Carlo cross-checks for nonlocal
Cauchy problems with anisotropic stable-like kernels."""

from importlib import metadata as importlib_metadata


def get_version() -> str:
    try:
        return importlib_metadata.version("nonlocal-cauchy")
    except importlib_metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


version: str = get_version()
