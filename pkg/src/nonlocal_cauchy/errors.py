"""
Domain exceptions.

Each exception derives from the builtin that would otherwise be raised for
the same situation and carries the process exit code used by the command
line interface.
"""

from typing import Any, Dict, Iterator, Optional

import contextlib
import sys

from nonlocal_cauchy.utils import get_root_logger

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_NONCONVERGENCE = 3
EXIT_CONFIGURATION = 4


class ConfigurationError(ValueError):
    """Malformed input: spec, config file, grid or seeds."""

    exit_code = EXIT_CONFIGURATION


class AssumptionError(RuntimeError):
    """A standing assumption on the kernel or on the lower-order part fails."""

    exit_code = EXIT_ASSUMPTION

    def __init__(self, message: str, report: Optional[Any] = None) -> None:
        super().__init__(message)
        self.report = report


class NumericalError(RuntimeError):
    exit_code = EXIT_NONCONVERGENCE

    def __init__(
        self, message: str, diagnostics: Optional[Dict[str, Any]] = None
    ) -> None:
        super().__init__(message)
        self.diagnostics = {} if diagnostics is None else diagnostics


class NonConvergenceError(NumericalError):
    """Picard iteration stopped contracting; raise lambda and retry."""

    def __init__(
        self,
        message: str,
        q_hat: float = float("nan"),
        lam: float = float("nan"),
        diagnostics: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message, diagnostics)
        self.q_hat = q_hat
        self.lam = lam
        self.diagnostics.setdefault("q_hat", q_hat)
        self.diagnostics.setdefault("lambda", lam)


def exit_code_for(exc: BaseException) -> int:
    return int(getattr(exc, "exit_code", 1))


@contextlib.contextmanager
def exit_on_error() -> Iterator[None]:
    """
    Convert domain exceptions raised inside a command body into the stable
    exit codes of the command line interface.

    .. code-block:: python

        with exit_on_error():
            check_kernel(config)
    """
    try:
        yield
    except (ConfigurationError, AssumptionError, NumericalError) as e:
        get_root_logger().error(f"{type(e).__name__}: {e}")
        sys.exit(exit_code_for(e))
