"""
Constant-coefficient Cauchy problem ``du/dt = A u - lam u + f``, ``u(0) = 0``,
for kernels that do not depend on x, solved exactly per Fourier mode.
"""

from typing import Any, Dict, Iterator, List, Optional, Tuple

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np
from nonlocal_cauchy.errors import ConfigurationError
from nonlocal_cauchy.holder import GridFunction, GridSequence
from nonlocal_cauchy.kernel import KernelSpec, SymbolTable, symbol_table
from nonlocal_cauchy.operators import BOperatorSpec, apply_L
from nonlocal_cauchy.utils import get_module_logger, write_json
from scipy import fft, integrate

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = get_module_logger(__name__)

CONTOUR_POINTS = 32
CONTOUR_RADIUS = 1.0

TIME_SCHEMES = ("exponential", "trapezoidal")


@dataclass
class SolveConfig:
    """
    :param lam: damping ``lam >= 0``
    :param T: horizon
    :param n_t: number of uniform time cells; kernel breakpoints and
        forcing stamps are added as further step boundaries
    :param forcing: time-stamped forcing, linear between stamps
    :param time_scheme: ``exponential`` integrates the frozen symbol exactly;
        ``trapezoidal`` is the Crank-Nicolson step, whose discrete solution
        does not depend on how ``L`` is split into symbol and forcing
    """

    lam: float
    T: float
    n_t: int
    forcing: GridSequence
    symbol_method: str = "direct"
    time_scheme: str = "exponential"

    def __post_init__(self):
        if self.lam < 0.0:
            raise ConfigurationError(f"lambda = {self.lam} must be nonnegative")
        if not self.T > 0.0:
            raise ConfigurationError(f"T = {self.T} must be positive")
        if self.n_t < 1:
            raise ConfigurationError(f"n_t = {self.n_t} must be at least 1")
        if self.time_scheme not in TIME_SCHEMES:
            raise ConfigurationError(
                f"unknown time scheme {self.time_scheme!r}; known: {TIME_SCHEMES}"
            )
        if len(self.forcing) > 1 and not self.forcing.covers(self.T):
            raise ConfigurationError(
                f"forcing stamps [{self.forcing.times[0]}, {self.forcing.times[-1]}] "
                f"do not cover [0, {self.T}]"
            )

    @property
    def n(self) -> int:
        return self.forcing.n

    @property
    def dim(self) -> int:
        return self.forcing.dim

    def stamps(self, spec: Optional[KernelSpec] = None) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.n_t + 1)
        extra = [s for s in self.forcing.times if 0.0 < s < self.T]
        if spec is not None:
            extra += [b for b in spec.breakpoints if 0.0 < b < self.T]
        return np.unique(np.concatenate([t, extra]))

    def with_forcing(self, forcing: GridSequence) -> "SolveConfig":
        return dataclasses.replace(self, forcing=forcing)

    def with_lambda(self, lam: float) -> "SolveConfig":
        return dataclasses.replace(self, lam=lam)


def phi_functions(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    ``exp(z)``, ``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z^2``
    by contour averages on a circle around each z.
    """
    z = np.asarray(z, dtype=complex)
    circle = CONTOUR_RADIUS * np.exp(
        2j * np.pi * (np.arange(1, CONTOUR_POINTS + 1) - 0.5) / CONTOUR_POINTS
    )
    zc = z[..., None] + circle
    ez = np.exp(zc)
    phi1 = np.mean((ez - 1.0) / zc, axis=-1)
    phi2 = np.mean((ez - 1.0 - zc) / zc**2, axis=-1)
    return np.exp(z), phi1, phi2


@dataclass
class HeatKernel:
    s: float
    t: float
    K: np.ndarray
    G: GridFunction

    @property
    def mass(self) -> float:
        return float(np.mean(self.G.values)) * (2.0 * np.pi) ** self.G.dim

    @property
    def min_ratio(self) -> float:
        """``min G / max G``."""
        return float(np.min(self.G.values) / np.max(self.G.values))


def heat_kernel(
    spec: KernelSpec,
    s: float,
    t: float,
    n: int,
    T: Optional[float] = None,
    table: Optional[SymbolTable] = None,
) -> HeatKernel:
    """
    ``K_{s,t}(xi) = exp(int_s^t psi(r, xi) dr)`` and its density
    ``G_{s,t}``, periodized on the torus.
    """
    if not t > s:
        raise ConfigurationError(f"heat_kernel: need s < t, got s = {s}, t = {t}")
    if not spec.x_independent:
        raise ConfigurationError(f"heat_kernel: kernel {spec.name} depends on x")
    if table is None:
        table = symbol_table(spec, n, T if T is not None else t)
    K = table.multiplier(s, t)
    G = fft.fftn(K).real / (2.0 * np.pi) ** spec.dim
    return HeatKernel(s=s, t=t, K=K, G=GridFunction(G, time_stamp=t))


@dataclass
class Solution:
    u: GridSequence
    lam: float
    T: float
    table: Optional[SymbolTable] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def at(self, t: float) -> GridFunction:
        return self.u.at(t)

    @property
    def final(self) -> GridFunction:
        return self.u[len(self.u) - 1]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.u.values)))

    def write(self, output_dir: str, fmt: str = "json", prefix: str = "u") -> List[str]:
        """Single JSON container or one CSV per stamp."""
        if fmt == "json":
            path = os.path.join(output_dir, f"{prefix}.json")
            data = {"lambda": self.lam, "T": self.T, **self.meta, **self.u.to_dict()}
            return [write_json(path, data)]
        if fmt == "csv":
            return self.u.write_csv(output_dir, prefix=prefix)
        raise ConfigurationError(f"unknown solution format {fmt!r}")


class ModeIntegrator:
    """
    Per-mode time stepping over a fixed step sequence with ``mu = psi - lam``
    and a forcing linear on each step. The exponential scheme
    ``u^(t+h) = e^{mu h} u^(t) + h phi1(mu h) f^_0 + h phi2(mu h) (f^_1 - f^_0)``
    is exact; the trapezoidal scheme
    ``(1 - mu h/2) u^(t+h) = (1 + mu h/2) u^(t) + h (f^_0 + f^_1) / 2``
    is second order.
    """

    def __init__(
        self,
        table: SymbolTable,
        lam: float,
        stamps: np.ndarray,
        scheme: str = "exponential",
    ) -> None:
        if scheme not in TIME_SCHEMES:
            raise ConfigurationError(f"unknown time scheme {scheme!r}; known: {TIME_SCHEMES}")
        self.table = table
        self.lam = lam
        self.scheme = scheme
        self.stamps = np.asarray(stamps, dtype=float)
        self.cells = [
            table.cell_index(0.5 * (a + b))
            for a, b in zip(self.stamps[:-1], self.stamps[1:])
        ]
        self._coeffs: Dict[Tuple[int, float], Tuple[np.ndarray, ...]] = {}

    def coefficients(self, j: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(e, a, b)`` with ``u^(t+h) = e u^(t) + a f^_0 + b (f^_1 - f^_0)``."""
        h = float(self.stamps[j + 1] - self.stamps[j])
        key = (self.cells[j], round(h, 14))
        if key not in self._coeffs:
            mu = self.table.psi[self.cells[j]] - self.lam
            if self.scheme == "exponential":
                e, p1, p2 = phi_functions(mu * h)
                self._coeffs[key] = (e, h * p1, h * p2)
            else:
                # Re mu <= 0, so the denominator stays away from zero
                g = 0.5 * h / (1.0 - 0.5 * mu * h)
                self._coeffs[key] = ((1.0 + 0.5 * mu * h) / (1.0 - 0.5 * mu * h), 2.0 * g, g)
        return self._coeffs[key]

    def run(self, f_left: np.ndarray, f_right: np.ndarray) -> np.ndarray:
        """
        :param f_left: forcing at the left end of each step, ``(steps,) + grid``
        :param f_right: forcing at the right end of each step
        :return: solution at every stamp, ``(steps + 1,) + grid``
        """
        steps = self.stamps.size - 1
        shape = f_left.shape[1:]
        out = np.zeros((steps + 1,) + shape)
        uh = np.zeros(shape, dtype=complex)
        for j in range(steps):
            e, h1, h2 = self.coefficients(j)
            f0 = fft.fftn(f_left[j])
            f1 = fft.fftn(f_right[j])
            uh = e * uh + h1 * f0 + h2 * (f1 - f0)
            out[j + 1] = fft.ifftn(uh).real
        return out


def forcing_ends(forcing: GridSequence, stamps: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = np.stack([forcing.at(t).values for t in stamps])
    return values[:-1], values[1:]


def resolve(
    spec: KernelSpec,
    config: SolveConfig,
    table: Optional[SymbolTable] = None,
    f_ends: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Solution:
    """
    Solve ``du/dt = A u - lam u + f``, ``u(0) = 0`` for an x-independent
    kernel. ``table`` may be passed to reuse symbols across solves;
    ``f_ends`` replaces the forcing by explicit left and right step values.
    """
    if not spec.x_independent:
        raise ConfigurationError(f"resolve: kernel {spec.name} depends on x")
    if spec.dim != config.dim:
        raise ConfigurationError("resolve: kernel and forcing dimensions differ")
    if table is None:
        table = symbol_table(spec, config.n, config.T, method=config.symbol_method)
    stamps = config.stamps(spec)
    if f_ends is None:
        f_ends = forcing_ends(config.forcing, stamps)
    integrator = ModeIntegrator(table, config.lam, stamps, scheme=config.time_scheme)
    values = integrator.run(*f_ends)
    return Solution(
        u=GridSequence(stamps, values),
        lam=config.lam,
        T=config.T,
        table=table,
        meta={"kernel": spec.name},
    )


def closed_form_mode(lam: float, c_k: complex, t: np.ndarray) -> np.ndarray:
    """Amplitude ``(1 - e^{-(lam + c_k) t}) / (lam + c_k)`` of a time-constant single mode."""
    rate = lam + c_k
    t = np.asarray(t, dtype=float)
    if rate == 0.0:
        return t.astype(complex)
    return (1.0 - np.exp(-rate * t)) / rate


def operator_integrand(
    u: GridSequence,
    spec: KernelSpec,
    lam: float,
    forcing: GridSequence,
    bspec: Optional[BOperatorSpec] = None,
    method: str = "quadrature",
) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yields ``(stamps, indices, L u - lam u + f)`` per kernel time cell."""
    edges = spec.cell_edges(float(u.times[-1]))
    for c in range(len(edges) - 1):
        lo, hi = edges[c], edges[c + 1]
        idx = np.flatnonzero((u.times >= lo - 1e-14) & (u.times <= hi + 1e-14))
        tc = 0.5 * (lo + hi)
        values = []
        for i in idx:
            ui = u[i]
            g = apply_L(ui, spec, bspec, tc, method=method).values
            values.append(g - lam * ui.values + forcing.at(u.times[i]).values)
        yield u.times[idx], idx, np.stack(values)


def verify_defs_identity(
    solution: Solution,
    spec: KernelSpec,
    config: SolveConfig,
    bspec: Optional[BOperatorSpec] = None,
    method: str = "quadrature",
) -> float:
    """
    ``max_{t, x} |u(t, x) - int_0^t [L u - lam u + f] ds|`` at the solution
    stamps, with the operator applied by quadrature and the time integral
    by the trapezoidal rule inside each kernel time cell.
    """
    u = solution.u
    integral = np.zeros_like(u.values)
    offset = np.zeros(u.values.shape[1:])
    for times, idx, g in operator_integrand(
        u, spec, config.lam, config.forcing, bspec=bspec, method=method
    ):
        if times.size < 2:
            continue
        cumulative = integrate.cumulative_trapezoid(g, times, axis=0, initial=0.0)
        integral[idx] = offset + cumulative
        offset = integral[idx[-1]]
    residual = float(np.max(np.abs(u.values - integral)))
    logger.info(f"solution identity residual: {residual:.3e}")
    return residual


def sup_bound_constant(solution: Solution, forcing: GridSequence) -> float:
    """Fitted ``C2`` in ``|u|_0 <= C2 (1/lam ^ T) |f|_0``."""
    scale = solution.T if solution.lam == 0.0 else min(1.0 / solution.lam, solution.T)
    f0 = float(np.max(np.abs(forcing.values)))
    if f0 == 0.0:
        return 0.0
    return solution.sup_norm() / (scale * f0)
