"""
Jump kernels, their symbols and the standing assumptions on them.

A kernel is given by the full density ``m(t, x, y)`` of the jump measure
``m(t, x, y) dy / |y|^{d+alpha}`` together with a spherical minorant
``m0(t, w)``. Kernels are piecewise constant in time: every evaluation in
time happens at the midpoint of the time cell that contains it.
"""

from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import copy
import dataclasses
import functools
from dataclasses import dataclass, field

import numpy as np
from nonlocal_cauchy import quadrature
from nonlocal_cauchy.config import config_path
from nonlocal_cauchy.errors import (
    AssumptionError,
    ConfigurationError,
    NumericalError,
)
from nonlocal_cauchy.utils import (
    ExprClosure,
    IncludeLoader,
    get_module_logger,
    read_from_yaml,
)

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = get_module_logger(__name__)

KERNEL_FORMALS = ["t", "x1", "x2", "y1", "y2", "r", "theta"]
MINORANT_FORMALS = ["t", "w1", "w2", "theta"]

# Radial layout of the direct symbol quadrature, in the scaled variable
# s = |(w, xi)| r (radians of phase).
INNER_PHASE = 1e-3
PANEL_PHASE = 2.0
# Kernels that vary along rays are integrated out to this |y| before the
# density is frozen for the analytic tail.
FREEZE_RADIUS = 2.0 * np.pi

KernelDensity = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
MinorantDensity = Callable[[float, np.ndarray], np.ndarray]


class ExpressionDensity:
    """
    ``m(t, x, y)`` from a closed-form expression over ``KERNEL_FORMALS``.
    ``x`` and ``y`` carry the spatial components in their last axis.
    """

    def __init__(self, expr: str, dim: int) -> None:
        self.expr = str(expr)
        self.dim = dim
        self.closure = ExprClosure(KERNEL_FORMALS, self.expr)

    def __call__(self, t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x1 = x[..., 0]
        x2 = x[..., 1] if self.dim == 2 else np.zeros_like(x1)
        y1 = y[..., 0]
        y2 = y[..., 1] if self.dim == 2 else np.zeros_like(y1)
        r = np.sqrt(y1 * y1 + y2 * y2)
        theta = np.arctan2(y2, y1)
        return self.closure(t, x1, x2, y1, y2, r, theta)

    @property
    def x_independent(self) -> bool:
        return not self.closure.depends_on("x1", "x2")

    @property
    def homogeneous(self) -> bool:
        return not self.closure.depends_on("y1", "y2", "r")

    def __repr__(self):
        return f"ExpressionDensity({self.expr!r})"


class ExpressionMinorant:
    """``m0(t, w)`` from a closed-form expression over ``MINORANT_FORMALS``."""

    def __init__(self, expr: str, dim: int) -> None:
        self.expr = str(expr)
        self.dim = dim
        self.closure = ExprClosure(MINORANT_FORMALS, self.expr)

    def __call__(self, t, w):
        w = np.asarray(w, dtype=float)
        w1 = w[..., 0]
        w2 = w[..., 1] if self.dim == 2 else np.zeros_like(w1)
        return self.closure(t, w1, w2, np.arctan2(w2, w1))

    def __repr__(self):
        return f"ExpressionMinorant({self.expr!r})"


class MinorantAsDensity:
    """The minorant viewed as an x-independent, homogeneous full density."""

    x_independent = True
    homogeneous = True

    def __init__(self, m0: MinorantDensity) -> None:
        self.m0 = m0

    def __call__(self, t, x, y):
        y = np.asarray(y, dtype=float)
        r = np.linalg.norm(y, axis=-1, keepdims=True)
        w = y / np.where(r > 0.0, r, 1.0)
        shape = np.broadcast_shapes(np.shape(x)[:-1], y.shape[:-1])
        return np.broadcast_to(self.m0(t, w), shape).copy()


class GridAverageDensity:
    """
    x-average of a density over a periodic grid, evaluated lazily; used as
    the reference kernel of the frozen-coefficient iteration.
    """

    x_independent = True

    def __init__(self, m: KernelDensity, dim: int, n: int) -> None:
        self.m = m
        self.dim = dim
        self.n = n
        axes = [2.0 * np.pi * np.arange(n) / n] * dim
        self.points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        self.points = self.points.reshape(-1, dim)
        self.homogeneous = getattr(m, "homogeneous", False)

    def __call__(self, t, x, y):
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(np.shape(x)[:-1], y.shape[:-1])
        yy = np.broadcast_to(y, shape + (self.dim,)).reshape(-1, self.dim)
        total = np.zeros(yy.shape[0])
        for p in self.points:
            total += self.m(t, p[None, :], yy)
        return (total / self.points.shape[0]).reshape(shape)


class TimeReversed:
    """``m(T - t, ...)``: coefficients of the time-reversed problem."""

    def __init__(self, inner: Callable, horizon: float) -> None:
        self.inner = inner
        self.horizon = horizon
        self.x_independent = getattr(inner, "x_independent", False)
        self.homogeneous = getattr(inner, "homogeneous", False)

    def __call__(self, t, *args):
        return self.inner(self.horizon - t, *args)


@dataclass
class KernelSpec:
    """
    Jump kernel of order ``alpha`` in dimension ``dim``.

    :param m0: spherical minorant ``(t, w) -> array``
    :param m: full density ``(t, x, y) -> array``
    :param eta: lower bound required of the spherical integral of ``m0``
    :param bigK: upper bound for ``m`` and for its x-Hölder norm
    :param beta: x-Hölder exponent of the density
    :param breakpoints: times at which the kernel may jump
    """

    alpha: float
    dim: int
    m0: MinorantDensity
    m: KernelDensity
    eta: float
    bigK: float
    beta: float = 1.0
    breakpoints: Tuple[float, ...] = ()
    name: str = "inline"
    x_independent: Optional[bool] = None
    homogeneous: Optional[bool] = None
    expressions: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = float(self.alpha)
        if not 0.0 < self.alpha < 2.0:
            raise ConfigurationError(
                f"kernel {self.name}: alpha = {self.alpha} outside (0, 2)"
            )
        if self.dim not in (1, 2):
            raise ConfigurationError(
                f"kernel {self.name}: dim = {self.dim} not in {{1, 2}}"
            )
        if not self.eta > 0.0:
            raise ConfigurationError(
                f"kernel {self.name}: eta = {self.eta} must be positive"
            )
        if not self.bigK > 0.0:
            raise ConfigurationError(
                f"kernel {self.name}: bigK = {self.bigK} must be positive"
            )
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError(
                f"kernel {self.name}: beta = {self.beta} outside (0, 1]"
            )
        self.breakpoints = tuple(sorted(float(b) for b in self.breakpoints))
        if self.x_independent is None:
            self.x_independent = bool(getattr(self.m, "x_independent", False))
        if self.homogeneous is None:
            self.homogeneous = bool(getattr(self.m, "homogeneous", False))

    @classmethod
    def from_expressions(
        cls,
        alpha: float,
        dim: int,
        m0: str,
        m: str,
        eta: float,
        bigK: float,
        beta: float = 1.0,
        breakpoints: Sequence[float] = (),
        name: str = "inline",
    ) -> "KernelSpec":
        try:
            density = ExpressionDensity(m, dim)
            minorant = ExpressionMinorant(m0, dim)
        except Exception as e:
            raise ConfigurationError(
                f"kernel {name}: cannot parse expressions: {e}"
            ) from e
        return cls(
            alpha=alpha,
            dim=dim,
            m0=minorant,
            m=density,
            eta=eta,
            bigK=bigK,
            beta=beta,
            breakpoints=tuple(breakpoints),
            name=name,
            expressions={"m0": str(m0), "m": str(m)},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "alpha": self.alpha,
            "dim": self.dim,
            "eta": self.eta,
            "bigK": self.bigK,
            "beta": self.beta,
            "breakpoints": list(self.breakpoints),
            "x_independent": self.x_independent,
            "homogeneous": self.homogeneous,
            **self.expressions,
        }

    def cell_edges(self, T: float) -> np.ndarray:
        inner = [b for b in self.breakpoints if 0.0 < b < T]
        return np.array([0.0] + inner + [float(T)])

    def cell_time(self, t: float, T: float) -> float:
        """Midpoint of the time cell containing ``t`` (right-continuous)."""
        edges = self.cell_edges(T)
        i = int(np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(edges) - 2))
        return 0.5 * (edges[i] + edges[i + 1])

    def reference(self, kind: str = "minorant", n: int = 64) -> "KernelSpec":
        """
        x-independent reference kernel of the frozen-coefficient iteration:
        ``"minorant"`` uses m0 itself, ``"x-average"`` the grid mean of m.
        """
        if kind == "minorant":
            density = MinorantAsDensity(self.m0)
        elif kind == "x-average":
            if self.x_independent:
                return self
            density = GridAverageDensity(self.m, self.dim, n)
        else:
            raise ConfigurationError(f"unknown reference kernel {kind!r}")
        return dataclasses.replace(
            self,
            m=density,
            name=f"{self.name}/{kind}",
            x_independent=True,
            homogeneous=getattr(density, "homogeneous", False),
        )

    def time_reversed(self, T: float) -> "KernelSpec":
        return dataclasses.replace(
            self,
            m0=TimeReversed(self.m0, T),
            m=TimeReversed(self.m, T),
            breakpoints=tuple(T - b for b in self.breakpoints if 0.0 < b < T),
            name=f"{self.name}/reversed",
        )

    def mixture(self, other: "KernelSpec", a: float, b: float) -> "KernelSpec":
        """Kernel ``a m + b m'`` with matching order; minorant ``a m0 + b m0'``."""
        m1, m2, n1, n2 = self.m, other.m, self.m0, other.m0

        def density(t, x, y):
            return a * m1(t, x, y) + b * m2(t, x, y)

        def minorant(t, w):
            return a * n1(t, w) + b * n2(t, w)

        return dataclasses.replace(
            self,
            m=density,
            m0=minorant,
            bigK=abs(a) * self.bigK + abs(b) * other.bigK,
            name=f"{a}*{self.name}+{b}*{other.name}",
            x_independent=self.x_independent and other.x_independent,
            homogeneous=self.homogeneous and other.homogeneous,
            expressions={},
        )


@dataclass
class SymbolTable:
    """
    Symbol values on the full dual grid for every time cell.

    ``psi[c]`` has shape ``(n,) * dim`` in FFT ordering and belongs to the
    time cell ``[cell_edges[c], cell_edges[c + 1])``.
    """

    n: int
    dim: int
    cell_edges: np.ndarray
    psi: np.ndarray
    constant: float
    method: str = "direct"

    @property
    def frequencies(self) -> Tuple[np.ndarray, ...]:
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))

    def integrated(self, s: float, t: float) -> np.ndarray:
        """``int_s^t psi(r, xi) dr``, exact for piecewise constant kernels."""
        out = np.zeros(self.psi.shape[1:], dtype=complex)
        edges = self.cell_edges
        for c in range(len(edges) - 1):
            overlap = min(t, edges[c + 1]) - max(s, edges[c])
            if overlap > 0.0:
                out += overlap * self.psi[c]
        return out

    def multiplier(self, s: float, t: float) -> np.ndarray:
        return np.exp(self.integrated(s, t))

    def cell_index(self, t: float) -> int:
        e = self.cell_edges
        return int(np.clip(np.searchsorted(e, t, side="right") - 1, 0, len(e) - 2))


@dataclass
class ClauseResult:
    clause: str
    passed: bool
    value: float
    threshold: float
    witness: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class AssumptionReport:
    kernel: str
    alpha: float
    dim: int
    clauses: List[ClauseResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> ClauseResult:
        for c in self.clauses:
            if c.clause == name:
                return c
        raise KeyError(name)

    def failures(self) -> List[str]:
        return [c.clause for c in self.clauses if not c.passed]

    def raise_if_failed(self) -> None:
        if not self.passed:
            raise AssumptionError(
                f"kernel {self.kernel}: failed clauses {self.failures()}",
                report=self,
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kernel": self.kernel,
            "alpha": self.alpha,
            "dim": self.dim,
            "passed": self.passed,
            "clauses": [c.to_dict() for c in self.clauses],
        }


def _as_points(a, dim: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
        a = a[..., None]
    if a.shape[-1] != dim:
        raise ConfigurationError(f"expected points of dimension {dim}")
    return a


def _spherical_integral(
    m0_values: np.ndarray, w: np.ndarray, weights: np.ndarray, xi: np.ndarray, alpha: float
) -> np.ndarray:
    a = np.abs(xi @ w.T) ** alpha
    return a @ (weights * m0_values)


def validate_assumptions(
    spec: KernelSpec,
    t_samples: Sequence[float],
    x_samples: Sequence,
    n_angles: int = 256,
    n_xi: int = 720,
    radii: Optional[Sequence[float]] = None,
    tol: float = 1e-8,
) -> AssumptionReport:
    """
    Check the standing assumptions on a kernel at sampled points.

    Clauses: ``A0(ii)`` and ``alpha1-symmetry`` (alpha = 1 only),
    ``A0(iii)`` (infimum of the spherical integral over a dense circle of
    frequencies), ``A(i)-minorant``, ``A(i)-bound``, ``A(i)-holder`` and,
    for alpha = 1, ``A(ii)`` (cancellation on annuli).

    :return: AssumptionReport with one ClauseResult per clause
    """
    t_samples = np.atleast_1d(np.asarray(t_samples, dtype=float))
    x_samples = _as_points(x_samples, spec.dim).reshape(-1, spec.dim)
    if t_samples.size == 0 or x_samples.shape[0] == 0:
        raise ConfigurationError("validate_assumptions: empty sample set")
    if radii is None:
        radii = np.geomspace(1e-3, 1e2, 11)
    radii = np.asarray(radii, dtype=float)

    report = AssumptionReport(kernel=spec.name, alpha=spec.alpha, dim=spec.dim)
    w, weights = quadrature.sphere_rule(spec.dim, n_angles)
    if spec.dim == 1:
        xi = np.array([[1.0], [-1.0]])
    else:
        phi = 2.0 * np.pi * np.arange(n_xi) / n_xi
        xi = np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    # A0(iii): non-degeneracy of the minorant
    inf_value, inf_witness = np.inf, {}
    for t in t_samples:
        vals = _spherical_integral(spec.m0(t, w), w, weights, xi, spec.alpha)
        i = int(np.argmin(vals))
        if vals[i] < inf_value:
            inf_value = float(vals[i])
            inf_witness = {"t": float(t), "xi": xi[i].tolist()}
    inf_witness["margin"] = inf_value - spec.eta
    report.clauses.append(
        ClauseResult("A0(iii)", inf_value >= spec.eta, inf_value, spec.eta, inf_witness)
    )

    m0_min = min(float(np.min(spec.m0(t, w))) for t in t_samples)
    report.clauses.append(
        ClauseResult(
            "A0(i)-nonnegative", m0_min >= -tol, m0_min, 0.0, {}
        )
    )

    if spec.alpha == 1.0:
        worst, witness = 0.0, {}
        for t in t_samples:
            moment = (weights * spec.m0(t, w)) @ w
            size = float(np.linalg.norm(moment))
            if size >= worst:
                worst, witness = size, {"t": float(t), "moment": moment.tolist()}
        report.clauses.append(
            ClauseResult("A0(ii)", worst <= 1e-6, worst, 1e-6, witness)
        )

    # A(i): minorant, upper bound and x-Hölder bound on sampled (t, x, y)
    y = (radii[:, None, None] * w[None, :, :]).reshape(-1, spec.dim)
    yhat = np.tile(w, (radii.size, 1))
    gap_min, gap_witness = np.inf, {}
    top, top_witness = -np.inf, {}
    holder_max, holder_witness = 0.0, {}
    asym, asym_witness = 0.0, {}
    for t in t_samples:
        m0_vals = spec.m0(t, yhat)
        values = np.stack([spec.m(t, x[None, :], y) for x in x_samples])
        gap = values - m0_vals[None, :]
        i, j = np.unravel_index(np.argmin(gap), gap.shape)
        if gap[i, j] < gap_min:
            gap_min = float(gap[i, j])
            gap_witness = {"t": float(t), "x": x_samples[i].tolist(), "y": y[j].tolist()}
        i, j = np.unravel_index(np.argmax(values), values.shape)
        if values[i, j] > top:
            top = float(values[i, j])
            top_witness = {"t": float(t), "x": x_samples[i].tolist(), "y": y[j].tolist()}
        holder, hw = x_holder_norm(values, x_samples, spec.beta)
        if holder > holder_max:
            holder_max = holder
            holder_witness = {"t": float(t), "y": y[hw].tolist()}
        if spec.alpha == 1.0:
            mirrored = np.stack([spec.m(t, x[None, :], -y) for x in x_samples])
            diff = np.abs(values - mirrored)
            i, j = np.unravel_index(np.argmax(diff), diff.shape)
            if diff[i, j] >= asym:
                asym = float(diff[i, j])
                asym_witness = {"t": float(t), "x": x_samples[i].tolist(), "y": y[j].tolist()}

    report.clauses.append(
        ClauseResult("A(i)-minorant", gap_min >= -tol, gap_min, 0.0, gap_witness)
    )
    report.clauses.append(
        ClauseResult("A(i)-bound", top <= spec.bigK + tol, top, spec.bigK, top_witness)
    )
    report.clauses.append(
        ClauseResult(
            "A(i)-holder",
            holder_max <= spec.bigK + tol,
            holder_max,
            spec.bigK,
            holder_witness,
        )
    )
    if spec.alpha == 1.0:
        report.clauses.append(
            ClauseResult("alpha1-symmetry", asym <= tol, asym, tol, asym_witness)
        )
        worst, witness = _annulus_cancellation(spec, t_samples, x_samples, w, weights)
        report.clauses.append(ClauseResult("A(ii)", worst <= 1e-6, worst, 1e-6, witness))

    for c in report.clauses:
        if not c.passed:
            logger.warning(
                f"kernel {spec.name}: clause {c.clause} fails "
                f"(value {c.value:.6g}, threshold {c.threshold:.6g})"
            )
    return report


def x_holder_norm(values: np.ndarray, x: np.ndarray, beta: float):
    """sup_x |m| + [m]_beta over the sampled x, per column of ``values``."""
    sup = np.max(np.abs(values), axis=0)
    semi = np.zeros(values.shape[1])
    for i in range(x.shape[0]):
        d = np.abs(x[i][None, :] - x)
        d = np.minimum(d, 2.0 * np.pi - d)
        dist = np.linalg.norm(d, axis=-1)
        ok = dist > 0.0
        if np.any(ok):
            q = np.abs(values[i][None, :] - values[ok]) / dist[ok, None] ** beta
            semi = np.maximum(semi, np.max(q, axis=0))
    total = sup + semi
    j = int(np.argmax(total))
    return float(total[j]), j


def _annulus_cancellation(spec, t_samples, x_samples, w, weights):
    """
    ``max | int_{r < |y| <= 1} y m dy / |y|^{d+1} |`` over sampled (t, x, r).
    """
    rho, rw = quadrature.panel_rule(
        quadrature.geometric_breakpoints(1e-3, 1.0, 4), 12, geometric=True
    )
    worst, witness = 0.0, {}
    for t in t_samples:
        for x in x_samples:
            # integrand w m(rho w) / rho on each ray
            vals = np.stack([spec.m(t, x[None, :], r * w) for r in rho])
            per_dir = np.cumsum((rw / rho)[::-1, None] * vals[::-1], axis=0)[::-1]
            vec = per_dir * weights[None, :]
            moments = vec @ w
            size = np.linalg.norm(moments, axis=-1)
            k = int(np.argmax(size))
            if size[k] >= worst:
                worst = float(size[k])
                witness = {"t": float(t), "x": x.tolist(), "r": float(rho[k])}
    return worst, witness


@functools.lru_cache(maxsize=None)
def calibrate_constant(alpha: float) -> float:
    """
    Normalization constant of the spherical symbol formula, calibrated by
    matching the direct quadrature of the isotropic kernel at xi = 1.
    """
    spec = presets()["isotropic"](alpha, 1)
    value = symbol_direct(spec, 0.0, np.zeros(1), np.array([1.0]))
    c = float(-value.real / 2.0)
    exact = quadrature.stable_constant(alpha)
    logger.info(
        f"C({alpha}) calibrated to {c:.12g} "
        f"(closed form {exact:.12g}, relative deviation {abs(c / exact - 1.0):.2e})"
    )
    return c


@functools.lru_cache(maxsize=None)
def fractional_laplacian_constant(alpha: float, dim: int) -> float:
    """``c_{d,alpha}`` with ``-c |xi|^alpha`` the symbol of the isotropic kernel."""
    spec = presets()["isotropic"](alpha, dim)
    e1 = np.zeros(dim)
    e1[0] = 1.0
    c = float(-symbol_direct(spec, 0.0, np.zeros(dim), e1).real)
    logger.info(f"c_(d={dim}, alpha={alpha}) = {c:.12g}")
    return c


def symbol_spherical(
    spec: KernelSpec,
    t: float,
    xi,
    density: str = "minorant",
    n_angles: int = 256,
    x=None,
) -> np.ndarray:
    """
    Symbol from the spherical integral formula

    .. math::

        \\psi(\\xi) = -C(\\alpha) \\int_{S} |(w,\\xi)|^\\alpha
            [1 - i \\tan(\\alpha\\pi/2) \\mathrm{sgn}(w,\\xi)] m_0(w) dw

    with the logarithmic correction ``+ i (2/pi) sgn(w, xi) ln|(w, xi)|`` in
    place of the tangent term when alpha = 1.

    ``density="minorant"`` uses m0; ``density="full"`` uses the angular
    profile of an x-independent homogeneous density m.
    """
    xi = _as_points(xi, spec.dim)
    shape = xi.shape[:-1]
    xi = xi.reshape(-1, spec.dim)
    w, weights = quadrature.sphere_rule(spec.dim, n_angles)
    if density == "minorant":
        rho = spec.m0(t, w)
    elif density == "full":
        if not spec.homogeneous:
            raise ConfigurationError(
                "symbol_spherical: full density must be homogeneous in y"
            )
        x0 = np.zeros((1, spec.dim)) if x is None else _as_points(x, spec.dim).reshape(1, -1)
        rho = spec.m(t, x0, w)
    else:
        raise ConfigurationError(f"unknown density {density!r}")

    alpha = spec.alpha
    if alpha == 1.0:
        moment = np.linalg.norm((weights * rho) @ w)
        if moment > 1e-6:
            raise AssumptionError(
                f"kernel {spec.name}: alpha = 1 and the first angular "
                f"moment {moment:.3g} does not vanish"
            )
    c = calibrate_constant(alpha)
    a = xi @ w.T
    q = np.abs(a)
    sgn = np.sign(a)
    if alpha == 1.0:
        logq = np.log(np.where(q > 0.0, q, 1.0))
        bracket = 1.0 + 1j * (2.0 / np.pi) * sgn * logq
    else:
        bracket = 1.0 - 1j * np.tan(0.5 * np.pi * alpha) * sgn
    values = -c * ((q**alpha * bracket) @ (weights * rho))
    return values.reshape(shape)


@functools.lru_cache(maxsize=None)
def _phase_rule(refine: int):
    """s-variable rule on [INNER_PHASE, ASYMPTOTIC_START]."""
    return quadrature.radial_rule(
        INNER_PHASE / 10 ** (refine - 1),
        1.0,
        quadrature.ASYMPTOTIC_START,
        PANEL_PHASE / refine,
        order=12,
        per_decade=4 * refine,
    )


def _chi(alpha: float, s: np.ndarray, q: Union[float, np.ndarray] = 1.0) -> np.ndarray:
    """Compensation indicator in the phase variable s = q |y|."""
    if alpha > 1.0:
        return np.ones_like(s)
    if alpha == 1.0:
        return (s <= q).astype(float)
    return np.zeros_like(s)


def _inner_taylor(alpha: float, s0: float, sigma: np.ndarray) -> np.ndarray:
    """``int_0^s0 (e^{i sigma s} - 1 - chi i sigma s) s^{-1-alpha} ds``."""
    second = -(s0 ** (2.0 - alpha)) / (2.0 * (2.0 - alpha))
    third = -1j * sigma * s0 ** (3.0 - alpha) / (6.0 * (3.0 - alpha))
    fourth = s0 ** (4.0 - alpha) / (24.0 * (4.0 - alpha))
    out = second + third + fourth
    if alpha < 1.0:
        out = out + 1j * sigma * s0 ** (1.0 - alpha) / (1.0 - alpha)
    return out


def _outer_tail(alpha: float, s1: float, sigma: np.ndarray) -> np.ndarray:
    """``int_s1^inf (e^{i sigma s} - 1 - chi i sigma s) s^{-1-alpha} ds``, s1 > 1."""
    osc = quadrature.asymptotic_tail(s1, 1.0 + alpha)
    osc = np.where(sigma > 0, osc, np.conj(osc))
    out = osc - s1**-alpha / alpha
    if alpha > 1.0:
        out = out - 1j * sigma * s1 ** (1.0 - alpha) / (alpha - 1.0)
    return out


@functools.lru_cache(maxsize=None)
def _ray_profile(alpha: float, sigma: float, refine: int) -> complex:
    """Radial integral of a ray with unit density, in the phase variable."""
    s, ws = _phase_rule(refine)
    s0 = INNER_PHASE / 10 ** (refine - 1)
    g = np.exp(1j * sigma * s) - 1.0 - _chi(alpha, s) * 1j * sigma * s
    total = np.sum(ws * g * s ** (-1.0 - alpha))
    total += _inner_taylor(alpha, s0, np.array(sigma))
    total += _outer_tail(alpha, quadrature.ASYMPTOTIC_START, np.array(sigma))
    return complex(total)


def symbol_direct(
    spec: KernelSpec,
    t: float,
    x,
    xi,
    refine: int = 1,
    n_angles: int = 256,
    check: bool = False,
    rtol: float = 1e-6,
) -> np.ndarray:
    """
    Symbol by direct quadrature of

    .. math::

        \\int [e^{i(\\xi,y)} - 1 - \\chi_\\alpha(y) i(\\xi,y)]
            m(t,x,y) dy / |y|^{d+\\alpha}

    in polar coordinates. Along each ray the radius is rescaled to the phase
    s = |(w, xi)| |y|, so one rule serves all frequencies: Taylor expansion
    below ``INNER_PHASE``, Gauss panels up to the asymptotic start and the
    closed-form oscillatory tail beyond (density frozen there, which is
    exact when m is constant along rays past ``FREEZE_RADIUS``).

    With ``check=True`` the evaluation is repeated on a refined rule and a
    :class:`NumericalError` is raised when the two disagree by more than
    ``rtol`` relative.
    """
    xi = _as_points(xi, spec.dim)
    shape = xi.shape[:-1]
    xi = xi.reshape(-1, spec.dim)
    x = _as_points(x, spec.dim).reshape(1, spec.dim)
    w, weights = quadrature.sphere_rule(spec.dim, n_angles)
    if spec.homogeneous:
        values = _direct_homogeneous(spec, t, x, xi, w, weights, refine)
    else:
        values = _direct_general(spec, t, x, xi, w, weights, refine)
    if check:
        refined = symbol_direct(
            spec, t, x, xi, refine=refine + 1, n_angles=n_angles
        ).reshape(-1)
        scale = np.maximum(np.abs(refined), 1e-300)
        err = np.abs(values - refined) / scale
        err = np.where(np.abs(refined) > 0.0, err, np.abs(values))
        if np.max(err, initial=0.0) > rtol:
            k = int(np.argmax(err))
            raise NumericalError(
                "symbol_direct: radial refinement disagreement",
                {"xi": xi[k].tolist(), "relative_error": float(err[k]), "rtol": rtol},
            )
    return values.reshape(shape)


def directional_symbol(alpha: float, a, refine: int = 1) -> np.ndarray:
    """
    Symbol of a single ray with unit density: the radial integral of
    ``e^{i a r} - 1 - chi_alpha i a r`` against ``r^{-1-alpha} dr`` for real
    ``a = (w, xi)``. Kernels homogeneous in y are angular averages of it.
    """
    a = np.asarray(a, dtype=float)
    plus = _ray_profile(alpha, 1.0, refine)
    minus = _ray_profile(alpha, -1.0, refine)
    q = np.abs(a)
    ray = np.where(a > 0.0, plus, np.where(a < 0.0, minus, 0.0))
    out = q**alpha * ray
    if alpha == 1.0:
        # truncation at |y| = 1 instead of s = 1
        logq = np.log(np.where(q > 0.0, q, 1.0))
        out = out - 1j * np.sign(a) * q * logq
    return out


def _direct_homogeneous(spec, t, x, xi, w, weights, refine):
    rho = spec.m(t, x, w)
    return directional_symbol(spec.alpha, xi @ w.T, refine) @ (weights * rho)


def _direct_general(spec, t, x, xi, w, weights, refine):
    """
    Per-ray quadrature for densities that vary along rays. The density is
    frozen at its value on the inner phase ``INNER_PHASE`` and on the outer
    phase ``s_out``; both end pieces are exact only for ray-constant
    ``m``, so a radially varying density must have settled by the radius
    ``s_out / q >= FREEZE_RADIUS``.
    """
    alpha = spec.alpha
    p = 1.0 + alpha
    s0 = INNER_PHASE / 10 ** (refine - 1)
    out = np.zeros(xi.shape[0], dtype=complex)
    x_ = x.reshape(1, 1, spec.dim)
    for k in range(xi.shape[0]):
        a = w @ xi[k]
        live = a != 0.0
        if not np.any(live):
            continue
        aw, wl, wts = a[live], w[live], weights[live]
        q = np.abs(aw)
        sigma = np.sign(aw)
        s_out = max(quadrature.ASYMPTOTIC_START, float(np.max(q)) * FREEZE_RADIUS)
        s, ws = quadrature.radial_rule(
            s0,
            1.0,
            s_out,
            PANEL_PHASE / refine,
            order=12,
            per_decade=4 * refine,
        )
        y = (s[None, :, None] / q[:, None, None]) * wl[:, None, :]
        m = spec.m(t, x_, y)
        phase = np.exp(1j * sigma[:, None] * s[None, :])
        g = phase - 1.0 - _chi(alpha, s)[None, :] * 1j * sigma[:, None] * s[None, :]
        body = np.sum(ws[None, :] * g * m * s[None, :] ** -p, axis=1)
        m_in = spec.m(t, x_[0], (s0 / q)[:, None] * wl)
        m_out = spec.m(t, x_[0], (s_out / q)[:, None] * wl)
        body += m_in * _inner_taylor(alpha, s0, sigma)
        body += m_out * _outer_tail(alpha, s_out, sigma)
        per_dir = q**alpha * body
        if alpha == 1.0:
            per_dir = per_dir + q * _unit_ball_correction(spec, t, x_[0], wl, q, sigma)
        out[k] = np.sum(wts * per_dir)
    return out


def _unit_ball_correction(spec, t, x, w, q, sigma, order: int = 16):
    """
    ``-i sigma int (1_{s <= q} - 1_{s <= 1}) m(s w / q) ds / s`` per
    direction, moving the truncation from s = 1 to |y| = 1.
    """
    lo = np.minimum(q, 1.0)
    hi = np.maximum(q, 1.0)
    u_lo, u_hi = np.log(lo), np.log(hi)
    gx, gw = quadrature.gauss_legendre(order)
    u = 0.5 * (u_hi - u_lo)[:, None] * (gx[None, :] + 1.0) + u_lo[:, None]
    s = np.exp(u)
    y = (s / q[:, None])[:, :, None] * w[:, None, :]
    m = spec.m(t, x[None, :], y)
    integral = np.sum(0.5 * (u_hi - u_lo)[:, None] * gw[None, :] * m, axis=1)
    return -1j * sigma * np.sign(q - 1.0) * integral


def dual_grid(n: int, dim: int) -> np.ndarray:
    """Integer frequency vectors of an n^dim grid, FFT ordering, shape (n,)*dim + (dim,)."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.stack(np.meshgrid(*([k] * dim), indexing="ij"), axis=-1)


def symbol_table(
    spec: KernelSpec,
    n: int,
    T: float,
    method: str = "direct",
    density: str = "full",
    x=None,
) -> SymbolTable:
    """
    Symbol of an x-independent kernel on the full dual grid, per time cell.

    ``method="direct"`` works for measurable densities; ``"spherical"``
    needs a homogeneous density (``density="full"``) or the minorant.
    Conjugate symmetry is used to evaluate only half of the frequencies.
    """
    if density == "full" and not spec.x_independent and x is None:
        raise ConfigurationError(
            f"symbol_table: kernel {spec.name} depends on x"
        )
    x = np.zeros(spec.dim) if x is None else x
    edges = spec.cell_edges(T)
    k = dual_grid(n, spec.dim).reshape(-1, spec.dim)
    # linear index of -xi; one representative of each pair {xi, -xi} is kept
    flip = (-np.arange(n)) % n
    index = np.arange(n**spec.dim).reshape((n,) * spec.dim)
    mirror = index[np.ix_(*([flip] * spec.dim))].reshape(-1)
    keep = mirror >= np.arange(n**spec.dim)
    psi = np.zeros((len(edges) - 1, k.shape[0]), dtype=complex)
    for c in range(len(edges) - 1):
        tc = 0.5 * (edges[c] + edges[c + 1])
        if method == "direct":
            if density == "minorant":
                target = spec.reference("minorant")
            else:
                target = spec
            vals = symbol_direct(target, tc, x, k[keep])
        elif method == "spherical":
            vals = symbol_spherical(spec, tc, k[keep], density=density, x=x)
        else:
            raise ConfigurationError(f"unknown symbol method {method!r}")
        psi[c, keep] = vals
        psi[c, ~keep] = np.conj(psi[c, mirror[~keep]])
    psi[:, np.all(k == 0, axis=-1)] = 0.0
    return SymbolTable(
        n=n,
        dim=spec.dim,
        cell_edges=edges,
        psi=psi.reshape((len(edges) - 1,) + (n,) * spec.dim),
        constant=calibrate_constant(spec.alpha),
        method=method,
    )


@functools.lru_cache(maxsize=1)
def _preset_config() -> Dict[str, Dict[str, Any]]:
    return read_from_yaml(config_path("Kernels.yaml"), include_loader=IncludeLoader)


def presets() -> Dict[str, Callable[..., KernelSpec]]:
    """
    Built-in kernels as factories ``(alpha, dim, beta=1.0) -> KernelSpec``.
    """
    out = {}
    for name, entry in _preset_config().items():
        out[name] = functools.partial(kernel_from_config, copy.deepcopy(entry), name=name)
    return out


def kernel_from_config(
    entry: Union[str, Dict[str, Any]],
    alpha: float,
    dim: int,
    beta: float = 1.0,
    name: Optional[str] = None,
    table: Optional[Mapping[str, Any]] = None,
) -> KernelSpec:
    """
    Build a kernel from a preset name or an inline mapping with keys
    ``m0``, ``m``, ``eta``, ``bigK`` and optionally ``breakpoints``,
    ``beta``. Inline keys override the preset named by ``preset``, looked
    up in ``table`` (default: the packaged presets).
    """
    if isinstance(entry, str):
        entry = {"preset": entry}
    entry = dict(entry)
    base = entry.pop("preset", None)
    if base is not None:
        table = _preset_config() if table is None else table
        if base not in table:
            raise ConfigurationError(
                f"unknown kernel preset {base!r}; known: {sorted(table)}"
            )
        merged = copy.deepcopy(table[base])
        merged.update(entry)
        entry = merged
        name = name or base
    missing = [k for k in ("m0", "m", "eta", "bigK") if k not in entry]
    if missing:
        raise ConfigurationError(f"kernel {name}: missing keys {missing}")
    return KernelSpec.from_expressions(
        alpha=alpha,
        dim=dim,
        m0=entry["m0"],
        m=entry["m"],
        eta=float(entry["eta"]),
        bigK=float(entry["bigK"]),
        beta=float(entry.get("beta", beta)),
        breakpoints=entry.get("breakpoints", ()),
        name=name or "inline",
    )


def fit_decay_constant(table: SymbolTable, alpha: float, cell: int = 0) -> float:
    """
    Largest ``eta'`` with ``Re psi(xi) <= -eta' |xi|^alpha`` on the dual grid.
    """
    k = np.stack(table.frequencies, axis=-1).reshape(-1, table.dim)
    norm = np.linalg.norm(k, axis=-1)
    nz = norm > 0
    ratio = -table.psi[cell].reshape(-1)[nz].real / norm[nz] ** alpha
    return float(np.min(ratio))
