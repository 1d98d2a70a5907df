"""
Nonlocal operators on periodic grid functions.

The principal part ``A`` and the lower-order part ``B`` are applied by
quadrature in y: polar nodes ``y = r w`` with the shifted values
``u(x + y)`` obtained exactly from the Fourier series of ``u``. The region
``|y| < inner`` is replaced by its Taylor expansion with spectral gradient
and Hessian; beyond ``tail_radius`` the density is frozen per direction and
the oscillatory integral is done in closed form per Fourier mode.
"""

from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import dataclasses
import functools
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from nonlocal_cauchy import quadrature
from nonlocal_cauchy.errors import (
    AssumptionError,
    ConfigurationError,
    NumericalError,
)
from nonlocal_cauchy.holder import (
    GridFunction,
    composite_norm,
    fractional_derivative,
    gradient,
    grid_points,
    hessian,
    random_band_limited,
    sup_norm,
    wavenumbers,
)
from nonlocal_cauchy.kernel import (
    AssumptionReport,
    ClauseResult,
    ExpressionDensity,
    KernelSpec,
    directional_symbol,
    x_holder_norm,
)
from nonlocal_cauchy.utils import ExprClosure, get_module_logger
from scipy import fft, integrate, special

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = get_module_logger(__name__)

COMPENSATIONS = ("global", "unit-ball", "none")

# Largest number of floats kept per cached density table.
DENSITY_CACHE_LIMIT = 2**24
DENSITY_CACHE_ENTRIES = 12


def compensation_for(alpha: float) -> str:
    """Truncation of the gradient term of ``A`` of order ``alpha``."""
    if alpha > 1.0:
        return "global"
    if alpha == 1.0:
        return "unit-ball"
    return "none"


def frac_laplacian(u: GridFunction, alpha: float) -> GridFunction:
    """``-c_{d,alpha} |xi|^alpha`` applied to ``u``."""
    return fractional_derivative(u, alpha)


class JumpQuadrature:
    """
    Reusable node set for ``int [u(x+y) - u(x) - chi(y)(grad u(x), y)]
    m(x, y) dy / |y|^{d+order}`` on an ``n^dim`` grid.

    Nodes cover ``[inner, tail_radius]``: geometric panels up to
    ``min(tail_radius, 2 / K)`` and uniform panels of length at most
    ``panel_scale / K`` beyond, with ``K`` the grid bandwidth, so the
    oscillation of ``u(x + r w)`` in r stays resolved.
    """

    def __init__(
        self,
        n: int,
        dim: int,
        order: float,
        compensation: str,
        refine: int = 1,
        n_angles: int = 256,
        inner: float = 1e-4,
        tail_radius: float = np.pi,
        panel_order: int = 12,
        panel_scale: float = 3.0,
        per_decade: int = 4,
        chunk_size: int = 2**21,
    ) -> None:
        if compensation not in COMPENSATIONS:
            raise ConfigurationError(f"unknown compensation {compensation!r}")
        if compensation == "none" and order >= 1.0:
            raise ConfigurationError(
                f"uncompensated jump integral of order {order} diverges"
            )
        if compensation == "global" and order <= 1.0:
            raise ConfigurationError(
                f"global compensation of order {order} diverges at infinity"
            )
        self.n = n
        self.dim = dim
        self.order = float(order)
        self.compensation = compensation
        self.refine = refine
        self.inner = inner / 10 ** (refine - 1)
        self.tail_radius = tail_radius
        self.chunk_size = chunk_size
        self.directions, self.direction_weights = quadrature.sphere_rule(
            dim, n_angles * refine if dim == 2 else 2
        )
        bandwidth = quadrature.effective_bandwidth(n, dim)
        middle = min(tail_radius, 2.0 / bandwidth)
        r, rw = quadrature.radial_rule(
            self.inner,
            middle,
            tail_radius,
            panel_scale / bandwidth / refine,
            order=panel_order,
            per_decade=per_decade * refine,
            extra_breakpoints=[1.0] if compensation == "unit-ball" else [],
        )
        self.radii = r
        self.radial_weights = rw * r ** (-1.0 - self.order)
        L = self.directions.shape[0]
        self.nodes = (r[:, None, None] * self.directions[None, :, :]).reshape(-1, dim)
        self.weights = (
            self.radial_weights[:, None] * self.direction_weights[None, :]
        ).reshape(-1)
        chi = np.ones_like(r)
        if compensation == "unit-ball":
            chi = (r <= 1.0).astype(float)
        elif compensation == "none":
            chi = np.zeros_like(r)
        self.chi = np.repeat(chi, L)
        self._tail = None
        self._cache: "OrderedDict[Tuple[int, float, str], Tuple[Any, np.ndarray]]" = OrderedDict()

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def tail_multipliers(self) -> np.ndarray:
        """``int_R^inf e^{i (k, w) r} r^{-1-order} dr`` per direction and mode."""
        if self._tail is None:
            k = np.stack(wavenumbers(self.n, self.dim), axis=-1)
            a = np.einsum("ld,...d->l...", self.directions, k)
            self._tail = quadrature.fourier_tail(a, self.tail_radius, self.order)
        return self._tail

    def _x(self) -> np.ndarray:
        return grid_points(self.n, self.dim).reshape(1, -1, self.dim)

    def density_values(
        self, density: Callable, t: float, y: np.ndarray, tag: str
    ) -> np.ndarray:
        """``density(t, x, y)`` for every grid x, shape ``(len(y), n^dim)``."""
        key = (id(density), float(t), tag)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is density:
            self._cache.move_to_end(key)
            return hit[1]
        if getattr(density, "x_independent", False):
            values = density(t, np.zeros((1, 1, self.dim)), y[:, None, :])
            values = np.broadcast_to(values, (y.shape[0], self.n**self.dim))
        else:
            values = density(t, self._x(), y[:, None, :])
        if values.size <= DENSITY_CACHE_LIMIT:
            self._cache[key] = (density, values)
            while len(self._cache) > DENSITY_CACHE_ENTRIES:
                self._cache.popitem(last=False)
        return values

    def clear_cache(self) -> None:
        self._cache.clear()

    def apply(self, u: GridFunction, density: Callable, t: float) -> np.ndarray:
        if u.n != self.n or u.dim != self.dim:
            raise ConfigurationError("JumpQuadrature: grid mismatch")
        p = self.order
        shape = u.values.shape
        axes = tuple(range(1, self.dim + 1))
        flat_u = u.values.reshape(-1)
        uh = fft.fftn(u.values)
        k = wavenumbers(self.n, self.dim)
        grad = gradient(u).reshape(self.dim, -1)
        acc = np.zeros(flat_u.size)

        # body of the radial integral
        batch = max(1, self.chunk_size // flat_u.size)
        cached = self.size * flat_u.size <= DENSITY_CACHE_LIMIT
        body_m = self.density_values(density, t, self.nodes, "body") if cached else None
        for sl in quadrature.chunked(self.size, batch):
            y = self.nodes[sl]
            phase = sum(
                y[:, a].reshape((-1,) + (1,) * self.dim) * k[a]
                for a in range(self.dim)
            )
            shifted = fft.ifftn(uh[None] * np.exp(1j * phase), axes=axes).real
            shifted = shifted.reshape(y.shape[0], -1)
            diff = shifted - flat_u[None, :]
            diff -= self.chi[sl, None] * (y @ grad)
            if body_m is None:
                m = density(t, self._x(), y[:, None, :])
                m = np.broadcast_to(m, diff.shape)
            else:
                m = body_m[sl]
            acc += np.einsum("b,bx->x", self.weights[sl], m * diff)

        w, W = self.directions, self.direction_weights

        # inner ball by Taylor expansion
        eps = self.inner
        m_in = self.density_values(density, t, eps * w, "inner")
        H = hessian(u).reshape(self.dim, self.dim, -1)
        quad_form = np.einsum("la,lb,abx->lx", w, w, H)
        term = 0.5 * quad_form * eps ** (2.0 - p) / (2.0 - p)
        if self.compensation == "none":
            term = term + (w @ grad) * eps ** (1.0 - p) / (1.0 - p)
        acc += np.einsum("l,lx->x", W, m_in * term)

        # tail beyond the last panel with the density frozen on each ray
        R = self.tail_radius
        m_out = self.density_values(density, t, R * w, "tail")
        shifted = fft.ifftn(uh[None] * self.tail_multipliers, axes=axes).real
        term = shifted.reshape(w.shape[0], -1) - flat_u[None, :] * R**-p / p
        if self.compensation == "global":
            term = term - (w @ grad) * R ** (1.0 - p) / (p - 1.0)
        acc += np.einsum("l,lx->x", W, m_out * term)
        return acc.reshape(shape)


@functools.lru_cache(maxsize=16)
def jump_plan(
    n: int,
    dim: int,
    order: float,
    compensation: str,
    refine: int = 1,
    n_angles: int = 256,
) -> JumpQuadrature:
    return JumpQuadrature(n, dim, order, compensation, refine=refine, n_angles=n_angles)


class DensityDifference:
    """``m - m_ref``; inherits x-independence and homogeneity from both."""

    def __init__(self, m: Callable, reference: Callable) -> None:
        self.m = m
        self.reference = reference
        self.x_independent = getattr(m, "x_independent", False) and getattr(
            reference, "x_independent", False
        )
        self.homogeneous = getattr(m, "homogeneous", False) and getattr(
            reference, "homogeneous", False
        )

    def __call__(self, t, x, y):
        return self.m(t, x, y) - self.reference(t, x, y)


@functools.lru_cache(maxsize=32)
def density_difference(m: Callable, reference: Callable) -> DensityDifference:
    return DensityDifference(m, reference)


def _apply_angular(
    u: GridFunction, density: Callable, t: float, alpha: float, n_angles: int
) -> np.ndarray:
    """
    For densities depending on y only through its direction,
    ``A u(x) = sum_w W_w m(x, w) F^{-1}[psi_w u^](x)`` with ``psi_w`` the
    single-ray symbol.
    """
    w, W = quadrature.sphere_rule(u.dim, n_angles if u.dim == 2 else 2)
    k = np.stack(wavenumbers(u.n, u.dim), axis=-1)
    a = np.einsum("ld,...d->l...", w, k)
    psi = directional_symbol(alpha, a)
    axes = tuple(range(1, u.dim + 1))
    rays = fft.ifftn(fft.fftn(u.values)[None] * psi, axes=axes).real
    x = grid_points(u.n, u.dim).reshape(-1, 1, u.dim)
    if getattr(density, "x_independent", False):
        x = np.zeros((1, 1, u.dim))
    m = np.broadcast_to(density(t, x, w[None, :, :]), (u.values.size, w.shape[0]))
    return np.einsum("l,xl,lx->x", W, m, rays.reshape(w.shape[0], -1)).reshape(
        u.values.shape
    )


def apply_A(
    u: GridFunction,
    spec: KernelSpec,
    t: float,
    reference: Optional[KernelSpec] = None,
    method: str = "quadrature",
    refine: int = 1,
    n_angles: int = 256,
    check: bool = False,
    rtol: float = 1e-6,
) -> GridFunction:
    """
    ``A u(x) = int [u(x+y) - u(x) - chi_alpha(y)(grad u(x), y)] m(t,x,y) dy / |y|^{d+alpha}``

    :param reference: when given, the operator with density ``m - m_ref``
    :param method: ``"quadrature"`` (y-space nodes), ``"angular"`` (exact
        ray symbols, densities homogeneous in y only) or ``"auto"``
    :param check: repeat on a refined node set and raise
        :class:`NumericalError` when the two disagree by more than ``rtol``
        relative to the sup norm of the result
    """
    if u.dim != spec.dim:
        raise ConfigurationError(
            f"apply_A: grid dimension {u.dim} does not match kernel dimension {spec.dim}"
        )
    density = spec.m if reference is None else density_difference(spec.m, reference.m)
    homogeneous = spec.homogeneous and (reference is None or reference.homogeneous)
    if method == "auto":
        method = "angular" if homogeneous else "quadrature"
    if method == "angular":
        if not homogeneous:
            raise ConfigurationError(
                f"apply_A: angular method needs a density homogeneous in y ({spec.name})"
            )
        values = _apply_angular(u, density, t, spec.alpha, n_angles)
    elif method == "quadrature":
        plan = jump_plan(
            u.n, u.dim, spec.alpha, compensation_for(spec.alpha), refine, n_angles
        )
        values = plan.apply(u, density, t)
        if check:
            fine = jump_plan(
                u.n, u.dim, spec.alpha, compensation_for(spec.alpha), refine + 1, n_angles
            ).apply(u, density, t)
            _check_refinement("apply_A", values, fine, rtol)
    else:
        raise ConfigurationError(f"apply_A: unknown method {method!r}")
    return u.with_values(values)


def _check_refinement(name: str, coarse: np.ndarray, fine: np.ndarray, rtol: float):
    scale = max(float(np.max(np.abs(fine))), 1e-300)
    err = float(np.max(np.abs(coarse - fine))) / scale
    if err > rtol:
        raise NumericalError(
            f"{name}: quadrature refinement disagreement",
            {"relative_error": err, "rtol": rtol, "scale": scale},
        )


class CoefficientField:
    """Closed-form coefficient ``(t, x) -> array`` over the formals ``t, x1, x2``."""

    def __init__(self, expr: str, dim: int) -> None:
        self.expr = str(expr)
        self.dim = dim
        self.closure = ExprClosure(["t", "x1", "x2"], self.expr)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        x1 = x[..., 0]
        x2 = x[..., 1] if self.dim == 2 else np.zeros_like(x1)
        return self.closure(t, x1, x2)

    @property
    def is_zero(self) -> bool:
        return self.closure.expr == 0

    @property
    def is_constant(self) -> bool:
        return not self.closure.depends_on("x1", "x2")


@dataclass
class BOperatorSpec:
    """
    Lower-order part with jump map ``c(t, x, v) = v`` and intensity
    ``dv / |v|^{d+alpha_prime}`` on the punctured space:

    ``B u = (b, grad u) 1_{alpha >= 1}
    + int [u(x+v) - u(x) - (grad u(x), v) 1_{|v| < 1} 1_{alpha > 1}] rho dv / |v|^{d+alpha_prime}
    + l u``
    """

    alpha: float
    alpha_prime: float
    dim: int
    b: Sequence[CoefficientField]
    l: CoefficientField
    rho: ExpressionDensity
    bigK: float = 1.0
    beta: float = 1.0
    name: str = "inline"
    expressions: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.alpha_prime < self.alpha:
            raise ConfigurationError(
                f"B operator {self.name}: alpha' = {self.alpha_prime} must lie in (0, alpha = {self.alpha})"
            )
        if len(self.b) != self.dim:
            raise ConfigurationError(
                f"B operator {self.name}: drift needs {self.dim} components"
            )

    @classmethod
    def from_expressions(
        cls,
        alpha: float,
        dim: int,
        alpha_prime: Optional[float] = None,
        b: Optional[Sequence[str]] = None,
        l: str = "0",
        rho: str = "0",
        bigK: float = 1.0,
        beta: float = 1.0,
        name: str = "inline",
    ) -> "BOperatorSpec":
        if alpha_prime is None:
            alpha_prime = 0.5 * alpha
        b = ["0"] * dim if b is None else [str(e) for e in b]
        try:
            fields = [CoefficientField(e, dim) for e in b]
            zero_order = CoefficientField(l, dim)
            weight = ExpressionDensity(rho, dim)
        except Exception as e:
            raise ConfigurationError(
                f"B operator {name}: cannot parse expressions: {e}"
            ) from e
        return cls(
            alpha=alpha,
            alpha_prime=alpha_prime,
            dim=dim,
            b=fields,
            l=zero_order,
            rho=weight,
            bigK=bigK,
            beta=beta,
            name=name,
            expressions={"b": b, "l": str(l), "rho": str(rho)},
        )

    @classmethod
    def zero(cls, alpha: float, dim: int) -> "BOperatorSpec":
        return cls.from_expressions(alpha, dim, name="zero")

    @property
    def has_drift(self) -> bool:
        return self.alpha >= 1.0 and not all(f.is_zero for f in self.b)

    @property
    def has_jumps(self) -> bool:
        return self.rho.closure.expr != 0

    @property
    def is_zero(self) -> bool:
        return not self.has_drift and not self.has_jumps and self.l.is_zero

    @property
    def compensation(self) -> str:
        return "unit-ball" if self.alpha > 1.0 else "none"

    def time_reversed(self, T: float) -> "BOperatorSpec":
        fields = [_Reversed(f, T) for f in self.b]
        return dataclasses.replace(
            self,
            b=fields,
            l=_Reversed(self.l, T),
            rho=_Reversed(self.rho, T),
            name=f"{self.name}/reversed",
        )

    def drift(self, t: float, x: np.ndarray) -> np.ndarray:
        """Drift field, shape ``x.shape``; zero when alpha < 1."""
        x = np.asarray(x, dtype=float)
        if self.alpha < 1.0:
            return np.zeros_like(x)
        return np.stack([f(t, x) for f in self.b], axis=-1)

    def integrability(self) -> float:
        """
        ``int_{|v|<1} |v|^alpha dpi + int_{|v|>=1} 1 dpi``, in closed form.
        """
        area = quadrature.sphere_area(self.dim)
        return area * (1.0 / (self.alpha - self.alpha_prime) + 1.0 / self.alpha_prime)

    def validate(
        self, t_samples: Sequence[float], x_samples, n_angles: int = 64
    ) -> AssumptionReport:
        """Clauses ``B1(i)``, ``B2(i)`` and ``rho-bound`` at sampled points."""
        x_samples = np.asarray(x_samples, dtype=float).reshape(-1, self.dim)
        report = AssumptionReport(kernel=self.name, alpha=self.alpha, dim=self.dim)
        value = self.integrability()
        report.clauses.append(
            ClauseResult(
                "B1(i)",
                math.isfinite(value) and value <= self.bigK,
                value,
                self.bigK,
                {"alpha_prime": self.alpha_prime},
            )
        )
        worst, witness = 0.0, {}
        w, _ = quadrature.sphere_rule(self.dim, n_angles)
        y = (np.geomspace(1e-2, 1e2, 5)[:, None, None] * w[None]).reshape(-1, self.dim)
        rho_worst, rho_witness = 0.0, {}
        for t in t_samples:
            coeffs = [f(t, x_samples) for f in self.b] + [self.l(t, x_samples)]
            total = 0.0
            for c in coeffs:
                total += x_holder_norm(np.asarray(c)[:, None], x_samples, self.beta)[0]
            if total >= worst:
                worst, witness = total, {"t": float(t)}
            values = np.stack([self.rho(t, x[None, :], y) for x in x_samples])
            h, j = x_holder_norm(values, x_samples, self.beta)
            if h >= rho_worst:
                rho_worst, rho_witness = h, {"t": float(t), "v": y[j].tolist()}
        report.clauses.append(
            ClauseResult("B2(i)", worst <= self.bigK, worst, self.bigK, witness)
        )
        report.clauses.append(
            ClauseResult("rho-bound", rho_worst <= self.bigK, rho_worst, self.bigK, rho_witness)
        )
        return report

    def require_martingale_form(
        self, t_samples: Sequence[float], x_samples, n_angles: int = 64
    ) -> None:
        """The simulated operator needs ``rho >= 0`` and ``l = 0``."""
        if not self.l.is_zero:
            raise AssumptionError(
                f"B operator {self.name}: zero-order coefficient must vanish for simulation"
            )
        x_samples = np.asarray(x_samples, dtype=float).reshape(-1, self.dim)
        w, _ = quadrature.sphere_rule(self.dim, n_angles)
        y = (np.geomspace(1e-2, 1e2, 5)[:, None, None] * w[None]).reshape(-1, self.dim)
        for t in t_samples:
            values = self.rho(t, x_samples[:, None, :], y[None, :, :])
            if np.min(values) < 0.0:
                raise AssumptionError(
                    f"B operator {self.name}: rho takes negative values "
                    f"(min {np.min(values):.3g} at t = {t})"
                )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "alpha": self.alpha,
            "alpha_prime": self.alpha_prime,
            "bigK": self.bigK,
            "beta": self.beta,
            **self.expressions,
        }


class _Reversed:
    def __init__(self, inner, T):
        self.inner = inner
        self.T = T
        self.x_independent = getattr(inner, "x_independent", False)
        self.homogeneous = getattr(inner, "homogeneous", False)
        self.closure = getattr(inner, "closure", None)
        self.is_zero = getattr(inner, "is_zero", False)

    def __call__(self, t, *args):
        return self.inner(self.T - t, *args)


def apply_B(
    u: GridFunction,
    bspec: BOperatorSpec,
    t: float,
    refine: int = 1,
    n_angles: int = 256,
) -> GridFunction:
    if u.dim != bspec.dim:
        raise ConfigurationError("apply_B: grid dimension mismatch")
    values = np.zeros(u.values.shape)
    if bspec.is_zero:
        return u.with_values(values)
    x = grid_points(u.n, u.dim)
    if bspec.has_drift:
        drift = bspec.drift(t, x)
        grad = gradient(u)
        values += sum(drift[..., a] * grad[a] for a in range(u.dim))
    if bspec.has_jumps:
        plan = jump_plan(
            u.n, u.dim, bspec.alpha_prime, bspec.compensation, refine, n_angles
        )
        values += plan.apply(u, bspec.rho, t)
    if not bspec.l.is_zero:
        values += bspec.l(t, x) * u.values
    return u.with_values(values)


def apply_L(
    u: GridFunction,
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    t: float,
    method: str = "quadrature",
) -> GridFunction:
    Au = apply_A(u, spec, t, method=method)
    if bspec is None or bspec.is_zero:
        return Au
    return Au + apply_B(u, bspec, t)


@dataclass
class RelativeBoundReport:
    eps: float
    constant: float
    alpha: float
    beta: float
    samples: List[Dict[str, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def relative_bound_probe(
    bspec: BOperatorSpec,
    beta: float,
    n: int = 64,
    samples: int = 20,
    eps: float = 0.5,
    kmax: int = 8,
    t: float = 0.0,
    seed: int = 0,
) -> RelativeBoundReport:
    """
    Fit the smallest ``C`` with ``|Bu|_beta <= eps |u|_{alpha+beta} + C |u|_0``
    over random band-limited ``u``; the per-sample norms are the witnesses.
    """
    rng = np.random.default_rng(seed)
    report = RelativeBoundReport(eps=eps, constant=0.0, alpha=bspec.alpha, beta=beta)
    top = min(bspec.alpha + beta, 2.5)
    for i in range(samples):
        u = random_band_limited(n, bspec.dim, kmax, rng)
        Bu = apply_B(u, bspec, t)
        lhs = composite_norm(Bu, beta)
        high = composite_norm(u, top)
        low = sup_norm(u)
        c = max(0.0, (lhs - eps * high) / low)
        report.samples.append(
            {"index": i, "B_beta": lhs, "u_alpha_beta": high, "u_sup": low, "C": c}
        )
        report.constant = max(report.constant, c)
    logger.info(
        f"relative bound |Bu|_{beta} <= {eps}|u|_{top} + C|u|_0: C = {report.constant:.4g}"
    )
    return report


def komatsu_kernel(delta: float, y: float, z: np.ndarray) -> np.ndarray:
    """
    ``k(y, z) = |z + y|^{delta-1} - |z|^{delta-1}`` in one dimension,
    evaluated as ``|z|^{delta-1} expm1((delta - 1) log|1 + y/z|)`` so that
    the difference keeps its digits far from the singular points.
    """
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.where(
            np.abs(z) > abs(y),
            np.log1p(y / z),
            np.log(np.abs(z + y)) - np.log(np.abs(z)),
        )
        return np.abs(z) ** (delta - 1.0) * np.expm1((delta - 1.0) * log_ratio)


def komatsu_mass(delta: float, y: float, tol: float = 1e-9) -> float:
    """
    ``int |k(y, z)| dz`` by adaptive quadrature. The singular points
    ``-y`` and ``0`` and the sign change at ``-y/2`` are panel edges; the
    two tails are mapped onto ``(0, 1]`` by ``z = c / t``, which leaves an
    algebraic weight ``t^{-delta}`` for QUADPACK's weighted rule.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"komatsu_mass: delta = {delta} outside (0, 1)")
    if y == 0.0:
        return 0.0
    lo, hi = sorted((-y, 0.0))
    h = hi - lo

    def f(z):
        return float(abs(komatsu_kernel(delta, y, z)))

    def tail(c, sign):
        limit = (1.0 - delta) * h * c ** (delta - 1.0)

        def g(t):
            if t == 0.0:
                return limit
            return f(sign * c / t) * c * t ** (delta - 2.0)

        return integrate.quad(
            g, 0.0, 1.0, weight="alg", wvar=(-delta, 0.0), limit=400,
            epsabs=0.0, epsrel=tol, full_output=1,
        )

    edges = [lo - h, lo, 0.5 * (lo + hi), hi, hi + h]
    pieces = [
        integrate.quad(f, a, b, limit=400, epsabs=0.0, epsrel=tol, full_output=1)
        for a, b in zip(edges[:-1], edges[1:])
    ]
    pieces += [tail(hi + h, 1.0), tail(h - lo, -1.0)]
    total = sum(p[0] for p in pieces)
    error = sum(p[1] for p in pieces)
    messages = [p[3] for p in pieces if len(p) > 3 and isinstance(p[3], str)]
    if messages or error > 10.0 * tol * total:
        raise NumericalError(
            "komatsu_mass: quadrature did not converge",
            {"delta": delta, "y": y, "estimate": total, "error": error, "messages": messages},
        )
    return total


def komatsu_mass_exact(delta: float, y: float) -> float:
    return 2.0 ** (2.0 - delta) * abs(y) ** delta / delta


@functools.lru_cache(maxsize=None)
def riesz_transform_constant(delta: float) -> float:
    """``int |z|^{delta-1} e^{-iz} dz``, by QUADPACK with algebraic and Fourier weights."""
    inner, e1 = integrate.quad(
        np.cos, 0.0, 1.0, weight="alg", wvar=(delta - 1.0, 0.0)
    )
    outer, e2 = integrate.quad(
        lambda z: z ** (delta - 1.0), 1.0, np.inf, weight="cos", wvar=1.0
    )
    if e1 + e2 > 1e-8:
        raise NumericalError(
            "riesz_transform_constant: quadrature did not converge",
            {"delta": delta, "error": e1 + e2},
        )
    value = 2.0 * (inner + outer)
    logger.info(
        f"Riesz transform constant for delta = {delta}: {value:.12g} "
        f"(closed form {2.0 * special.gamma(delta) * np.cos(0.5 * np.pi * delta):.12g})"
    )
    return value


def komatsu_rule(
    delta: float, y: float, n: int, level: int = 0
) -> Tuple[np.ndarray, np.ndarray, Tuple[float, float]]:
    """
    Nodes and weights in z for ``int k(y, z) g(z) dz`` over the window
    ``[min(-y, 0) - L, max(-y, 0) + L]`` with ``L = ASYMPTOTIC_START``.

    Four radial pieces leave the singular points: a Gauss-Jacobi rule for
    ``r^{delta-1}`` next to the point, geometric panels, then panels no
    longer than one period of the Nyquist mode. Each ``level`` shrinks the
    innermost piece by a factor 100 and raises the panel order.
    """
    lo, hi = sorted((-y, 0.0))
    half = 0.5 * (hi - lo)
    extent = quadrature.ASYMPTOTIC_START
    order = 12 + 4 * level
    per_decade = 4 + 2 * level
    panel = min(1.0, 2.0 * np.pi / max(1, n // 2)) / (1 + level)
    inner = min(half, 1.0) * 10.0 ** (-8 - 2 * level)
    nodes, weights = [], []
    pieces = ((lo, -1.0, extent), (lo, 1.0, half), (hi, -1.0, half), (hi, 1.0, extent))
    for s, sign, length in pieces:
        r0, w0 = quadrature.power_weight_rule(inner, delta - 1.0, order=order)
        r1, w1 = quadrature.radial_rule(
            inner, min(length, panel), length, panel, order=order, per_decade=per_decade
        )
        nodes += [s + sign * r0, s + sign * r1]
        weights += [w0 * r0 ** (1.0 - delta), w1]
    return np.concatenate(nodes), np.concatenate(weights), (lo - extent, hi + extent)


def _power_fourier_tail(start: float, p: float, omega: np.ndarray) -> np.ndarray:
    """``int_start^inf w^{-p} e^{i omega w} dw`` for ``|omega| start >= ASYMPTOTIC_START``."""
    a = np.abs(omega)
    t = quadrature.asymptotic_tail(a * start, p)
    return a ** (p - 1.0) * np.where(omega > 0.0, t, np.conj(t))


def _komatsu_far_field(
    delta: float, y: float, j: np.ndarray, window: Tuple[float, float]
) -> np.ndarray:
    """``int k(y, z) e^{-ijz} dz`` outside ``window``, term by term; ``j != 0``."""
    left, right = window
    p = 1.0 - delta
    shift = np.exp(1j * j * y)
    beyond = shift * _power_fourier_tail(right + y, p, -j) - _power_fourier_tail(right, p, -j)
    below = shift * _power_fourier_tail(-left - y, p, j) - _power_fourier_tail(-left, p, j)
    return beyond + below


def _komatsu_transform(delta: float, y: float, n: int, level: int) -> np.ndarray:
    j = wavenumbers(n, 1)[0]
    z, w, window = komatsu_rule(delta, y, n, level)
    weighted = w * komatsu_kernel(delta, y, z)
    out = np.zeros(n, dtype=complex)
    nz = j != 0.0
    for rows in quadrature.chunked(z.size, 4096):
        out[nz] += np.exp(-1j * np.outer(j[nz], z[rows])) @ weighted[rows]
    out[nz] += _komatsu_far_field(delta, y, j[nz], window)
    return out


def komatsu_transform(
    delta: float, y: float, n: int, tol: float = 1e-8, levels: int = 4
) -> np.ndarray:
    """
    ``int k(y, z) e^{-ijz} dz`` for the FFT wavenumbers of an n-point grid
    (zero at ``j = 0``), refined until two consecutive levels agree to
    ``tol`` relative to the largest value.

    :raises NumericalError: refinement did not settle, typically because
        the integrand is not integrable at ``z = 0`` or ``z = -y``
    """
    if y == 0.0:
        return np.zeros(n, dtype=complex)
    previous, change = None, float("inf")
    for level in range(levels):
        current = _komatsu_transform(delta, y, n, level)
        if not np.all(np.isfinite(current)):
            break
        if previous is not None:
            change = float(np.max(np.abs(current - previous)))
            if change <= tol * float(np.max(np.abs(current))):
                logger.debug(f"Komatsu transform settled at level {level}: change {change:.2e}")
                return current
        previous = current
    raise NumericalError(
        "komatsu_transform: quadrature near the singular points did not settle",
        {"delta": delta, "y": y, "levels": levels, "change": change},
    )


def komatsu_reconstruction(
    delta: float, y: float, u: GridFunction, tol: float = 1e-8
) -> np.ndarray:
    """
    ``int k(y, z) d^delta u(x - z) dz`` at the grid points, where
    ``d^delta u = -(-Delta)^{delta/2} u`` is taken spectrally. Since
    ``d^delta u(x - z)`` is a trigonometric polynomial, the quadrature sum
    ``sum_q w_q k(y, z_q) d^delta u(x - z_q)`` is formed per Fourier mode
    from :func:`komatsu_transform`.
    """
    if u.dim != 1:
        raise ConfigurationError("komatsu identity is implemented in one dimension")
    v = fractional_derivative(u, delta, constant=1.0)
    kernel_hat = komatsu_transform(delta, y, u.n, tol=tol)
    if u.n % 2 == 0:
        k = wavenumbers(u.n, 1)[0]
        kernel_hat = np.where(k == -(u.n // 2), kernel_hat.real, kernel_hat)
    return fft.ifft(kernel_hat * v.spectrum()).real


def _increment(u: GridFunction, y: float) -> np.ndarray:
    k = wavenumbers(u.n, 1)[0]
    shift = np.exp(1j * k * y)
    if u.n % 2 == 0:
        shift = np.where(k == -u.n // 2, shift.real, shift)
    return fft.ifft(shift * fft.fft(u.values)).real - u.values


def calibrate_komatsu(delta: float, y: float, u: GridFunction) -> float:
    """Least-squares constant ``C`` in ``u(x+y) - u(x) = C int k d^delta u``."""
    lhs = _increment(u, y)
    rhs = komatsu_reconstruction(delta, y, u)
    denom = float(np.dot(rhs, rhs))
    if denom == 0.0:
        raise ConfigurationError("calibrate_komatsu: degenerate calibration pair")
    constant = float(np.dot(lhs, rhs)) / denom
    logger.info(f"Komatsu constant for delta = {delta}: C = {constant:.12g}")
    return constant


@dataclass
class KomatsuResult:
    delta: float
    y: float
    constant: float
    residual: float
    mass: float
    mass_ratio: Optional[float]
    # -1 / int |z|^{delta-1} e^{-iz} dz, the value C takes when the quadrature is exact
    closed_form_constant: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def komatsu_check(
    delta: float, y: float, u: GridFunction, constant: Optional[float] = None
) -> KomatsuResult:
    """
    Identity residual ``max_x |u(x+y) - u(x) - C int k d^delta u|`` and the
    mass ratio ``I(y) / |y|^delta``. Without ``constant`` the identity is
    calibrated on ``(y, u)`` itself.
    """
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"komatsu_check: delta = {delta} outside (0, 1)")
    if u.dim != 1:
        raise ConfigurationError("komatsu identity is implemented in one dimension")
    if y == 0.0:
        return KomatsuResult(delta, y, constant or 0.0, 0.0, 0.0, None)
    if constant is None:
        constant = calibrate_komatsu(delta, y, u)
    lhs = _increment(u, y)
    rhs = constant * komatsu_reconstruction(delta, y, u)
    mass = komatsu_mass(delta, y)
    return KomatsuResult(
        delta=delta,
        y=y,
        constant=constant,
        residual=float(np.max(np.abs(lhs - rhs))),
        mass=mass,
        mass_ratio=mass / abs(y) ** delta,
        closed_form_constant=-1.0 / riesz_transform_constant(delta),
    )
