"""
Quadrature rules shared by the symbol and operator routines.

Radial integrals against the stable density ``r^{-1-alpha} dr`` are split
into an inner region handled by Taylor expansion, a region covered by
composite Gauss-Legendre panels (geometric near the origin, uniform further
out so that oscillations stay resolved) and an oscillatory tail handled in
closed form through :func:`oscillatory_tail`.
"""

from typing import Iterable, Sequence, Tuple

import functools
import math

import numpy as np
from scipy import special

# Beyond this argument the Fourier tail integral is evaluated by its
# asymptotic series.
ASYMPTOTIC_START = 32.0
ASYMPTOTIC_TERMS = 12

# Below this argument the tail integral uses a three-term Taylor expansion
# of the exponential.
TAYLOR_CUTOFF = 1e-10


@functools.lru_cache(maxsize=None)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(
    breakpoints: Sequence[float], order: int = 12, geometric: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Composite Gauss-Legendre rule over consecutive ``breakpoints``.

    With ``geometric=True`` each panel is integrated in the variable
    ``log r``, which keeps integrands of the form ``r^q g(r)`` smooth on
    panels that approach the origin.
    """
    b = np.asarray(breakpoints, dtype=float)
    if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0.0):
        raise ValueError("panel_rule: breakpoints must increase strictly")
    x, w = gauss_legendre(order)
    if geometric:
        if b[0] <= 0.0:
            raise ValueError("panel_rule: geometric panels need r > 0")
        lo, hi = np.log(b[:-1]), np.log(b[1:])
        u = 0.5 * (hi - lo)[:, None] * (x[None, :] + 1.0) + lo[:, None]
        nodes = np.exp(u)
        weights = 0.5 * (hi - lo)[:, None] * w[None, :] * nodes
    else:
        lo, hi = b[:-1], b[1:]
        nodes = 0.5 * (hi - lo)[:, None] * (x[None, :] + 1.0) + lo[:, None]
        weights = 0.5 * (hi - lo)[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def geometric_breakpoints(
    lo: float, hi: float, per_decade: int = 4
) -> np.ndarray:
    n = max(1, int(math.ceil(per_decade * math.log10(hi / lo))))
    return np.geomspace(lo, hi, n + 1)


def uniform_breakpoints(
    lo: float, hi: float, length: float, extra: Iterable[float] = ()
) -> np.ndarray:
    n = max(1, int(math.ceil((hi - lo) / length)))
    b = np.linspace(lo, hi, n + 1)
    extra = [e for e in extra if lo < e < hi]
    if extra:
        b = np.unique(np.concatenate([b, extra]))
    return b


def radial_rule(
    inner: float,
    middle: float,
    outer: float,
    panel_length: float,
    order: int = 12,
    per_decade: int = 4,
    extra_breakpoints: Iterable[float] = (),
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rule for ``[inner, outer]``: geometric panels on ``[inner, middle]`` and
    uniform panels of at most ``panel_length`` on ``[middle, outer]``.
    ``extra_breakpoints`` inside the uniform part become panel edges
    (integrand discontinuities such as the unit-ball truncation).
    """
    nodes, weights = [], []
    if middle > inner:
        n, w = panel_rule(
            geometric_breakpoints(inner, middle, per_decade),
            order,
            geometric=True,
        )
        nodes.append(n)
        weights.append(w)
    if outer > middle:
        n, w = panel_rule(
            uniform_breakpoints(
                max(inner, middle), outer, panel_length, extra_breakpoints
            ),
            order,
        )
        nodes.append(n)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


@functools.lru_cache(maxsize=None)
def sphere_rule(dim: int, n_angles: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """
    Directions and weights on the unit sphere of R^dim.

    In one dimension the sphere is the two-point set {-1, +1} with unit
    weights. In two dimensions the midpoint rule in the polar angle is used;
    it is symmetric under w -> -w whenever ``n_angles`` is even.
    """
    if dim == 1:
        w = np.array([[-1.0], [1.0]])
        return w, np.ones(2)
    if dim == 2:
        theta = 2.0 * np.pi * (np.arange(n_angles) + 0.5) / n_angles
        w = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return w, np.full(n_angles, 2.0 * np.pi / n_angles)
    raise ValueError(f"sphere_rule: unsupported dimension {dim}")


def sphere_area(dim: int) -> float:
    return {1: 2.0, 2: 2.0 * np.pi}[dim]


def power_weight_rule(
    radius: float, exponent: float, order: int = 16
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Jacobi rule for ``int_0^radius r^exponent g(r) dr``; the returned
    weights include the power ``r^exponent``.
    """
    if exponent <= -1.0:
        raise ValueError("power_weight_rule: exponent must exceed -1")
    x, w = special.roots_jacobi(order, 0.0, exponent)
    r = 0.5 * radius * (x + 1.0)
    return r, w * (0.5 * radius) ** (exponent + 1.0)


def asymptotic_tail(start, p: float):
    """
    ``int_start^inf exp(i v) v^{-p} dv`` by repeated integration by parts.
    Accurate for ``start >= ASYMPTOTIC_START`` and ``p <= 3``.
    """
    total = 0.0 + 0.0j
    coeff = 1.0
    for k in range(ASYMPTOTIC_TERMS):
        total += 1j * (-1j) ** k * coeff * start ** (-p - k)
        coeff *= p + k
    return np.exp(1j * start) * total


@functools.lru_cache(maxsize=None)
def _cumulative_table(alpha: float, order: int = 16):
    """
    Breakpoints ``g`` on ``[TAYLOR_CUTOFF, ASYMPTOTIC_START]`` and the
    integrals ``int_{g_i}^inf exp(i v) v^{-1-alpha} dv``.
    """
    p = 1.0 + alpha
    geometric = geometric_breakpoints(TAYLOR_CUTOFF, 1.0, per_decade=4)
    uniform = np.arange(1.0, ASYMPTOTIC_START + 0.5, 1.0)
    g = np.concatenate([geometric, uniform[1:]])
    x, w = gauss_legendre(order)
    pieces = np.empty(g.size - 1, dtype=complex)
    for i in range(g.size - 1):
        if g[i + 1] <= 1.0:
            lo, hi = math.log(g[i]), math.log(g[i + 1])
            u = 0.5 * (hi - lo) * (x + 1.0) + lo
            v = np.exp(u)
            pieces[i] = 0.5 * (hi - lo) * np.sum(
                w * np.exp(1j * v) * v ** (1.0 - p)
            )
        else:
            lo, hi = g[i], g[i + 1]
            v = 0.5 * (hi - lo) * (x + 1.0) + lo
            pieces[i] = 0.5 * (hi - lo) * np.sum(w * np.exp(1j * v) * v ** -p)
    tail = np.empty(g.size, dtype=complex)
    tail[-1] = asymptotic_tail(ASYMPTOTIC_START, p)
    tail[:-1] = tail[-1] + np.cumsum(pieces[::-1])[::-1]
    g.setflags(write=False)
    tail.setflags(write=False)
    return g, tail


def _upper_integral(z: np.ndarray, alpha: float, order: int = 16) -> np.ndarray:
    """``int_z^inf exp(i v) v^{-1-alpha} dv`` for positive ``z``."""
    p = 1.0 + alpha
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape, dtype=complex)
    g, tail = _cumulative_table(alpha, order)

    far = z >= ASYMPTOTIC_START
    if np.any(far):
        out[far] = asymptotic_tail(z[far], p)

    near = z < g[0]
    if np.any(near):
        zn = z[near]
        g0 = g[0]
        part = (zn**-alpha - g0**-alpha) / alpha
        if alpha == 1.0:
            part = part + 1j * np.log(g0 / zn)
        else:
            part = part + 1j * (g0 ** (1.0 - alpha) - zn ** (1.0 - alpha)) / (
                1.0 - alpha
            )
        part = part - 0.5 * (g0 ** (2.0 - alpha) - zn ** (2.0 - alpha)) / (
            2.0 - alpha
        )
        out[near] = part + tail[0]

    mid = ~(far | near)
    if np.any(mid):
        zm = z[mid]
        i = np.clip(np.searchsorted(g, zm, side="right") - 1, 0, g.size - 2)
        hi = g[i + 1]
        x, w = gauss_legendre(order)
        geometric = hi <= 1.0
        partial = np.empty(zm.shape, dtype=complex)
        if np.any(geometric):
            lo_u = np.log(zm[geometric])[:, None]
            hi_u = np.log(hi[geometric])[:, None]
            u = 0.5 * (hi_u - lo_u) * (x[None, :] + 1.0) + lo_u
            v = np.exp(u)
            partial[geometric] = np.sum(
                0.5 * (hi_u - lo_u) * w[None, :] * np.exp(1j * v) * v**-alpha,
                axis=1,
            )
        lin = ~geometric
        if np.any(lin):
            lo_v = zm[lin][:, None]
            hi_v = hi[lin][:, None]
            v = 0.5 * (hi_v - lo_v) * (x[None, :] + 1.0) + lo_v
            partial[lin] = np.sum(
                0.5 * (hi_v - lo_v) * w[None, :] * np.exp(1j * v) * v**-p,
                axis=1,
            )
        out[mid] = partial + tail[i + 1]
    return out


def oscillatory_tail(b: np.ndarray, alpha: float) -> np.ndarray:
    """
    ``F(b) = int_1^inf exp(i b s) s^{-1-alpha} ds`` for real ``b``.

    ``F(0) = 1/alpha``; otherwise ``F(b) = |b|^alpha Q(|b|)`` where ``Q`` is
    the upper integral with unit frequency, conjugated for ``b < 0``.
    """
    b = np.asarray(b, dtype=float)
    out = np.full(b.shape, 1.0 / alpha, dtype=complex)
    nz = b != 0.0
    if np.any(nz):
        z = np.abs(b[nz])
        q = _upper_integral(z, alpha) * z**alpha
        out[nz] = np.where(b[nz] > 0.0, q, np.conj(q))
    return out


def fourier_tail(a: np.ndarray, radius: float, alpha: float) -> np.ndarray:
    """``int_radius^inf exp(i a r) r^{-1-alpha} dr`` for real ``a``."""
    return radius**-alpha * oscillatory_tail(np.asarray(a) * radius, alpha)


def stable_constant(alpha: float) -> float:
    """
    Closed-form constant of the one-sided radial integral
    ``int_0^inf (e^{i r} - 1 - chi i r) r^{-1-alpha} dr = -C (1 - i tan(alpha pi/2))``.
    """
    if alpha == 1.0:
        return 0.5 * np.pi
    return float(-special.gamma(-alpha) * np.cos(0.5 * np.pi * alpha))


def chunked(n: int, size: int) -> Iterable[slice]:
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def effective_bandwidth(n: int, dim: int) -> float:
    """Largest wavenumber magnitude representable on an n^dim grid."""
    return 0.5 * n * math.sqrt(dim)

