"""
Periodic grid functions and Hölder-Zygmund norm estimation.

Functions live on the torus [0, 2pi)^d sampled at n points per axis. Sup
norms and seminorms are estimated by maximizing difference quotients over
all grid points and all grid displacements up to half a period; derivatives
are taken spectrally.
"""

from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import dataclasses
import itertools
import math
import os
from dataclasses import dataclass, field

import numpy as np
from nonlocal_cauchy.errors import ConfigurationError
from nonlocal_cauchy.utils import get_module_logger, read_json, write_csv, write_json
from scipy import fft, ndimage

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = get_module_logger(__name__)

PERIOD = 2.0 * np.pi
MAX_COMPOSITE_EXPONENT = 2.5


def grid_axis(n: int) -> np.ndarray:
    return PERIOD * np.arange(n) / n


def grid_points(n: int, dim: int) -> np.ndarray:
    """Grid coordinates, shape ``(n,) * dim + (dim,)``."""
    axes = [grid_axis(n)] * dim
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def wavenumbers(n: int, dim: int) -> Tuple[np.ndarray, ...]:
    """Integer wavenumbers in FFT ordering, one broadcastable array per axis."""
    k = fft.fftfreq(n, d=1.0 / n)
    return tuple(np.meshgrid(*([k] * dim), indexing="ij"))


@dataclass
class GridFunction:
    """
    Function sampled on the uniform periodic grid of [0, 2pi)^dim.

    :param values: array of shape ``(n,) * dim``
    :param time_stamp: time the sample belongs to
    """

    values: np.ndarray
    time_stamp: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.issubdtype(self.values.dtype, np.complexfloating):
            self.values = self.values.astype(float)
        shape = self.values.shape
        if self.values.ndim not in (1, 2) or len(set(shape)) != 1:
            raise ConfigurationError(
                f"GridFunction: expected a square grid in 1 or 2 dimensions, got {shape}"
            )
        n = shape[0]
        if n < 2 or n & (n - 1):
            raise ConfigurationError(
                f"GridFunction: points per axis must be a power of two, got {n}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("GridFunction: values must be finite")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return PERIOD / self.n

    @property
    def points(self) -> np.ndarray:
        return grid_points(self.n, self.dim)

    @classmethod
    def from_callable(
        cls, func: Callable[..., np.ndarray], n: int, dim: int, t: float = 0.0
    ) -> "GridFunction":
        """Sample ``func(x1[, x2])`` on the grid."""
        x = grid_points(n, dim)
        values = func(*[x[..., i] for i in range(dim)])
        return cls(np.broadcast_to(values, (n,) * dim).copy(), time_stamp=t)

    @classmethod
    def zeros(cls, n: int, dim: int, t: float = 0.0) -> "GridFunction":
        return cls(np.zeros((n,) * dim), time_stamp=t)

    def spectrum(self) -> np.ndarray:
        return fft.fftn(self.values)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(values, time_stamp=self.time_stamp)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            other = other.values
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            other = other.values
        return self.with_values(self.values - other)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def roundtrip_error(self) -> float:
        """Relative error of a forward-inverse transform."""
        back = fft.ifftn(self.spectrum())
        if not np.iscomplexobj(self.values):
            back = back.real
        scale = max(float(np.max(np.abs(self.values))), 1e-300)
        return float(np.max(np.abs(back - self.values))) / scale

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "points_per_axis": self.n,
            "period": PERIOD,
            "time_stamp": self.time_stamp,
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GridFunction":
        n, dim = int(d["points_per_axis"]), int(d["dim"])
        values = np.asarray(d["values"], dtype=float).reshape((n,) * dim)
        return cls(values, time_stamp=float(d.get("time_stamp", 0.0)))


class GridSequence:
    """
    Time-stamped stack of grid functions. Between stamps values are
    interpolated linearly in time; off-grid points use periodic cubic
    splines in space.
    """

    def __init__(self, times: Sequence[float], values: np.ndarray) -> None:
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.size == 0:
            raise ConfigurationError("GridSequence: need at least one time stamp")
        if np.any(np.diff(self.times) <= 0.0):
            raise ConfigurationError("GridSequence: time stamps must increase")
        if self.values.shape[0] != self.times.size:
            raise ConfigurationError(
                "GridSequence: one grid per time stamp is required"
            )
        # validates the grid shape
        GridFunction(self.values[0], float(self.times[0]))
        self._coefficients = None

    @classmethod
    def from_functions(cls, items: Sequence[GridFunction]) -> "GridSequence":
        return cls([u.time_stamp for u in items], np.stack([u.values for u in items]))

    @classmethod
    def constant(cls, u: GridFunction, times: Sequence[float]) -> "GridSequence":
        times = np.asarray(times, dtype=float)
        return cls(times, np.broadcast_to(u.values, (times.size,) + u.values.shape).copy())

    @classmethod
    def zeros(cls, n: int, dim: int, times: Sequence[float]) -> "GridSequence":
        times = np.asarray(times, dtype=float)
        return cls(times, np.zeros((times.size,) + (n,) * dim))

    @property
    def dim(self) -> int:
        return self.values.ndim - 1

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, i: int) -> GridFunction:
        return GridFunction(self.values[i], float(self.times[i]))

    def __iter__(self) -> Iterator[GridFunction]:
        for i in range(len(self)):
            yield self[i]

    def covers(self, T: float) -> bool:
        return self.times[0] <= 0.0 and self.times[-1] >= T

    def map(self, func: Callable[[float, np.ndarray], np.ndarray]) -> "GridSequence":
        return GridSequence(
            self.times, np.stack([func(t, v) for t, v in zip(self.times, self.values)])
        )

    def _bracket(self, t: float) -> Tuple[int, int, float]:
        if len(self) == 1:
            return 0, 0, 0.0
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self) - 2))
        theta = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, i + 1, float(np.clip(theta, 0.0, 1.0))

    def at(self, t: float) -> GridFunction:
        i, j, theta = self._bracket(t)
        values = (1.0 - theta) * self.values[i] + theta * self.values[j]
        return GridFunction(values, time_stamp=float(t))

    def _spline_coefficients(self) -> np.ndarray:
        if self._coefficients is None:
            self._coefficients = np.stack(
                [ndimage.spline_filter(v, order=3, mode="grid-wrap") for v in self.values]
            )
        return self._coefficients

    def _spline_sample(self, i: int, x: np.ndarray) -> np.ndarray:
        coords = (np.mod(x, PERIOD) * (self.n / PERIOD)).reshape(-1, self.dim).T
        return ndimage.map_coordinates(
            self._spline_coefficients()[i],
            coords,
            order=3,
            mode="grid-wrap",
            prefilter=False,
        )

    def interpolate(self, t: float, x: np.ndarray) -> np.ndarray:
        """Values at time ``t`` and points ``x`` of shape ``(..., dim)``."""
        x = np.asarray(x, dtype=float)
        i, j, theta = self._bracket(t)
        out = self._spline_sample(i, x)
        if theta > 0.0:
            out = (1.0 - theta) * out + theta * self._spline_sample(j, x)
        return out.reshape(x.shape[:-1])

    def sample(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        """As :meth:`interpolate` with one time per point, ``t.shape == x.shape[:-1]``."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        t = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
        x = x.reshape(-1, self.dim)
        out = np.empty(t.shape)
        if len(self) == 1:
            out[:] = self._spline_sample(0, x)
            return out.reshape(shape)
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self) - 2)
        theta = np.clip(
            (t - self.times[i]) / (self.times[i + 1] - self.times[i]), 0.0, 1.0
        )
        for k in np.unique(i):
            mask = i == k
            lo = self._spline_sample(k, x[mask])
            hi = self._spline_sample(k + 1, x[mask])
            out[mask] = (1.0 - theta[mask]) * lo + theta[mask] * hi
        return out.reshape(shape)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "points_per_axis": self.n,
            "period": PERIOD,
            "times": self.times.tolist(),
            "values": [v.ravel().tolist() for v in self.values],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GridSequence":
        n, dim = int(d["points_per_axis"]), int(d["dim"])
        values = np.asarray(d["values"], dtype=float).reshape((-1,) + (n,) * dim)
        return cls(d["times"], values)

    def write_json(self, file_path: str) -> str:
        return write_json(file_path, self.to_dict())

    @classmethod
    def read_json(cls, file_path: str) -> "GridSequence":
        return cls.from_dict(read_json(file_path))

    def write_csv(self, output_dir: str, prefix: str = "u") -> List[str]:
        """One CSV per stamp with columns ``x1[, x2], value``."""
        points = grid_points(self.n, self.dim).reshape(-1, self.dim)
        columns = [f"x{i + 1}" for i in range(self.dim)] + ["value"]
        paths = []
        for k, (t, v) in enumerate(zip(self.times, self.values)):
            rows = np.column_stack([points, v.ravel()])
            path = os.path.join(output_dir, f"{prefix}_{k:04d}.csv")
            write_csv(path, columns, rows)
            paths.append(path)
        write_csv(
            os.path.join(output_dir, f"{prefix}_stamps.csv"),
            ["index", "time"],
            np.column_stack([np.arange(len(self)), self.times]),
        )
        return paths


def apply_multiplier(u: GridFunction, multiplier: np.ndarray) -> GridFunction:
    """Fourier multiplier on a real grid function; the result is real."""
    values = fft.ifftn(multiplier * u.spectrum())
    if not np.iscomplexobj(u.values):
        values = values.real
    return u.with_values(values)


def derivative_multiplier(n: int, dim: int, gamma: Sequence[int]) -> np.ndarray:
    """``(i k)^gamma``; odd derivatives drop the unpaired Nyquist mode."""
    k = wavenumbers(n, dim)
    mult = np.ones((n,) * dim, dtype=complex)
    for axis, order in enumerate(gamma):
        if order == 0:
            continue
        ka = k[axis]
        factor = (1j * ka) ** order
        if order % 2 == 1 and n % 2 == 0:
            factor = np.where(ka == -n // 2, 0.0, factor)
        mult = mult * factor
    return mult


def spectral_derivative(u: GridFunction, gamma: Sequence[int]) -> GridFunction:
    if len(gamma) != u.dim:
        raise ConfigurationError(
            f"derivative multi-index {tuple(gamma)} does not match dim {u.dim}"
        )
    if sum(gamma) == 0:
        return u
    return apply_multiplier(u, derivative_multiplier(u.n, u.dim, gamma))


def gradient(u: GridFunction) -> np.ndarray:
    """Spectral gradient, shape ``(dim,) + (n,) * dim``."""
    out = []
    for axis in range(u.dim):
        gamma = [0] * u.dim
        gamma[axis] = 1
        out.append(spectral_derivative(u, gamma).values)
    return np.stack(out)


def hessian(u: GridFunction) -> np.ndarray:
    """Spectral Hessian, shape ``(dim, dim) + (n,) * dim``."""
    out = np.empty((u.dim, u.dim) + u.values.shape)
    for a in range(u.dim):
        for b in range(a, u.dim):
            gamma = [0] * u.dim
            gamma[a] += 1
            gamma[b] += 1
            out[a, b] = spectral_derivative(u, gamma).values
            out[b, a] = out[a, b]
    return out


def multi_indices(dim: int, order: int) -> List[Tuple[int, ...]]:
    """All multi-indices of length ``dim`` with ``|gamma| = order``."""
    return [
        g
        for g in itertools.product(range(order + 1), repeat=dim)
        if sum(g) == order
    ]


def _displacements(n: int, dim: int, max_norm: Optional[float]) -> np.ndarray:
    """
    Integer grid displacements with components in (-n/2, n/2], one from
    each pair {h, -h}, excluding zero.
    """
    half = n // 2
    if dim == 1:
        h = np.arange(1, half + 1)[:, None]
    else:
        a = np.arange(-half + 1, half + 1)
        h1, h2 = np.meshgrid(a, a, indexing="ij")
        h = np.stack([h1.ravel(), h2.ravel()], axis=-1)
        keep = (h[:, 0] > 0) | ((h[:, 0] == 0) & (h[:, 1] > 0))
        h = h[keep]
    if max_norm is not None:
        length = np.linalg.norm(h, axis=-1) * (PERIOD / n)
        h = h[length <= max_norm + 1e-12]
    return h


@dataclass
class Witness:
    x: List[float]
    h: List[float]
    value: float


def _max_quotient(
    values: np.ndarray,
    beta: float,
    second: bool,
    max_shift_norm: Optional[float] = None,
) -> Tuple[float, Optional[Witness]]:
    n, dim = values.shape[0], values.ndim
    dx = PERIOD / n
    axes = tuple(range(dim))
    best, witness = 0.0, None
    for h in _displacements(n, dim, max_norm=max_shift_norm):
        length = float(np.linalg.norm(h)) * dx
        forward = np.roll(values, tuple(-h), axis=axes)
        if second:
            backward = np.roll(values, tuple(h), axis=axes)
            diff = np.abs(forward + backward - 2.0 * values)
        else:
            diff = np.abs(forward - values)
        i = int(np.argmax(diff))
        q = float(diff.flat[i]) / length**beta
        if q > best:
            best = q
            index = np.unravel_index(i, values.shape)
            witness = Witness(
                x=[float(j) * dx for j in index],
                h=[float(j) * dx for j in h],
                value=q,
            )
    return best, witness


def sup_norm(u: GridFunction) -> float:
    return float(np.max(np.abs(u.values)))


def holder_seminorm(
    u: GridFunction, beta: float, max_shift_norm: Optional[float] = None
) -> float:
    """
    ``max |u(x + h) - u(x)| / |h|^beta`` over grid points x and grid
    displacements h up to half a period.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigurationError(f"holder_seminorm: beta = {beta} outside (0, 1)")
    return _max_quotient(u.values, beta, second=False, max_shift_norm=max_shift_norm)[0]


def zygmund_seminorm(
    u: GridFunction, max_shift_norm: Optional[float] = None
) -> float:
    """``max |u(x + h) + u(x - h) - 2 u(x)| / |h|``."""
    return _max_quotient(u.values, 1.0, second=True, max_shift_norm=max_shift_norm)[0]


def seminorm(
    u: GridFunction, beta: float, max_shift_norm: Optional[float] = None
) -> float:
    """First differences for beta < 1, second differences for beta = 1."""
    if beta == 1.0:
        return zygmund_seminorm(u, max_shift_norm)
    return holder_seminorm(u, beta, max_shift_norm)


def split_exponent(beta: float) -> Tuple[int, float]:
    """``beta = [beta]^- + {beta}^+`` with ``{beta}^+`` in (0, 1]."""
    whole = int(math.ceil(beta)) - 1
    return whole, beta - whole


def composite_norm(u: GridFunction, beta: float) -> float:
    """
    Sup norms of all derivatives up to order ``[beta]^-`` plus the
    ``{beta}^+`` seminorm of the derivatives of order ``[beta]^-``.
    """
    if not 0.0 < beta <= MAX_COMPOSITE_EXPONENT:
        raise ConfigurationError(
            f"composite_norm: beta = {beta} outside (0, {MAX_COMPOSITE_EXPONENT}]"
        )
    whole, frac = split_exponent(beta)
    total = 0.0
    for order in range(whole + 1):
        for gamma in multi_indices(u.dim, order):
            d = spectral_derivative(u, gamma)
            total += sup_norm(d)
            if order == whole:
                total += seminorm(d, frac)
    return total


def fractional_multiplier(n: int, dim: int, alpha: float, constant: float) -> np.ndarray:
    k = wavenumbers(n, dim)
    norm = np.sqrt(sum(ka * ka for ka in k))
    return -constant * norm**alpha


def fractional_derivative(
    u: GridFunction, alpha: float, constant: Optional[float] = None
) -> GridFunction:
    """``-c_{d,alpha} |xi|^alpha`` applied spectrally."""
    if constant is None:
        from nonlocal_cauchy.kernel import fractional_laplacian_constant

        constant = fractional_laplacian_constant(alpha, u.dim)
    return apply_multiplier(u, fractional_multiplier(u.n, u.dim, alpha, constant))


def equiv_norm(
    u: GridFunction, alpha: float, beta: float, constant: Optional[float] = None
) -> float:
    """``|u|_0 + [d^alpha u]_beta``, equivalent to the ``alpha + beta`` norm."""
    if not 0.0 < alpha < 2.0:
        raise ConfigurationError(f"equiv_norm: alpha = {alpha} outside (0, 2)")
    if not 0.0 < beta <= 1.0:
        raise ConfigurationError(f"equiv_norm: beta = {beta} outside (0, 1]")
    return sup_norm(u) + seminorm(fractional_derivative(u, alpha, constant), beta)


def high_frequency_fraction(u: GridFunction) -> float:
    """Share of spectral energy (zero mode excluded) above half-Nyquist."""
    spec = np.abs(u.spectrum()) ** 2
    k = wavenumbers(u.n, u.dim)
    kmax = np.max(np.abs(np.stack(k)), axis=0)
    spec.flat[0] = 0.0
    total = float(np.sum(spec))
    if total == 0.0:
        return 0.0
    return float(np.sum(spec[kmax > u.n // 4])) / total


@dataclass
class NormReport:
    n: int
    dim: int
    sup_norm: float
    seminorms: Dict[float, float] = field(default_factory=dict)
    witnesses: Dict[float, Optional[Witness]] = field(default_factory=dict)
    composite: Dict[float, float] = field(default_factory=dict)
    equiv_alpha_beta: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    max_shift_norm: Optional[float] = None
    underresolved: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grid": {"n": self.n, "dim": self.dim, "period": PERIOD},
            "sup_norm": self.sup_norm,
            "seminorms": {str(k): v for k, v in self.seminorms.items()},
            "witnesses": {
                str(k): dataclasses.asdict(w) if w is not None else None
                for k, w in self.witnesses.items()
            },
            "composite": {str(k): v for k, v in self.composite.items()},
            "equiv_alpha_beta": self.equiv_alpha_beta,
            "alpha": self.alpha,
            "beta": self.beta,
            "max_shift_norm": self.max_shift_norm,
            "underresolved": self.underresolved,
        }


def norm_report(
    u: GridFunction,
    betas: Sequence[float] = (0.5, 1.0),
    composite: Sequence[float] = (),
    alpha: Optional[float] = None,
    beta: Optional[float] = None,
    max_shift_norm: Optional[float] = None,
    resolution_tol: float = 1e-3,
) -> NormReport:
    report = NormReport(
        n=u.n,
        dim=u.dim,
        sup_norm=sup_norm(u),
        alpha=alpha,
        beta=beta,
        max_shift_norm=max_shift_norm,
    )
    for b in betas:
        value, witness = _max_quotient(
            u.values, b, second=(b == 1.0), max_shift_norm=max_shift_norm
        )
        report.seminorms[b] = value
        report.witnesses[b] = witness
    for b in composite:
        report.composite[b] = composite_norm(u, b)
    if alpha is not None and beta is not None:
        report.equiv_alpha_beta = equiv_norm(u, alpha, beta)
    fraction = high_frequency_fraction(u)
    report.underresolved = fraction > resolution_tol
    if report.underresolved:
        logger.warning(
            f"grid function at t = {u.time_stamp}: {fraction:.2e} of the "
            f"spectral energy lies above half-Nyquist (n = {u.n})"
        )
    return report


def weierstrass_forcing(
    beta: float, J: int, seed: int, n: int = 256, dim: int = 1
) -> GridFunction:
    """
    ``sum_{j=1}^J 2^{-j beta} cos(2^j x + phi_j)`` with uniform random phases,
    scaled so that ``composite_norm(f, beta) = 1``. In two dimensions the
    same series is laid along each axis.
    """
    if not 0.0 < beta <= 1.0:
        raise ConfigurationError(f"weierstrass_forcing: beta = {beta} outside (0, 1]")
    if J < 1:
        raise ConfigurationError("weierstrass_forcing: J must be at least 1")
    if 2**J >= n // 2:
        raise ConfigurationError(
            f"weierstrass_forcing: frequency 2^{J} not resolved below half-Nyquist of n = {n}"
        )
    rng = np.random.default_rng(seed)
    x = grid_points(n, dim)
    values = np.zeros((n,) * dim)
    for j in range(1, J + 1):
        for axis in range(dim):
            phase = rng.uniform(0.0, PERIOD)
            values += 2.0 ** (-j * beta) * np.cos(2.0**j * x[..., axis] + phase)
    f = GridFunction(values)
    return normalize(f, beta)


def normalize(f: GridFunction, beta: float) -> GridFunction:
    scale = composite_norm(f, beta)
    if scale == 0.0:
        return f
    return f * (1.0 / scale)


def weierstrass_suite(
    beta: float, J: int, seeds: Sequence[int], n: int = 256, dim: int = 1
) -> List[GridFunction]:
    if len(seeds) == 0:
        raise ConfigurationError("weierstrass_suite: empty forcing suite")
    return [weierstrass_forcing(beta, J, s, n=n, dim=dim) for s in seeds]


def random_band_limited(
    n: int, dim: int, kmax: int, rng: np.random.Generator
) -> GridFunction:
    """Real trigonometric polynomial with modes ``|k|_inf <= kmax`` and unit sup norm."""
    spec = np.zeros((n,) * dim, dtype=complex)
    k = wavenumbers(n, dim)
    band = np.max(np.abs(np.stack(k)), axis=0) <= kmax
    spec[band] = rng.standard_normal(int(band.sum())) + 1j * rng.standard_normal(
        int(band.sum())
    )
    values = fft.ifftn(spec).real
    return GridFunction(values / np.max(np.abs(values)))
