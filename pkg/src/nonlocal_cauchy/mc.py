"""
Monte Carlo simulation of the jump process generated by ``L0 = A + B0``
and the probabilistic checks of the solvers built on it.

Jumps larger than a cutoff are drawn by thinning a dominating stable-like
intensity ``bound dy / |y|^{d+alpha}``: radius by inverse transform of the
power-law tail, uniform direction, acceptance ``m / bound``. Jumps below the
cutoff are replaced by their first moment as a drift and, optionally, by a
Gaussian with matching covariance. Paths are simulated in lock-step
blocks; every block owns a counter-based random stream, so results do not
depend on how blocks are distributed over MPI ranks.
"""

from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from mpi4py import MPI
from nonlocal_cauchy import quadrature
from nonlocal_cauchy.const_solver import SolveConfig, resolve
from nonlocal_cauchy.errors import AssumptionError, ConfigurationError
from nonlocal_cauchy.holder import PERIOD, GridSequence, grid_points
from nonlocal_cauchy.kernel import KernelSpec
from nonlocal_cauchy.operators import BOperatorSpec, apply_L, compensation_for
from nonlocal_cauchy.utils import RunningStats, get_module_logger, write_csv
from nonlocal_cauchy.var_solver import picard_solve
from scipy import ndimage

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = get_module_logger(__name__)

SUBSTREAMS = {"paths": 1, "feynman-kac": 2, "martingale": 3, "jump-count": 4}
# reference scale of the jump variance when choosing the small-jump cutoff
VARIANCE_RADIUS = np.pi


def block_generator(seed: int, substream: int, block: int) -> np.random.Generator:
    """Philox stream keyed by (seed, substream, block)."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(substream), int(block)))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass
class SimulationSettings:
    """
    :param dt_max: largest step of the continuous part between jumps
    :param variance_fraction: neglected small-jump variance relative to
        the variance of jumps up to ``VARIANCE_RADIUS``
    :param max_rate: cap on the proposal rate per unit time; raises the
        cutoff when the variance rule alone would exceed it
    :param gaussian: Gaussian small-jump correction; default on for alpha >= 1
    """

    dt_max: float = 0.02
    variance_fraction: float = 0.01
    max_rate: float = 2000.0
    gaussian: Optional[bool] = None
    delta_cut: Optional[float] = None
    block_size: int = 1000
    field_points: int = 64
    n_angles: int = 64

    def __post_init__(self):
        if not self.dt_max > 0.0:
            raise ConfigurationError(f"dt_max = {self.dt_max} must be positive")
        if not 0.0 < self.variance_fraction < 1.0:
            raise ConfigurationError(
                f"variance_fraction = {self.variance_fraction} outside (0, 1)"
            )
        if self.block_size < 1:
            raise ConfigurationError(f"block_size = {self.block_size} must be positive")

    @classmethod
    def from_config(cls, config: Optional[Mapping[str, Any]]) -> "SimulationSettings":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in dict(config or {}).items() if k in names})


def choose_delta_cut(
    alpha: float, bound: float, dim: int, variance_fraction: float, max_rate: float
) -> float:
    """
    Smallest cutoff with neglected variance at most ``variance_fraction``
    of the variance up to ``VARIANCE_RADIUS``, raised if needed so that
    the proposal rate stays below ``max_rate``.
    """
    by_variance = VARIANCE_RADIUS * variance_fraction ** (1.0 / (2.0 - alpha))
    by_rate = (bound * quadrature.sphere_area(dim) / (alpha * max_rate)) ** (1.0 / alpha)
    if by_rate > by_variance:
        logger.info(
            f"small-jump cutoff raised from {by_variance:.3e} to {by_rate:.3e} "
            f"by the proposal rate cap {max_rate:g}"
        )
    return max(by_variance, by_rate)


def _drift_radial(alpha: float, delta: float, compensation: str) -> float:
    """``int_0^inf r^{-alpha} (1_{r<delta} - chi(r)) dr``."""
    if compensation == "global":
        return -(delta ** (1.0 - alpha)) / (alpha - 1.0)
    if compensation == "unit-ball":
        if alpha == 1.0:
            return math.log(delta)
        return (delta ** (1.0 - alpha) - 1.0) / (1.0 - alpha)
    return delta ** (1.0 - alpha) / (1.0 - alpha)


def _drift_segments(alpha: float, delta: float, compensation: str):
    """Signed radial segments of ``1_{r<delta} - chi(r)``."""
    if compensation == "global":
        return [(delta, math.inf, -1.0)]
    if compensation == "unit-ball":
        if delta < 1.0:
            return [(delta, 1.0, -1.0)]
        if delta > 1.0:
            return [(1.0, delta, 1.0)]
        return []
    return [(0.0, delta, 1.0)]


def _radial_rule(lo: float, hi: float, power: float, order: int = 12):
    """Nodes and weights for ``int_lo^hi r^power g(r) dr``, weights include the power."""
    if lo == 0.0:
        return quadrature.power_weight_rule(hi, power, order=order)
    top = min(hi, 1e4 * max(lo, 1.0))
    r, w = quadrature.panel_rule(
        quadrature.geometric_breakpoints(lo, top), order=order, geometric=True
    )
    w = w * r**power
    if math.isinf(hi):
        # density frozen beyond the last panel
        r = np.append(r, top)
        w = np.append(w, -(top ** (power + 1.0)) / (power + 1.0))
    return r, w


def density_bound(
    density: Callable, dim: int, t_samples: Sequence[float], n: int = 64, cap: float = math.inf
) -> float:
    """Sampled supremum of a jump density with a 5% margin, at most ``cap``."""
    x = grid_points(n, dim).reshape(-1, 1, dim)
    w, _ = quadrature.sphere_rule(dim, 64)
    y = (np.geomspace(1e-3, 1e3, 13)[:, None, None] * w[None]).reshape(1, -1, dim)
    peak = max(float(np.max(density(t, x, y))) for t in t_samples)
    return min(1.05 * peak, cap) if peak > 0.0 else cap


class JumpComponent:
    """
    One jump part of the generator: density ``(t, x, y)``, order, bound
    of the density and compensation.
    """

    def __init__(
        self,
        name: str,
        alpha: float,
        dim: int,
        density: Callable,
        bound: float,
        compensation: str,
        delta: float,
        homogeneous: bool = False,
        x_independent: bool = False,
    ) -> None:
        self.name = name
        self.alpha = alpha
        self.dim = dim
        self.density = density
        self.bound = bound
        self.compensation = compensation
        self.delta = delta
        self.homogeneous = homogeneous
        self.x_independent = x_independent

    @property
    def rate(self) -> float:
        return self.bound * quadrature.sphere_area(self.dim) * self.delta**-self.alpha / self.alpha

    def propose(self, rng: np.random.Generator, count: int) -> np.ndarray:
        radius = self.delta * (1.0 - rng.random(count)) ** (-1.0 / self.alpha)
        if self.dim == 1:
            w = np.where(rng.random(count) < 0.5, -1.0, 1.0)[:, None]
        else:
            theta = 2.0 * np.pi * rng.random(count)
            w = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return radius[:, None] * w

    def acceptance(self, t: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ratio = self.density(t, x, y) / self.bound
        if ratio.size and (np.min(ratio) < 0.0 or np.max(ratio) > 1.0 + 1e-12):
            raise AssumptionError(
                f"{self.name} jumps: density / bound = [{np.min(ratio):.4g}, "
                f"{np.max(ratio):.4g}] leaves [0, 1]; the bound {self.bound} is too small"
            )
        return ratio

    def moments(
        self, t: float, x: np.ndarray, gaussian: bool, n_angles: int
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Small-jump drift ``int y (1_{|y|<delta} - chi(y)) m nu(dy)`` and
        covariance ``int_{|y|<delta} y y^T m nu(dy)`` at points ``x``.
        """
        w, W = quadrature.sphere_rule(self.dim, n_angles)
        P = x.shape[0]
        if self.homogeneous:
            m = np.broadcast_to(self.density(t, x[:, None, :], w[None]), (P, w.shape[0]))
            mw = m * W[None]
            drift = _drift_radial(self.alpha, self.delta, self.compensation) * mw @ w
            cov = np.einsum("pl,li,lj->pij", mw, w, w)
            cov *= self.delta ** (2.0 - self.alpha) / (2.0 - self.alpha)
        else:
            drift = np.zeros((P, self.dim))
            for lo, hi, sign in _drift_segments(self.alpha, self.delta, self.compensation):
                r, R = _radial_rule(lo, hi, -self.alpha)
                y = r[:, None, None] * w[None]
                m = self.density(t, x[:, None, None, :], y[None])
                drift += sign * np.einsum("pkl,k,l,li->pi", m, R, W, w)
            r, R = _radial_rule(0.0, self.delta, 1.0 - self.alpha)
            y = r[:, None, None] * w[None]
            m = self.density(t, x[:, None, None, :], y[None])
            cov = np.einsum("pkl,k,l,li,lj->pij", m, R, W, w, w)
        if not gaussian:
            cov = np.zeros_like(cov)
        return drift, cov


def _matrix_root(cov: np.ndarray) -> np.ndarray:
    """Symmetric square roots of a stack of covariance matrices."""
    values, vectors = np.linalg.eigh(cov)
    root = np.sqrt(np.clip(values, 0.0, None))
    return np.einsum("...ik,...k,...jk->...ij", vectors, root, vectors)


class MomentField:
    """
    Drift and covariance root of the small jumps per kernel time cell, on
    the spatial grid (or a single value for x-independent components),
    interpolated linearly with periodic wrap.
    """

    def __init__(
        self,
        components: Sequence[JumpComponent],
        edges: np.ndarray,
        gaussian: bool,
        field_points: int,
        n_angles: int,
    ) -> None:
        self.edges = np.asarray(edges, dtype=float)
        dim = components[0].dim if components else 1
        self.dim = dim
        self.n = field_points
        self.x_independent = all(c.x_independent for c in components)
        points = np.zeros((1, dim)) if self.x_independent else grid_points(self.n, dim).reshape(-1, dim)
        self.drift = []
        self.root = []
        for c in range(len(self.edges) - 1):
            tc = 0.5 * (self.edges[c] + self.edges[c + 1])
            drift = np.zeros((points.shape[0], dim))
            cov = np.zeros((points.shape[0], dim, dim))
            for comp in components:
                d, s = comp.moments(tc, points, gaussian, n_angles)
                drift += d
                cov += s
            self.drift.append(drift)
            self.root.append(_matrix_root(cov))
        self.gaussian = gaussian and any(np.any(r != 0.0) for r in self.root)

    def _cells(self, t: np.ndarray) -> np.ndarray:
        e = self.edges
        return np.clip(np.searchsorted(e, t, side="right") - 1, 0, len(e) - 2)

    def _interpolate(self, table: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.x_independent:
            return np.broadcast_to(table[0], (x.shape[0],) + table.shape[1:]).copy()
        grid = table.reshape((self.n,) * self.dim + (-1,))
        coords = (np.mod(x, PERIOD) * (self.n / PERIOD)).T
        out = np.stack(
            [
                ndimage.map_coordinates(grid[..., k], coords, order=1, mode="grid-wrap")
                for k in range(grid.shape[-1])
            ],
            axis=-1,
        )
        return out.reshape((x.shape[0],) + table.shape[1:])

    def at(self, t: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        cells = self._cells(t)
        drift = np.empty_like(x)
        root = np.empty(x.shape + (self.dim,)) if self.gaussian else None
        for c in np.unique(cells):
            mask = cells == c
            drift[mask] = self._interpolate(self.drift[c], x[mask])
            if root is not None:
                root[mask] = self._interpolate(self.root[c], x[mask])
        return drift, root


@dataclass
class JumpEvent:
    time: float
    component: str
    size: Tuple[float, ...]
    ratio: float
    accepted: bool


@dataclass
class JumpPath:
    """Single simulated path: states at step ends and events, in time order."""

    seed: int
    times: np.ndarray
    states: np.ndarray
    kinds: List[str]
    events: List[JumpEvent] = field(default_factory=list)

    def write_csv(self, file_path: str) -> str:
        dim = self.states.shape[1]
        columns = ["time"] + [f"x{i + 1}" for i in range(dim)] + ["event"]
        rows = [
            [float(t)] + [float(v) for v in s] + [k]
            for t, s, k in zip(self.times, self.states, self.kinds)
        ]
        return write_csv(file_path, columns, rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "jumps": sum(e.accepted for e in self.events),
            "proposals": len(self.events),
            "final": self.states[-1].tolist(),
        }


@dataclass
class MCEstimate:
    value: float
    standard_error: float
    paths: int
    s: float
    x: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class BlockResult:
    integrals: np.ndarray
    states: np.ndarray
    big_jumps: np.ndarray
    proposed: Dict[str, int]
    accepted: Dict[str, int]


class JumpSimulator:
    """
    Simulator of the process with generator ``L0 = A + B0`` on ``[0, T]``.
    ``bspec`` must have ``rho >= 0`` and ``l = 0``.
    """

    def __init__(
        self,
        spec: KernelSpec,
        bspec: Optional[BOperatorSpec],
        T: float,
        settings: Optional[SimulationSettings] = None,
    ) -> None:
        self.spec = spec
        self.T = float(T)
        self.settings = SimulationSettings() if settings is None else settings
        self.dim = spec.dim
        settings = self.settings
        x_samples = grid_points(8, spec.dim).reshape(-1, spec.dim)
        t_samples = [0.5 * (a + b) for a, b in zip(spec.cell_edges(T)[:-1], spec.cell_edges(T)[1:])]
        if spec.alpha == 1.0:
            self._require_symmetric(t_samples, x_samples)
        self.gaussian = spec.alpha >= 1.0 if settings.gaussian is None else settings.gaussian
        delta = settings.delta_cut
        if delta is None:
            delta = choose_delta_cut(
                spec.alpha, spec.bigK, spec.dim, settings.variance_fraction, settings.max_rate
            )
        self.components = [
            JumpComponent(
                "A",
                spec.alpha,
                spec.dim,
                spec.m,
                spec.bigK,
                compensation_for(spec.alpha),
                delta,
                homogeneous=spec.homogeneous,
                x_independent=spec.x_independent,
            )
        ]
        self.bspec = None
        if bspec is not None and not bspec.is_zero:
            bspec.require_martingale_form(t_samples, x_samples)
            self.bspec = bspec
            if bspec.has_jumps:
                bound_b = density_bound(
                    bspec.rho, spec.dim, t_samples, settings.field_points, bspec.bigK
                )
                delta_b = choose_delta_cut(
                    bspec.alpha_prime,
                    bound_b,
                    spec.dim,
                    settings.variance_fraction,
                    settings.max_rate,
                )
                self.components.append(
                    JumpComponent(
                        "B",
                        bspec.alpha_prime,
                        spec.dim,
                        bspec.rho,
                        bound_b,
                        bspec.compensation,
                        delta_b,
                        homogeneous=bool(getattr(bspec.rho, "homogeneous", False)),
                        x_independent=bool(getattr(bspec.rho, "x_independent", False)),
                    )
                )
        self.fields = MomentField(
            self.components,
            spec.cell_edges(T),
            self.gaussian,
            settings.field_points,
            settings.n_angles,
        )
        rates = np.array([c.rate for c in self.components])
        self.total_rate = float(np.sum(rates))
        self.cumulative = np.cumsum(rates) / self.total_rate
        logger.info(
            f"jump simulator: cutoffs {[round(c.delta, 6) for c in self.components]}, "
            f"proposal rate {self.total_rate:.1f}, gaussian correction {self.fields.gaussian}"
        )

    @property
    def delta_cut(self) -> float:
        return self.components[0].delta

    def _require_symmetric(self, t_samples, x_samples) -> None:
        w, _ = quadrature.sphere_rule(self.dim, 64)
        for t in t_samples:
            plus = self.spec.m(t, x_samples[:, None, :], w[None])
            minus = self.spec.m(t, x_samples[:, None, :], -w[None])
            if np.max(np.abs(plus - minus)) > 1e-10:
                raise AssumptionError(
                    f"kernel {self.spec.name}: alpha = 1 requires m(t, x, y) = m(t, x, -y)"
                )

    def _drift(self, t: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        drift, root = self.fields.at(t, x)
        if self.bspec is not None and self.bspec.has_drift:
            drift = drift + self.bspec.drift(t, x)
        return drift, root

    def run_block(
        self,
        s: float,
        x0: np.ndarray,
        count: int,
        rng: np.random.Generator,
        integrand: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
        discount: float = 0.0,
        observe: Sequence[float] = (),
        count_radius: float = math.inf,
        record: bool = False,
    ) -> Tuple[BlockResult, Optional[Dict[str, Any]]]:
        """
        Simulate ``count`` paths from ``x0`` at time ``s`` to ``T``.

        :param integrand: ``(t, X) -> values``; its discounted time integral
            is accumulated with the trapezoidal rule on every interval
            without jumps
        :param observe: times at which the states and the running integral
            are stored; ``T`` is always observed last
        :param count_radius: accepted principal jumps larger than this are counted
        """
        if not 0.0 <= s <= self.T:
            raise ConfigurationError(f"start time {s} outside [0, {self.T}]")
        dim = self.dim
        X = np.broadcast_to(np.asarray(x0, dtype=float).reshape(1, dim), (count, dim)).copy()
        now = np.full(count, float(s))
        F = np.zeros(count)
        observe = sorted({float(t) for t in observe if s <= t <= self.T} | {self.T})
        steps = max(1, int(math.ceil((self.T - s) / self.settings.dt_max))) if self.T > s else 0
        grid = np.unique(np.concatenate([np.linspace(s, self.T, steps + 1), observe]))
        obs_F = np.zeros((count, len(observe)))
        obs_X = np.zeros((count, len(observe), dim))
        big = np.zeros(count, dtype=int)
        proposed = {c.name: 0 for c in self.components}
        accepted = {c.name: 0 for c in self.components}
        log = {"times": [], "states": [], "kinds": [], "events": []} if record else None

        def weight(t):
            return np.exp(-discount * (t - s)) if discount else 1.0

        def advance(mask: np.ndarray, target) -> None:
            idx = np.flatnonzero(mask)
            if idx.size == 0:
                return
            t0 = now[idx]
            t1 = np.broadcast_to(np.asarray(target, dtype=float), t0.shape)
            h = t1 - t0
            x = X[idx]
            drift, root = self._drift(t0, x)
            x_new = x + drift * h[:, None]
            if root is not None:
                z = rng.standard_normal((idx.size, dim))
                x_new += np.einsum("pij,pj->pi", root, z) * np.sqrt(h)[:, None]
            if integrand is not None:
                g0 = integrand(t0, x) * weight(t0)
                g1 = integrand(t1, x_new) * weight(t1)
                F[idx] += 0.5 * h * (g0 + g1)
            X[idx] = x_new
            now[idx] = t1
            if log is not None:
                log["times"].append(float(t1[0]))
                log["states"].append(x_new[0].copy())
                log["kinds"].append("step")

        k_obs = 0
        while k_obs < len(observe) and observe[k_obs] <= s:
            obs_F[:, k_obs], obs_X[:, k_obs] = F, X
            k_obs += 1
        if log is not None:
            log["times"].append(float(s))
            log["states"].append(X[0].copy())
            log["kinds"].append("start")
        for a, b in zip(grid[:-1], grid[1:]):
            n_events = rng.poisson(self.total_rate * (b - a), size=count)
            k_max = int(n_events.max()) if count else 0
            if k_max > 0:
                times = rng.uniform(a, b, size=(count, k_max))
                times[np.arange(k_max)[None, :] >= n_events[:, None]] = np.inf
                times.sort(axis=1)
                labels = np.searchsorted(
                    self.cumulative, rng.random((count, k_max)), side="right"
                )
                labels = np.minimum(labels, len(self.components) - 1)
                for j in range(k_max):
                    active = n_events > j
                    advance(active, times[active, j])
                    for c, comp in enumerate(self.components):
                        sel = np.flatnonzero(active & (labels[:, j] == c))
                        if sel.size == 0:
                            continue
                        y = comp.propose(rng, sel.size)
                        ratio = comp.acceptance(now[sel], X[sel], y)
                        ok = rng.random(sel.size) < ratio
                        X[sel] += y * ok[:, None]
                        proposed[comp.name] += int(sel.size)
                        accepted[comp.name] += int(ok.sum())
                        if c == 0:
                            big[sel] += ok & (np.linalg.norm(y, axis=-1) > count_radius)
                        if log is not None:
                            log["events"].append(
                                JumpEvent(
                                    float(now[sel[0]]),
                                    comp.name,
                                    tuple(float(v) for v in y[0]),
                                    float(ratio[0]),
                                    bool(ok[0]),
                                )
                            )
                            log["times"].append(float(now[sel[0]]))
                            log["states"].append(X[sel[0]].copy())
                            log["kinds"].append(
                                f"jump-{comp.name}" if ok[0] else f"reject-{comp.name}"
                            )
            advance(now < b, b)
            while k_obs < len(observe) and observe[k_obs] <= b:
                obs_F[:, k_obs], obs_X[:, k_obs] = F, X
                k_obs += 1
        result = BlockResult(
            integrals=obs_F,
            states=obs_X,
            big_jumps=big,
            proposed=proposed,
            accepted=accepted,
        )
        return result, log


def distribute_blocks(
    paths: int,
    block_size: int,
    work: Callable[[int, int], Dict[str, np.ndarray]],
    comm=None,
) -> Dict[str, np.ndarray]:
    """
    Run ``work(block, count)`` for every block, round-robin over the ranks
    of ``comm``, and concatenate the gathered arrays in block order.
    """
    if paths < 1:
        raise ConfigurationError(f"path count {paths} must be positive")
    comm = MPI.COMM_WORLD if comm is None else comm
    rank, size = comm.rank, comm.size
    n_blocks = int(math.ceil(paths / block_size))
    local = {}
    for b in range(rank, n_blocks, size):
        local[b] = work(b, min(block_size, paths - b * block_size))
    merged: Dict[int, Dict[str, np.ndarray]] = {}
    for part in comm.allgather(local):
        merged.update(part)
    ordered = [merged[b] for b in range(n_blocks)]
    return {key: np.concatenate([o[key] for o in ordered]) for key in ordered[0]}


def _substream(value: Optional[int], name: str) -> int:
    return SUBSTREAMS[name] if value is None else int(value)


def _as_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != dim:
        raise ConfigurationError(f"start point {x.tolist()} is not in R^{dim}")
    return x


def simulate_path(
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    s: float,
    x,
    seed: int,
    T: float,
    settings: Optional[SimulationSettings] = None,
    simulator: Optional[JumpSimulator] = None,
    substream: Optional[int] = None,
) -> JumpPath:
    sim = JumpSimulator(spec, bspec, T, settings) if simulator is None else simulator
    rng = block_generator(seed, _substream(substream, "paths"), 0)
    _, log = sim.run_block(s, _as_point(x, spec.dim), 1, rng, record=True)
    return JumpPath(
        seed=int(seed),
        times=np.asarray(log["times"]),
        states=np.stack(log["states"]),
        kinds=log["kinds"],
        events=log["events"],
    )


def simulate_paths(
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    s: float,
    x,
    seeds: Sequence[int],
    T: float,
    settings: Optional[SimulationSettings] = None,
    substream: Optional[int] = None,
) -> List[JumpPath]:
    """One path per seed; seeds must be distinct."""
    seeds = [int(v) for v in seeds]
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError(
            f"simulate_paths: duplicate seeds {sorted({v for v in seeds if seeds.count(v) > 1})}"
        )
    sim = JumpSimulator(spec, bspec, T, settings)
    return [simulate_path(spec, bspec, s, x, seed, T, simulator=sim, substream=substream) for seed in seeds]


def _horizon(forcing: GridSequence, T: Optional[float]) -> float:
    if T is not None:
        return float(T)
    if len(forcing) < 2:
        raise ConfigurationError("time-constant forcing needs an explicit horizon T")
    return float(forcing.times[-1])


def feynman_kac(
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    forcing: GridSequence,
    s: float,
    x,
    paths: int,
    seed: int,
    T: Optional[float] = None,
    discount: float = 0.0,
    settings: Optional[SimulationSettings] = None,
    comm=None,
    simulator: Optional[JumpSimulator] = None,
    substream: Optional[int] = None,
) -> MCEstimate:
    """
    ``u(s, x) = -E int_s^T e^{-lam (r - s)} f(r, X_r) dr``, the solution of
    ``du/dt + L0 u - lam u = f``, ``u(T) = 0``.
    """
    T = _horizon(forcing, T)
    x = _as_point(x, spec.dim)
    sim = JumpSimulator(spec, bspec, T, settings) if simulator is None else simulator

    def work(block: int, count: int) -> Dict[str, np.ndarray]:
        rng = block_generator(seed, _substream(substream, "feynman-kac"), block)
        result, _ = sim.run_block(
            s, x, count, rng, integrand=forcing.sample, discount=discount
        )
        return {"values": -result.integrals[:, -1]}

    values = distribute_blocks(paths, sim.settings.block_size, work, comm)["values"]
    stats = RunningStats.from_samples(values)
    return MCEstimate(
        value=stats.mean(),
        standard_error=stats.standard_error(),
        paths=stats.n,
        s=float(s),
        x=tuple(float(v) for v in x),
    )


def backward_solution(
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    forcing: GridSequence,
    T: float,
    lam: float = 0.0,
    n_t: int = 64,
    **picard_options,
) -> GridSequence:
    """
    Solution of ``du/dt + L u - lam u = f``, ``u(T) = 0`` from the forward
    solvers: ``v(tau) = u(T - tau)`` solves the forward problem with
    coefficients at ``T - tau`` and forcing ``-f(T - tau)``.
    """
    rspec = spec.time_reversed(T)
    rb = None if bspec is None or bspec.is_zero else bspec.time_reversed(T)
    if len(forcing) == 1:
        rforcing = GridSequence([0.0], -forcing.values)
    else:
        rforcing = GridSequence(T - forcing.times[::-1], -forcing.values[::-1])
    config = SolveConfig(lam=lam, T=T, n_t=n_t, forcing=rforcing)
    if rspec.x_independent and rb is None:
        v = resolve(rspec, config).u
    else:
        v = picard_solve(rspec, rb, config, verify=False, **picard_options).u.u
    return GridSequence(T - v.times[::-1], v.values[::-1])


@dataclass
class MartingaleResidual:
    times: np.ndarray
    means: np.ndarray
    standard_errors: np.ndarray
    paths: int

    @property
    def z_scores(self) -> np.ndarray:
        se = self.standard_errors
        return np.where(se > 0.0, np.abs(self.means) / np.where(se > 0.0, se, 1.0),
                        np.where(self.means == 0.0, 0.0, np.inf))

    @property
    def max_z(self) -> float:
        return float(np.max(self.z_scores)) if self.z_scores.size else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "times": self.times.tolist(),
            "means": self.means.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "z_scores": self.z_scores.tolist(),
            "max_z": self.max_z,
            "paths": self.paths,
        }


def generator_image(
    u: GridSequence, spec: KernelSpec, bspec: Optional[BOperatorSpec]
) -> GridSequence:
    """``du/dt + L0 u`` at the stamps of ``u``; the time derivative by finite differences."""
    if len(u) > 1:
        dudt = np.gradient(u.values, u.times, axis=0)
    else:
        dudt = np.zeros_like(u.values)
    values = np.stack(
        [
            dudt[i] + apply_L(u[i], spec, bspec, float(u.times[i]), method="auto").values
            for i in range(len(u))
        ]
    )
    return GridSequence(u.times, values)


def martingale_residual(
    u: GridSequence,
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    s: float,
    x,
    paths: int,
    seed: int,
    T: Optional[float] = None,
    forcing: Optional[GridSequence] = None,
    increments: int = 5,
    settings: Optional[SimulationSettings] = None,
    comm=None,
    substream: Optional[int] = None,
) -> MartingaleResidual:
    """
    Increment means of ``M_t = u(t, X_t) - int_s^t g(r, X_r) dr``.

    With ``forcing`` given, ``g = f`` and M is a martingale exactly when u
    solves ``du/dt + L0 u = f``. Otherwise ``g = du/dt + L0 u`` computed
    from u itself, which tests the simulated generator.
    """
    T = _horizon(u, T)
    x = _as_point(x, spec.dim)
    g = forcing if forcing is not None else generator_image(u, spec, bspec)
    observe = np.linspace(s, T, increments + 1)
    sim = JumpSimulator(spec, bspec, T, settings)

    def work(block: int, count: int) -> Dict[str, np.ndarray]:
        rng = block_generator(seed, _substream(substream, "martingale"), block)
        result, _ = sim.run_block(s, x, count, rng, integrand=g.sample, observe=observe)
        values = np.stack(
            [
                u.sample(np.full(count, t), result.states[:, k])
                for k, t in enumerate(observe)
            ],
            axis=1,
        )
        return {"increments": np.diff(values - result.integrals, axis=1)}

    increments_ = distribute_blocks(paths, sim.settings.block_size, work, comm)["increments"]
    stats = [RunningStats.from_samples(increments_[:, k]) for k in range(increments)]
    return MartingaleResidual(
        times=observe,
        means=np.array([st.mean() for st in stats]),
        standard_errors=np.array([st.standard_error() for st in stats]),
        paths=int(increments_.shape[0]),
    )


@dataclass
class JumpCountStatistics:
    radius: float
    mean_count: float
    count_standard_error: float
    expected_count: Optional[float]
    acceptance: float
    acceptance_standard_error: float
    expected_acceptance: Optional[float]
    paths: int

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def angular_mass(spec: KernelSpec, t: float, x, n_angles: int = 4096) -> float:
    """``int_S m(t, x, w) dw`` for a density homogeneous in y."""
    w, W = quadrature.sphere_rule(spec.dim, n_angles)
    x = np.asarray(x, dtype=float).reshape(1, spec.dim)
    return float(np.sum(W * spec.m(t, x, w)))


def jump_count_statistics(
    spec: KernelSpec,
    s: float,
    x,
    T: float,
    radius: float,
    paths: int,
    seed: int,
    settings: Optional[SimulationSettings] = None,
    comm=None,
    substream: Optional[int] = None,
) -> JumpCountStatistics:
    """
    Accepted principal jumps larger than ``radius`` per path, and the
    overall acceptance fraction of the thinning step, against their exact
    values for x-independent kernels homogeneous in y.
    """
    x = _as_point(x, spec.dim)
    sim = JumpSimulator(spec, None, T, settings)
    if radius < sim.delta_cut:
        raise ConfigurationError(
            f"count radius {radius} is below the small-jump cutoff {sim.delta_cut:.3g}"
        )

    def work(block: int, count: int) -> Dict[str, np.ndarray]:
        rng = block_generator(seed, _substream(substream, "jump-count"), block)
        result, _ = sim.run_block(s, x, count, rng, count_radius=radius)
        return {
            "counts": result.big_jumps.astype(float),
            "proposed": np.array([result.proposed["A"]], dtype=float),
            "accepted": np.array([result.accepted["A"]], dtype=float),
        }

    out = distribute_blocks(paths, sim.settings.block_size, work, comm)
    stats = RunningStats.from_samples(out["counts"])
    proposed, accepted = float(np.sum(out["proposed"])), float(np.sum(out["accepted"]))
    p = accepted / proposed if proposed else float("nan")
    p_se = math.sqrt(p * (1.0 - p) / proposed) if proposed else float("nan")
    expected_count = expected_acceptance = None
    if spec.homogeneous and spec.x_independent:
        mass = angular_mass(spec, 0.5 * (s + T), x)
        expected_count = (T - s) * mass * radius**-spec.alpha / spec.alpha
        expected_acceptance = mass / (spec.bigK * quadrature.sphere_area(spec.dim))
    return JumpCountStatistics(
        radius=float(radius),
        mean_count=stats.mean(),
        count_standard_error=stats.standard_error(),
        expected_count=expected_count,
        acceptance=p,
        acceptance_standard_error=p_se,
        expected_acceptance=expected_acceptance,
        paths=stats.n,
    )
