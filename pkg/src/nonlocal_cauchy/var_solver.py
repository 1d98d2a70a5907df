"""
Variable-coefficient Cauchy problem ``du/dt = L u - lam u + f`` by
frozen-coefficient Picard iteration around an x-independent reference
kernel.
"""

from typing import Any, Dict, List, Optional, Tuple

import math
import os
from dataclasses import dataclass, field

import numpy as np
from nonlocal_cauchy.const_solver import (
    ModeIntegrator,
    SolveConfig,
    Solution,
    forcing_ends,
    verify_defs_identity,
)
from nonlocal_cauchy.errors import ConfigurationError, NonConvergenceError
from nonlocal_cauchy.holder import GridFunction, GridSequence
from nonlocal_cauchy.kernel import KernelSpec, symbol_table
from nonlocal_cauchy.operators import BOperatorSpec, apply_A, apply_B
from nonlocal_cauchy.utils import get_module_logger, write_csv

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = get_module_logger(__name__)

REFERENCES = ("minorant", "x-average", "self")


@dataclass
class IterationState:
    """
    :param residuals: ``r_n = |u_{n+1} - u_n|_0`` per iteration
    :param q_hats: ``r_n / r_{n-1}``; NaN for the first iteration
    """

    lam: float
    reference: str
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    q_hats: List[float] = field(default_factory=list)
    converged: bool = False
    defs_residual: Optional[float] = None
    u: Optional[Solution] = None

    @property
    def q_hat(self) -> float:
        finite = [q for q in self.q_hats if math.isfinite(q)]
        return finite[-1] if finite else float("nan")

    def record(self, residual: float) -> float:
        if not (math.isfinite(residual) and residual >= 0.0):
            raise NonConvergenceError(
                f"Picard residual {residual} is not a finite nonnegative number",
                lam=self.lam,
            )
        prev = self.residuals[-1] if self.residuals else None
        if prev is None:
            q = float("nan")
        elif prev == 0.0:
            q = 0.0
        else:
            q = residual / prev
        self.residuals.append(float(residual))
        self.q_hats.append(q)
        self.iterations += 1
        return q

    def write_log(self, file_path: str) -> str:
        rows = [
            (i + 1, r, q)
            for i, (r, q) in enumerate(zip(self.residuals, self.q_hats))
        ]
        return write_csv(file_path, ["iteration", "residual", "q_hat"], rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam,
            "reference": self.reference,
            "iterations": self.iterations,
            "converged": self.converged,
            "q_hat": self.q_hat,
            "residuals": list(self.residuals),
            "defs_residual": self.defs_residual,
        }


class Perturbation:
    """
    ``P u = (A^m - A^{m_ref}) u + B u`` per kernel time cell, memoized per
    (stamp, cell) for one iterate.
    """

    def __init__(
        self,
        spec: KernelSpec,
        reference: Optional[KernelSpec],
        bspec: Optional[BOperatorSpec],
        edges: np.ndarray,
        method: str = "auto",
    ) -> None:
        self.spec = spec
        self.reference = reference
        self.bspec = None if bspec is None or bspec.is_zero else bspec
        self.edges = edges
        self.method = method

    @property
    def is_zero(self) -> bool:
        return self.reference is None and self.bspec is None

    def __call__(self, u: np.ndarray, cell: int) -> np.ndarray:
        t = 0.5 * (self.edges[cell] + self.edges[cell + 1])
        g = GridFunction(u, time_stamp=t)
        out = np.zeros(u.shape)
        if self.reference is not None:
            out += apply_A(g, self.spec, t, reference=self.reference, method=self.method).values
        if self.bspec is not None:
            out += apply_B(g, self.bspec, t).values
        return out

    def ends(
        self, values: np.ndarray, cells: List[int]
    ) -> Tuple[np.ndarray, np.ndarray]:
        cache: Dict[Tuple[int, int], np.ndarray] = {}

        def at(i, c):
            if (i, c) not in cache:
                cache[(i, c)] = self(values[i], c)
            return cache[(i, c)]

        left = np.stack([at(j, c) for j, c in enumerate(cells)])
        right = np.stack([at(j + 1, c) for j, c in enumerate(cells)])
        return left, right


def reference_kernel(spec: KernelSpec, reference: str, n: int) -> Optional[KernelSpec]:
    """The reference kernel, or None when it coincides with ``spec``."""
    if reference not in REFERENCES:
        raise ConfigurationError(
            f"unknown reference kernel {reference!r}; known: {REFERENCES}"
        )
    if reference == "self":
        if not spec.x_independent:
            raise ConfigurationError(
                f"reference 'self' needs an x-independent kernel ({spec.name})"
            )
        return None
    ref = spec.reference(reference, n=n)
    return None if ref is spec else ref


def picard_solve(
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    config: SolveConfig,
    reference: str = "minorant",
    tol: float = 1e-6,
    n_max: int = 50,
    warmup: int = 2,
    method: str = "auto",
    verify: bool = True,
    log_path: Optional[str] = None,
) -> IterationState:
    """
    Iterate ``u_{n+1} = R_lam[f + (A^m - A^{m_ref}) u_n + B u_n]`` from
    ``u_0 = 0`` until ``|u_{n+1} - u_n|_0 <= tol |u_1|_0``.

    :raises NonConvergenceError: ``q_hat >= 1`` after ``warmup`` iterations
    """
    if spec.dim != config.dim:
        raise ConfigurationError("picard_solve: kernel and forcing dimensions differ")
    ref = reference_kernel(spec, reference, config.n)
    frozen = spec if ref is None else ref
    table = symbol_table(frozen, config.n, config.T, method=config.symbol_method)
    stamps = config.stamps(spec)
    integrator = ModeIntegrator(table, config.lam, stamps, scheme=config.time_scheme)
    f_left, f_right = forcing_ends(config.forcing, stamps)
    perturbation = Perturbation(
        spec, ref, bspec, spec.cell_edges(config.T), method=method
    )
    state = IterationState(lam=config.lam, reference=reference)

    u = integrator.run(f_left, f_right)
    scale = float(np.max(np.abs(u)))
    state.record(scale)
    logger.info(f"Picard iteration 1: |u_1|_0 = {scale:.3e} (lambda = {config.lam})")
    if perturbation.is_zero or scale == 0.0:
        state.converged = True
    while not state.converged and state.iterations < n_max:
        p_left, p_right = perturbation.ends(u, integrator.cells)
        u_next = integrator.run(f_left + p_left, f_right + p_right)
        r = float(np.max(np.abs(u_next - u)))
        q = state.record(r)
        u = u_next
        logger.info(
            f"Picard iteration {state.iterations}: residual = {r:.3e}, q_hat = {q:.3f}"
        )
        if r <= tol * scale:
            state.converged = True
        elif state.iterations > warmup + 1 and q >= 1.0:
            if log_path is not None:
                state.write_log(log_path)
            raise NonConvergenceError(
                f"Picard iteration is not contracting at lambda = {config.lam}: "
                f"q_hat = {q:.3f} after {state.iterations} iterations",
                q_hat=q,
                lam=config.lam,
                diagnostics={"residuals": list(state.residuals)},
            )
    if not state.converged:
        logger.warning(
            f"Picard iteration reached n_max = {n_max} with residual "
            f"{state.residuals[-1]:.3e} (tolerance {tol * scale:.3e})"
        )
    state.u = Solution(
        u=GridSequence(stamps, u),
        lam=config.lam,
        T=config.T,
        table=table,
        meta={"kernel": spec.name, "reference": reference},
    )
    if verify:
        state.defs_residual = verify_defs_identity(
            state.u, spec, config, bspec=bspec, method=method
        )
    if log_path is not None:
        state.write_log(log_path)
    return state


def shift_forcing(
    forcing: GridSequence, kappa: float, times: Optional[np.ndarray] = None
) -> GridSequence:
    """
    ``e^{-kappa t} f(t)`` sampled at ``times``; the problem at
    ``lam + kappa`` then has solution ``e^{-kappa t} u``.
    """
    times = forcing.times if times is None else np.asarray(times, dtype=float)
    return GridSequence(
        times, np.stack([np.exp(-kappa * t) * forcing.at(t).values for t in times])
    )


def shift_solution(solution: Solution, kappa: float, lam: float) -> Solution:
    """Inverse of :func:`shift_forcing`: ``u(t) = e^{kappa t} u~(t)``."""
    return Solution(
        u=solution.u.map(lambda t, v: np.exp(kappa * t) * v),
        lam=lam,
        T=solution.T,
        table=solution.table,
        meta={**solution.meta, "shifted_from": solution.lam},
    )


@dataclass
class LambdaCalibration:
    lam0: float
    probes: List[Dict[str, Any]]
    state: IterationState
    solution: Solution

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda0": self.lam0,
            "probes": self.probes,
            "iteration": self.state.to_dict(),
        }


def _contracts(
    state: IterationState, threshold: float, run: int, warmup: int
) -> bool:
    if state.converged:
        return True
    qs = [q for q in state.q_hats[warmup + 1 :] if math.isfinite(q)]
    return len(qs) >= run and all(q <= threshold for q in qs[-run:])


def calibrate_lambda(
    spec: KernelSpec,
    bspec: Optional[BOperatorSpec],
    config: SolveConfig,
    reference: str = "minorant",
    threshold: float = 0.8,
    run: int = 3,
    lam_max: float = 2.0**20,
    tol: float = 1e-6,
    n_max: int = 50,
    warmup: int = 2,
    method: str = "auto",
) -> LambdaCalibration:
    """
    Double lambda from 1 until ``q_hat <= threshold`` over ``run``
    consecutive iterations. The requested ``config.lam`` is then solved
    at ``lam0`` through the exponential substitution when it lies below.
    """
    probes: List[Dict[str, Any]] = []
    probe_iterations = warmup + run + 1
    lam = 1.0
    while True:
        if lam > lam_max:
            raise NonConvergenceError(
                f"calibrate_lambda: no contraction up to lambda = {lam_max:g}",
                q_hat=probes[-1]["q_hat"] if probes else float("nan"),
                lam=lam / 2.0,
                diagnostics={"probes": probes},
            )
        try:
            state = picard_solve(
                spec,
                bspec,
                config.with_lambda(lam),
                reference=reference,
                tol=tol,
                n_max=probe_iterations,
                warmup=warmup,
                method=method,
                verify=False,
            )
            ok = _contracts(state, threshold, run, warmup)
            q = state.q_hat
        except NonConvergenceError as e:
            ok, q = False, e.q_hat
        probes.append({"lambda": lam, "q_hat": q, "contracts": ok})
        logger.info(f"lambda probe {lam:g}: q_hat = {q:.3f}, contracts = {ok}")
        if ok:
            break
        lam *= 2.0
    lam0 = lam

    target = max(config.lam, lam0)
    kappa = target - config.lam
    shifted = config.with_lambda(target)
    if kappa > 0.0:
        shifted = shifted.with_forcing(
            shift_forcing(config.forcing, kappa, config.stamps(spec))
        )
    state = picard_solve(
        spec,
        bspec,
        shifted,
        reference=reference,
        tol=tol,
        n_max=n_max,
        warmup=warmup,
        method=method,
        verify=False,
    )
    solution = state.u
    if kappa > 0.0:
        solution = shift_solution(solution, kappa, config.lam)
    state.defs_residual = verify_defs_identity(
        solution, spec, config, bspec=bspec, method=method
    )
    return LambdaCalibration(lam0=lam0, probes=probes, state=state, solution=solution)


def write_iteration(state: IterationState, output_dir: str, fmt: str = "json") -> List[str]:
    """Solution container plus the residual log."""
    paths = state.u.write(output_dir, fmt=fmt)
    paths.append(state.write_log(os.path.join(output_dir, "residuals.csv")))
    return paths
