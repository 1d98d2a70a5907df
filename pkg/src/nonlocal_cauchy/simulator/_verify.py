from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import dataclasses
import math
import os
import sys

import numpy as np
from mpi4py import MPI
from nonlocal_cauchy import utils
from nonlocal_cauchy.const_solver import (
    SolveConfig,
    closed_form_mode,
    heat_kernel,
    resolve,
    sup_bound_constant,
    verify_defs_identity,
)
from nonlocal_cauchy.env import Env, ExperimentConfig, derive_seed
from nonlocal_cauchy.errors import (
    AssumptionError,
    ConfigurationError,
    NumericalError,
)
from nonlocal_cauchy.holder import (
    GridFunction,
    GridSequence,
    composite_norm,
    equiv_norm,
    grid_points,
    sup_norm,
    weierstrass_forcing,
)
from nonlocal_cauchy.kernel import (
    KernelSpec,
    kernel_from_config,
    symbol_table,
)
from nonlocal_cauchy.mc import (
    backward_solution,
    feynman_kac,
    martingale_residual,
)
from nonlocal_cauchy.operators import (
    calibrate_komatsu,
    komatsu_check,
    komatsu_mass,
)
from nonlocal_cauchy.simulator._simulate import probe_points
from nonlocal_cauchy.var_solver import calibrate_lambda, picard_solve

sys_excepthook = sys.excepthook


def mpi_excepthook(type, value, traceback):
    sys_excepthook(type, value, traceback)
    if MPI.COMM_WORLD.size > 1:
        MPI.COMM_WORLD.Abort(1)


sys.excepthook = mpi_excepthook

# This logger will inherit its settings from the root logger, created in nonlocal_cauchy.env
logger = utils.get_module_logger(__name__)


def _frozen(spec: KernelSpec) -> KernelSpec:
    return spec if spec.x_independent else spec.reference("minorant")


def _constant_in_time(f: GridFunction) -> GridSequence:
    return GridSequence([0.0], f.values[None])


def _solve_const(
    experiment: ExperimentConfig,
    spec: KernelSpec,
    f: GridFunction,
    lam: Optional[float] = None,
    n_t: Optional[int] = None,
):
    config = SolveConfig(
        lam=experiment.lam if lam is None else lam,
        T=experiment.T,
        n_t=experiment.solver.time_cells if n_t is None else n_t,
        forcing=_constant_in_time(f),
        symbol_method=experiment.solver.symbol_method,
    )
    return resolve(spec, config), config


def check_symbol(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Spherical and direct symbols agree on the dual grid."""
    n = int(th["points_per_axis"][experiment.dim])
    errors = {}
    for name in th["kernels"]:
        spec = kernel_from_config(
            name, experiment.alpha, experiment.dim, table=experiment.kernel_presets
        )
        direct = symbol_table(spec, n, experiment.T, method="direct").psi
        spherical = symbol_table(spec, n, experiment.T, method="spherical").psi
        nonzero = np.abs(direct) > 0.0
        errors[name] = float(
            np.max(np.abs(spherical - direct)[nonzero] / np.abs(direct)[nonzero])
        )
    return {
        "passed": all(e <= th["rtol"] for e in errors.values()),
        "values": {"relative_error": errors, "points_per_axis": n},
    }


def check_heat_kernel(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Mass, positivity and the Chapman-Kolmogorov identity of the heat kernel."""
    spec = _frozen(experiment.kernel_spec())
    n = experiment.forcing.points_per_axis
    T = experiment.T
    table = symbol_table(spec, n, T, method=experiment.solver.symbol_method)
    first = heat_kernel(spec, 0.0, 0.5 * T, n, T, table)
    second = heat_kernel(spec, 0.5 * T, T, n, T, table)
    whole = heat_kernel(spec, 0.0, T, n, T, table)
    mass = max(abs(h.mass - 1.0) for h in (first, second, whole))
    negativity = max(-h.min_ratio for h in (first, second, whole))
    ck = float(np.max(np.abs(whole.K - first.K * second.K)))
    return {
        "passed": mass <= th["mass"]
        and negativity <= th["negativity"]
        and ck <= th["chapman_kolmogorov"],
        "values": {
            "kernel": spec.name,
            "mass_error": mass,
            "negativity": negativity,
            "chapman_kolmogorov": ck,
        },
    }


def check_fourier_mode(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Single-mode forcings against the closed-form amplitude."""
    spec = _frozen(experiment.kernel_spec())
    n = experiment.forcing.points_per_axis
    x = grid_points(n, experiment.dim)[..., 0]
    errors = []
    table = None
    for k in th["wavenumbers"]:
        for lam in th["lambdas"]:
            f = GridFunction(np.cos(k * x))
            config = SolveConfig(
                lam=float(lam),
                T=experiment.T,
                n_t=experiment.solver.time_cells,
                forcing=_constant_in_time(f),
                symbol_method=experiment.solver.symbol_method,
            )
            solution = resolve(spec, config, table=table)
            table = solution.table
            index = (0, int(k)) + (0,) * (experiment.dim - 1)
            c_k = -complex(table.psi[index])
            u = solution.u
            mask = u.times <= table.cell_edges[1] + 1e-14
            a = closed_form_mode(float(lam), c_k, u.times[mask])
            oracle = np.real(
                a.reshape((-1,) + (1,) * experiment.dim) * np.exp(1j * k * x)[None]
            )
            scale = float(np.max(np.abs(oracle)))
            err = float(np.max(np.abs(u.values[mask] - oracle))) / scale
            errors.append({"k": int(k), "lambda": float(lam), "relative_error": err})
    worst = max(e["relative_error"] for e in errors)
    return {
        "passed": worst <= th["rtol"],
        "values": {"kernel": spec.name, "cases": errors, "worst": worst},
    }


def _variable(experiment: ExperimentConfig, spec: KernelSpec, bspec) -> bool:
    return not spec.x_independent or not bspec.is_zero


def check_schauder(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """``|u|_{alpha+beta} / |f|_beta`` over the forcing suite and under refinement."""
    n = experiment.forcing.points_per_axis
    options = experiment.picard_options()
    cases = []
    for alpha, beta in th["pairs"]:
        spec = experiment.kernel_spec(alpha=alpha)
        bspec = experiment.b_spec(alpha=alpha)
        solvers: List[Tuple[str, Callable]] = [
            ("const", lambda f, s=_frozen(spec): _solve_const(experiment, s, f)[0].final)
        ]
        if _variable(experiment, spec, bspec):

            def var(f, spec=spec, bspec=bspec):
                config = experiment.solve_config(_constant_in_time(f))
                return picard_solve(spec, bspec, config, verify=False, **options).u.final

            solvers.append(("var", var))
        suite = experiment.forcing_functions(beta)
        fine_suite = experiment.forcing_functions(beta, n=2 * n)
        for label, solver in solvers:
            ratios = [
                equiv_norm(solver(f), alpha, beta) / composite_norm(f, beta)
                for f in suite
            ]
            refined = [
                equiv_norm(solver(f), alpha, beta) / composite_norm(f, beta)
                for f in fine_suite
            ]
            spread = max(ratios) / min(ratios)
            drift = max(abs(r / c - 1.0) for r, c in zip(refined, ratios))
            cases.append(
                {
                    "alpha": alpha,
                    "beta": beta,
                    "solver": label,
                    "ratios": ratios,
                    "refined_ratios": refined,
                    "suite_ratio": spread,
                    "refinement_drift": drift,
                    "passed": spread < th["suite_ratio"]
                    and drift < th["refinement_drift"],
                }
            )
    return {"passed": all(c["passed"] for c in cases), "values": {"cases": cases}}


def check_time_holder(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Regression slope of ``|u(t) - u(s)|_{alpha/2+beta}`` against ``t - s``."""
    spec = _frozen(experiment.kernel_spec())
    f = experiment.forcing_functions()[0]
    separations = int(th["separations"])
    T = experiment.T
    n_t = max(experiment.solver.time_cells, 2 ** (separations + 1))
    solution, _ = _solve_const(experiment, spec, f, n_t=n_t)
    exponent = 0.5 * spec.alpha + experiment.beta
    h = T * 0.5 ** np.arange(1, separations + 1)
    norms = np.array(
        [
            composite_norm(solution.at(T) - solution.at(T - dt), exponent)
            for dt in h
        ]
    )
    slope = float(np.polyfit(np.log(h), np.log(norms), 1)[0])
    return {
        "passed": slope >= th["slope"],
        "values": {
            "exponent": exponent,
            "separations": h.tolist(),
            "norms": norms.tolist(),
            "slope": slope,
        },
    }


def check_sup_bound(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """
    ``C2`` per lambda, the largest over the suite and the constant forcing;
    its spread is measured against the geometric mean over lambda.
    """
    spec = _frozen(experiment.kernel_spec())
    n = experiment.forcing.points_per_axis
    forcings = [GridFunction(np.ones((n,) * experiment.dim))]
    forcings += experiment.forcing_functions()
    constants = []
    for lam in th["lambdas"]:
        c2 = 0.0
        for f in forcings:
            solution, config = _solve_const(experiment, spec, f, lam=float(lam))
            c2 = max(c2, sup_bound_constant(solution, config.forcing))
        constants.append(c2)
    fitted = float(np.exp(np.mean(np.log(constants))))
    spread = float(max(abs(c / fitted - 1.0) for c in constants))
    return {
        "passed": max(constants) <= th["constant"] and spread <= th["spread"],
        "values": {
            "lambdas": list(th["lambdas"]),
            "constants": constants,
            "fitted": fitted,
            "spread": spread,
        },
    }


def check_picard(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Contraction of the frozen-coefficient iteration and lambda calibration."""
    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    forcing = experiment.forcing_suite()[0]
    options = experiment.picard_options()
    config = SolveConfig(
        lam=float(th["lambda"]),
        T=experiment.T,
        n_t=int(th.get("time_cells", experiment.solver.time_cells)),
        forcing=forcing,
        symbol_method=experiment.solver.symbol_method,
    )
    state = picard_solve(spec, bspec, config, **options)
    f0 = float(np.max(np.abs(forcing.values)))
    q = state.q_hat
    c = experiment.solver.calibration
    calibration = calibrate_lambda(
        spec,
        bspec,
        experiment.solve_config(forcing, lam=0.0),
        threshold=c.threshold,
        run=c.run,
        lam_max=c.lambda_max,
        **options,
    )
    passed = (
        state.converged
        and (math.isnan(q) or q < th["q_hat"])
        and state.iterations <= th["iterations"]
        and state.defs_residual <= th["defs_residual"] * f0
        and math.isfinite(calibration.lam0)
    )
    return {
        "passed": passed,
        "values": {
            "iteration": state.to_dict(),
            "forcing_sup_norm": f0,
            "lambda0": calibration.lam0,
            "probes": calibration.probes,
        },
    }


def _mc_settings(experiment: ExperimentConfig) -> Tuple[int, float, Any]:
    sim = experiment.simulation
    return (
        int(sim.get("paths", 10000)),
        float(sim.get("start_time", 0.0)),
        experiment.simulation_settings(),
    )


def check_monte_carlo(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Feynman-Kac estimates against the backward solution at the probe points."""
    paths, s, settings = _mc_settings(experiment)
    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    forcing = experiment.forcing_suite()[0]
    T, lam = experiment.T, experiment.lam
    kernels = [(_frozen(spec), None)]
    if _variable(experiment, spec, bspec):
        kernels.append((spec, None if bspec.is_zero else bspec))
    points = probe_points(int(experiment.simulation.get("probe_points", 9)), spec.dim)
    cases = []
    for kernel, b in kernels:
        u = backward_solution(
            kernel,
            b,
            forcing,
            T,
            lam=lam,
            n_t=experiment.solver.time_cells,
            **experiment.picard_options(),
        )
        for x in points:
            estimate = feynman_kac(
                kernel,
                b,
                forcing,
                s,
                x,
                paths,
                experiment.seed,
                T=T,
                discount=lam,
                settings=settings,
                comm=MPI.COMM_SELF,
                substream=experiment.substream("Feynman-Kac"),
            )
            pde = float(u.interpolate(s, x[None, :])[0])
            diff = abs(estimate.value - pde)
            cases.append(
                {
                    "kernel": kernel.name,
                    "x": x.tolist(),
                    "mc": estimate.value,
                    "standard_error": estimate.standard_error,
                    "pde": pde,
                    "difference": diff,
                    "passed": diff
                    <= th["standard_errors"] * estimate.standard_error + th["bias"],
                }
            )
    return {
        "passed": all(c["passed"] for c in cases),
        "values": {"paths": paths, "cases": cases},
    }


def check_martingale(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Martingale increments of the solved u, and of the control ``u := f``."""
    paths, s, settings = _mc_settings(experiment)
    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    bspec = None if bspec.is_zero else bspec
    forcing = experiment.forcing_suite()[0]
    T = experiment.T
    x = probe_points(1, spec.dim)[0]
    u = backward_solution(
        spec,
        bspec,
        forcing,
        T,
        lam=0.0,
        n_t=experiment.solver.time_cells,
        **experiment.picard_options(),
    )
    common = dict(
        s=s,
        x=x,
        paths=paths,
        seed=experiment.seed,
        T=T,
        forcing=forcing,
        increments=int(th["increments"]),
        settings=settings,
        comm=MPI.COMM_SELF,
        substream=experiment.substream("Martingale"),
    )
    solved = martingale_residual(u, spec, bspec, **common)
    control = martingale_residual(GridSequence([0.0], forcing.values[:1]), spec, bspec, **common)
    return {
        "passed": solved.max_z <= th["standard_errors"]
        and control.max_z >= th["negative_control"],
        "values": {"solution": solved.to_dict(), "negative_control": control.to_dict()},
    }


def check_komatsu(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Scaling of the kernel mass and out-of-sample reconstruction of increments."""
    delta = float(th["delta"])
    f = experiment.forcing
    J = f.J if f.kind == "weierstrass" else 5
    n = f.points_per_axis
    stream = experiment.substream("Forcing")
    u_fit, u_test = [
        weierstrass_forcing(
            experiment.beta, J, derive_seed(experiment.seed, stream, 1000 + i), n=n
        )
        for i in range(2)
    ]
    y_fit, y_test = 0.3, 0.7
    scaling = abs(komatsu_mass(delta, 2.0 * y_fit) / komatsu_mass(delta, y_fit) / 2.0**delta - 1.0)
    constant = calibrate_komatsu(delta, y_fit, u_fit)
    result = komatsu_check(delta, y_test, u_test, constant=constant)
    relative = result.residual / sup_norm(u_test)
    return {
        "passed": scaling <= th["scaling"] and relative <= th["residual"],
        "values": {
            "scaling_error": scaling,
            "constant": constant,
            "relative_residual": relative,
            "check": result.to_dict(),
        },
    }


def check_uniqueness(experiment: ExperimentConfig, th: Dict[str, Any]) -> Dict[str, Any]:
    """Reference-kernel independence of the Picard limit and time-step convergence."""
    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    forcing = experiment.forcing_suite()[0]
    options = experiment.picard_options()
    tol = options["tol"]
    values: Dict[str, Any] = {}
    passed = True
    if _variable(experiment, spec, bspec):
        # the trapezoidal fixed point does not depend on the reference kernel
        config = dataclasses.replace(
            experiment.solve_config(forcing), time_scheme="trapezoidal"
        )
        limits = {}
        for reference in ("minorant", "x-average"):
            options.update(reference=reference, tol=0.1 * tol)
            limits[reference] = picard_solve(
                spec, bspec, config, verify=False, **options
            ).u.u
        scale = float(np.max(np.abs(limits["minorant"].values)))
        difference = float(
            np.max(np.abs(limits["minorant"].values - limits["x-average"].values))
        )
        values["reference_difference"] = difference
        values["reference_scale"] = scale
        values["picard_tol"] = tol
        passed = difference <= th["tol_factor"] * tol * scale

    frozen = _frozen(spec)
    f = experiment.forcing_functions()[0]
    residuals = []
    for n_t in th["time_cells"]:
        solution, config = _solve_const(experiment, frozen, f, n_t=int(n_t))
        residuals.append(verify_defs_identity(solution, frozen, config))
    orders = [
        math.log2(a / b) if b > 0.0 else math.inf
        for a, b in zip(residuals[:-1], residuals[1:])
    ]
    values.update(
        {"time_cells": list(th["time_cells"]), "residuals": residuals, "orders": orders}
    )
    passed = passed and min(orders) >= th["order"]
    return {"passed": passed, "values": values}


def check_maximum_principle(
    experiment: ExperimentConfig, th: Dict[str, Any]
) -> Dict[str, Any]:
    """Nonnegative forcings give nonnegative solutions."""
    spec = _frozen(experiment.kernel_spec())
    n = experiment.forcing.points_per_axis
    forcings = [GridFunction(np.ones((n,) * experiment.dim))]
    forcings += [
        f.with_values(f.values - np.min(f.values)) for f in experiment.forcing_functions()
    ]
    minima = [
        float(np.min(_solve_const(experiment, spec, f)[0].u.values)) for f in forcings
    ]
    return {
        "passed": min(minima) >= th["floor"],
        "values": {"minima": minima, "worst": min(minima)},
    }


CRITERIA: Dict[str, Tuple[str, Callable]] = {
    "symbol": ("Symbol", check_symbol),
    "heat-kernel": ("Heat Kernel", check_heat_kernel),
    "fourier-mode": ("Fourier Mode", check_fourier_mode),
    "schauder": ("Schauder", check_schauder),
    "time-holder": ("Time Holder", check_time_holder),
    "sup-bound": ("Sup Bound", check_sup_bound),
    "picard": ("Picard", check_picard),
    "monte-carlo": ("Monte Carlo", check_monte_carlo),
    "martingale": ("Martingale", check_martingale),
    "komatsu": ("Komatsu", check_komatsu),
    "uniqueness": ("Uniqueness", check_uniqueness),
    "maximum-principle": ("Maximum Principle", check_maximum_principle),
}


def run_criterion(experiment: ExperimentConfig, name: str) -> Dict[str, Any]:
    """
    Evaluate one acceptance criterion. Assumption and numerical failures
    are recorded as a failed criterion; configuration errors propagate.
    """
    section, check = CRITERIA[name]
    thresholds = experiment.acceptance.get(section)
    if thresholds is None:
        raise ConfigurationError(f"Acceptance.{section} thresholds are missing")
    try:
        result = check(experiment, thresholds)
    except (AssumptionError, NumericalError) as e:
        result = {"passed": False, "values": {}, "error": f"{type(e).__name__}: {e}"}
    result["criterion"] = name
    result["thresholds"] = thresholds
    return result


def verify(
    config,
    output_dir=None,
    overrides=None,
    criteria: Optional[Sequence[str]] = None,
    verbose=False,
    config_prefix="",
) -> Dict[str, Any]:
    """
    Run the acceptance criteria, distributed round-robin over the MPI
    ranks, and write the consolidated ``verify.json`` on rank 0.
    """
    utils.config_logging(verbose)
    logger = utils.get_script_logger(__file__)

    comm = MPI.COMM_WORLD
    rank = comm.rank
    size = comm.size

    env = Env(
        comm=comm,
        config=config,
        config_prefix=config_prefix,
        overrides=overrides,
        verbose=verbose,
    )
    experiment = env.experiment
    if output_dir is None:
        output_dir = experiment.output.directory

    names = list(CRITERIA) if not criteria else list(criteria)
    unknown = [n for n in names if n not in CRITERIA]
    if unknown:
        raise ConfigurationError(
            f"unknown acceptance criteria {unknown}; known: {list(CRITERIA)}"
        )
    # the forcing suite is validated before any work is scheduled
    experiment.forcing_functions()

    local = {}
    for name in names[rank::size]:
        logger.info(f"Rank {rank}: checking {name}...")
        local[name] = run_criterion(experiment, name)
        logger.info(
            f"Rank {rank}: {name} {'passed' if local[name]['passed'] else 'FAILED'}"
        )

    gathered = comm.gather(local, root=0)
    body: Dict[str, Any] = {}
    if rank == 0:
        merged: Dict[str, Any] = {}
        for part in gathered:
            merged.update(part)
        results = [merged[n] for n in names]
        body = {
            "criteria": results,
            "passed": all(r["passed"] for r in results),
            "seed": experiment.seed,
            "substreams": experiment.substreams,
        }
        utils.write_json(
            os.path.join(output_dir, "verify.json"),
            utils.make_report("verify", body, experiment.to_dict()),
        )
    body = comm.bcast(body, root=0)
    return body
