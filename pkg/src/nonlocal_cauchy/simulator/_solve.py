from typing import Any, Dict, List, Optional

import os
import sys

from mpi4py import MPI
from nonlocal_cauchy import utils
from nonlocal_cauchy.const_solver import (
    Solution,
    resolve,
    sup_bound_constant,
    verify_defs_identity,
)
from nonlocal_cauchy.env import Env
from nonlocal_cauchy.errors import ConfigurationError
from nonlocal_cauchy.holder import composite_norm, norm_report, sup_norm
from nonlocal_cauchy.var_solver import (
    calibrate_lambda,
    picard_solve,
    write_iteration,
)

sys_excepthook = sys.excepthook


def mpi_excepthook(type, value, traceback):
    sys_excepthook(type, value, traceback)
    if MPI.COMM_WORLD.size > 1:
        MPI.COMM_WORLD.Abort(1)


sys.excepthook = mpi_excepthook

MODES = ("const", "var")


def _summary(solution: Solution, forcing, alpha: float, beta: float) -> Dict[str, Any]:
    final = solution.final
    f0 = forcing[0]
    norms = norm_report(
        final, betas=(beta,), composite=(beta,), alpha=alpha, beta=beta
    )
    return {
        "lambda": solution.lam,
        "T": solution.T,
        "stamps": len(solution.u),
        "sup_norm": solution.sup_norm(),
        "forcing": {
            "sup_norm": sup_norm(f0),
            "holder_norm": composite_norm(f0, beta),
        },
        "final": norms.to_dict(),
        "sup_bound_constant": sup_bound_constant(solution, forcing),
    }


def solve(
    config,
    mode="const",
    output_dir=None,
    overrides=None,
    forcing_index: Optional[int] = 0,
    calibrate=False,
    verbose=False,
    config_prefix="",
) -> List[Dict[str, Any]]:
    """
    Solve the configured Cauchy problem for one member of the forcing
    suite (``forcing_index``) or for all of them (``None``), spread over
    the MPI ranks. Writes the solution, its norm report and, in ``var``
    mode, the Picard residual log to ``<output_dir>/solve-<mode>/``.
    """
    utils.config_logging(verbose)
    logger = utils.get_script_logger(__file__)

    comm = MPI.COMM_WORLD
    rank = comm.rank
    size = comm.size

    if mode not in MODES:
        raise ConfigurationError(f"unknown solve mode {mode!r}; known: {MODES}")

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
    output_dir = os.path.join(output_dir, f"solve-{mode}")

    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    if mode == "const":
        if not spec.x_independent:
            raise ConfigurationError(
                f"kernel {spec.name} depends on x; use the variable-coefficient solver"
            )
        if not bspec.is_zero:
            raise ConfigurationError(
                f"lower-order part {bspec.name} is not zero; use the variable-coefficient solver"
            )

    suite = experiment.forcing_suite()
    if forcing_index is None:
        members = list(range(len(suite)))
    else:
        if not 0 <= forcing_index < len(suite):
            raise ConfigurationError(
                f"forcing index {forcing_index} outside the suite of {len(suite)}"
            )
        members = [forcing_index]

    results: Dict[int, Dict[str, Any]] = {}
    for i in members[rank::size]:
        forcing = suite[i]
        solve_config = experiment.solve_config(forcing)
        member_dir = os.path.join(output_dir, f"forcing-{i}")
        logger.info(f"Rank {rank}: solving ({mode}) for forcing {i}...")
        if mode == "const":
            solution = resolve(spec, solve_config)
            entry = _summary(solution, forcing, experiment.alpha, experiment.beta)
            entry["defs_residual"] = verify_defs_identity(solution, spec, solve_config)
            files = solution.write(member_dir, fmt=experiment.output.format)
        else:
            options = experiment.picard_options()
            if calibrate:
                c = experiment.solver.calibration
                calibration = calibrate_lambda(
                    spec,
                    bspec,
                    solve_config,
                    threshold=c.threshold,
                    run=c.run,
                    lam_max=c.lambda_max,
                    **options,
                )
                state, solution = calibration.state, calibration.solution
                state.u = solution
                extra = {"calibration": calibration.to_dict()}
            else:
                state = picard_solve(spec, bspec, solve_config, **options)
                solution = state.u
                extra = {}
            entry = _summary(solution, forcing, experiment.alpha, experiment.beta)
            entry["defs_residual"] = state.defs_residual
            entry["iteration"] = state.to_dict()
            entry.update(extra)
            files = write_iteration(state, member_dir, fmt=experiment.output.format)
        entry["forcing_index"] = i
        entry["files"] = [os.path.relpath(p, output_dir) for p in files]
        results[i] = entry

    gathered = comm.gather(results, root=0)
    entries: List[Dict[str, Any]] = []
    if rank == 0:
        merged: Dict[int, Dict[str, Any]] = {}
        for part in gathered:
            merged.update(part)
        entries = [merged[i] for i in members]
        body = {
            "mode": mode,
            "kernel": spec.to_dict(),
            "lower_order": bspec.to_dict(),
            "solutions": entries,
        }
        utils.write_json(
            os.path.join(output_dir, f"solve_{mode}.json"),
            utils.make_report(f"solve-{mode}", body, experiment.to_dict()),
        )
        for e in entries:
            logger.info(
                f"forcing {e['forcing_index']}: |u|_0 = {e['sup_norm']:.6g}, "
                f"residual = {e['defs_residual']:.3e}"
            )
    entries = comm.bcast(entries, root=0)
    return entries
