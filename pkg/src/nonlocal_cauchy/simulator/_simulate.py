from typing import Any, Dict, Optional

import os
import sys

import numpy as np
from mpi4py import MPI
from nonlocal_cauchy import utils
from nonlocal_cauchy.env import Env, derive_seed
from nonlocal_cauchy.holder import PERIOD
from nonlocal_cauchy.mc import (
    JumpSimulator,
    backward_solution,
    feynman_kac,
    simulate_paths,
)

sys_excepthook = sys.excepthook


def mpi_excepthook(type, value, traceback):
    sys_excepthook(type, value, traceback)
    if MPI.COMM_WORLD.size > 1:
        MPI.COMM_WORLD.Abort(1)


sys.excepthook = mpi_excepthook


def probe_points(count: int, dim: int) -> np.ndarray:
    """``count`` points on the diagonal of the torus, the first at the origin."""
    s = PERIOD * np.arange(count) / count
    return np.repeat(s[:, None], dim, axis=1)


def simulate(
    config,
    output_dir=None,
    overrides=None,
    paths: Optional[int] = None,
    compare=True,
    verbose=False,
    config_prefix="",
) -> Dict[str, Any]:
    """
    Feynman-Kac estimates of the backward solution at the probe points,
    optionally compared with the PDE solution, plus CSV dumps of a few
    individual paths. Path blocks are spread over all MPI ranks.
    """
    utils.config_logging(verbose)
    logger = utils.get_script_logger(__file__)

    comm = MPI.COMM_WORLD
    rank = comm.rank

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
    output_dir = os.path.join(output_dir, "simulate")

    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    bspec = None if bspec.is_zero else bspec
    settings = experiment.simulation_settings()
    sim_config = experiment.simulation
    paths = int(sim_config.get("paths", 10000)) if paths is None else int(paths)
    s = float(sim_config.get("start_time", 0.0))
    T = experiment.T
    lam = experiment.lam
    forcing = experiment.forcing_suite()[0]

    simulator = JumpSimulator(spec, bspec, T, settings)
    if rank == 0:
        logger.info(
            f"Simulating {paths} paths per probe point; small-jump cutoff "
            f"{simulator.delta_cut:.4g}"
        )

    solution = None
    if compare:
        if rank == 0:
            logger.info("Solving the backward equation for comparison...")
        solution = backward_solution(
            spec,
            bspec,
            forcing,
            T,
            lam=lam,
            n_t=experiment.solver.time_cells,
            **experiment.picard_options(),
        )

    estimates = []
    for j, x in enumerate(probe_points(int(sim_config.get("probe_points", 9)), spec.dim)):
        estimate = feynman_kac(
            spec,
            bspec,
            forcing,
            s,
            x,
            paths,
            experiment.seed,
            T=T,
            discount=lam,
            settings=settings,
            comm=comm,
            simulator=simulator,
            substream=experiment.substream("Feynman-Kac"),
        )
        entry = estimate.to_dict()
        if solution is not None:
            pde = float(solution.interpolate(s, x[None, :])[0])
            entry["pde"] = pde
            entry["difference"] = abs(estimate.value - pde)
        estimates.append(entry)
        if rank == 0:
            logger.info(
                f"probe {j}: u_MC = {estimate.value:.6g} +- {estimate.standard_error:.2g}"
                + (f", u_PDE = {entry['pde']:.6g}" if "pde" in entry else "")
            )

    dumps = []
    n_dumps = int(sim_config.get("path_dumps", 0))
    if n_dumps > 0 and rank == 0:
        seeds = [
            derive_seed(experiment.seed, experiment.substream("Paths"), i)
            for i in range(n_dumps)
        ]
        for i, path in enumerate(
            simulate_paths(
                spec, bspec, s, probe_points(1, spec.dim)[0], seeds, T, settings
            )
        ):
            file_path = path.write_csv(os.path.join(output_dir, f"path-{i}.csv"))
            dumps.append(os.path.relpath(file_path, output_dir))

    body = {
        "kernel": spec.to_dict(),
        "lower_order": None if bspec is None else bspec.to_dict(),
        "lambda": lam,
        "start_time": s,
        "T": T,
        "paths": paths,
        "delta_cut": simulator.delta_cut,
        "estimates": estimates,
        "path_dumps": dumps,
    }
    if rank == 0:
        utils.write_json(
            os.path.join(output_dir, "simulate.json"),
            utils.make_report("simulate", body, experiment.to_dict()),
        )
    comm.barrier()
    return body
