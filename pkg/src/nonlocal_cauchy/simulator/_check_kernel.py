import os
import sys

from mpi4py import MPI
from nonlocal_cauchy import utils
from nonlocal_cauchy.env import Env, derive_seed
from nonlocal_cauchy.kernel import (
    AssumptionReport,
    fit_decay_constant,
    symbol_table,
    validate_assumptions,
)
from nonlocal_cauchy.operators import relative_bound_probe

sys_excepthook = sys.excepthook


def mpi_excepthook(type, value, traceback):
    sys_excepthook(type, value, traceback)
    if MPI.COMM_WORLD.size > 1:
        MPI.COMM_WORLD.Abort(1)


sys.excepthook = mpi_excepthook

# points per axis of the dual grid on which the symbol decay is fitted
DECAY_POINTS = 32


def check_kernel(
    config,
    output_dir=None,
    overrides=None,
    verbose=False,
    config_prefix="",
) -> AssumptionReport:
    """
    Audit the standing assumptions of the configured kernel, and of the
    lower-order part when it is not zero, and write ``check_kernel.json``.

    :raises AssumptionError: when a clause fails; the report is written first
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

    spec = experiment.kernel_spec()
    bspec = experiment.b_spec()
    t_samples, x_samples = experiment.sample_points(spec)

    if rank == 0:
        logger.info(f"Checking kernel {spec.name} (alpha = {spec.alpha}, d = {spec.dim})...")
    report = validate_assumptions(spec, t_samples, x_samples)
    body = {"kernel": spec.to_dict(), "assumptions": report.to_dict()}
    if report.passed:
        table = symbol_table(
            spec, DECAY_POINTS, experiment.T, method="spherical", density="minorant"
        )
        body["decay"] = min(
            fit_decay_constant(table, spec.alpha, cell)
            for cell in range(table.psi.shape[0])
        )

    lower = None
    if not bspec.is_zero:
        if rank == 0:
            logger.info(f"Checking lower-order part {bspec.name}...")
        lower = bspec.validate(t_samples, x_samples)
        probe = relative_bound_probe(
            bspec,
            experiment.beta,
            seed=derive_seed(experiment.seed, experiment.substream("Relative Bound")),
        )
        body["lower_order"] = {
            "operator": bspec.to_dict(),
            "assumptions": lower.to_dict(),
            "relative_bound": probe.to_dict(),
        }

    passed = report.passed and (lower is None or lower.passed)
    body["passed"] = passed
    if rank == 0:
        for clause in report.clauses + ([] if lower is None else lower.clauses):
            logger.info(
                f"  {clause.clause}: {'pass' if clause.passed else 'FAIL'} "
                f"(value {clause.value:.6g}, threshold {clause.threshold:.6g})"
            )
        utils.write_json(
            os.path.join(output_dir, "check_kernel.json"),
            utils.make_report("check-kernel", body, experiment.to_dict()),
        )
    comm.barrier()

    report.raise_if_failed()
    if lower is not None:
        lower.raise_if_failed()
    return report
