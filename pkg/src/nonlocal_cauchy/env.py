from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import copy
import logging
import os
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import yaml
from mpi4py import MPI
from mpi4py.MPI import Intracomm
from nonlocal_cauchy.config import config_path
from nonlocal_cauchy.const_solver import TIME_SCHEMES, SolveConfig
from nonlocal_cauchy.errors import ConfigurationError
from nonlocal_cauchy.holder import (
    GridFunction,
    GridSequence,
    grid_points,
    weierstrass_suite,
)
from nonlocal_cauchy.kernel import KernelSpec, kernel_from_config
from nonlocal_cauchy.mc import SimulationSettings
from nonlocal_cauchy.operators import BOperatorSpec
from nonlocal_cauchy.utils import (
    AbstractEnv,
    IncludeLoader,
    get_root_logger,
    set_by_path,
    update_dict,
)

SCHEMA_VERSION = 1

ForcingConfig = namedtuple(
    "ForcingConfig",
    ["kind", "points_per_axis", "J", "seeds", "mode", "value", "time_profile"],
)

SolverConfig = namedtuple(
    "SolverConfig",
    [
        "time_cells",
        "time_scheme",
        "symbol_method",
        "operator_method",
        "reference",
        "tol",
        "n_max",
        "warmup",
        "calibration",
    ],
)

CalibrationConfig = namedtuple(
    "CalibrationConfig", ["threshold", "run", "lambda_max"]
)

OutputConfig = namedtuple("OutputConfig", ["directory", "format"])

FORCING_KINDS = ("weierstrass", "mode", "constant")
TIME_PROFILES = ("constant", "linear")
OUTPUT_FORMATS = ("json", "csv")


def derive_seed(seed: int, substream: int, index: int = 0) -> int:
    """32-bit seed drawn from ``(seed, substream, index)``."""
    sequence = np.random.SeedSequence(
        int(seed), spawn_key=(int(substream), int(index))
    )
    return int(sequence.generate_state(1)[0])


def _section(config: Mapping[str, Any], name: str) -> Dict[str, Any]:
    value = config.get(name)
    if not isinstance(value, Mapping):
        raise ConfigurationError(f"configuration section {name!r} is missing")
    return dict(value)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigurationError(message)


@dataclass
class ExperimentConfig:
    """
    Parsed and validated experiment configuration. The raw mapping is kept
    in ``raw`` so that reports can embed it verbatim.
    """

    name: str
    alpha: float
    beta: float
    lam: float
    T: float
    dim: int
    kernel: Dict[str, Any]
    kernel_presets: Dict[str, Any]
    lower_order: Dict[str, Any]
    lower_order_presets: Dict[str, Any]
    forcing: ForcingConfig
    solver: SolverConfig
    simulation: Dict[str, Any]
    substreams: Dict[str, int]
    acceptance: Dict[str, Any]
    seed: int
    output: OutputConfig
    raw: Dict[str, Any]

    @classmethod
    def from_dict(cls, config: Mapping[str, Any]) -> "ExperimentConfig":
        version = config.get("schema_version")
        _require(
            version == SCHEMA_VERSION,
            f"unrecognized schema_version {version!r}; expected {SCHEMA_VERSION}",
        )
        params = _section(config, "Parameters")
        try:
            alpha = float(params["alpha"])
            beta = float(params["beta"])
            lam = float(params["lambda"])
            T = float(params["T"])
            dim = int(params["dim"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigurationError(f"Parameters: {e}") from e
        _require(0.0 < alpha < 2.0, f"alpha = {alpha} outside (0, 2)")
        _require(0.0 < beta <= 1.0, f"beta = {beta} outside (0, 1]")
        _require(lam >= 0.0, f"lambda = {lam} must be nonnegative")
        _require(T > 0.0, f"T = {T} must be positive")
        _require(dim in (1, 2), f"dim = {dim} must be 1 or 2")

        kernel = config.get("Kernel")
        if isinstance(kernel, str):
            kernel = {"preset": kernel}
        _require(isinstance(kernel, Mapping), "configuration section 'Kernel' is missing")
        kernel_presets = dict(config.get("Kernel Presets") or {})
        if "preset" in kernel:
            _require(
                kernel["preset"] in kernel_presets,
                f"unknown kernel preset {kernel['preset']!r}; "
                f"known: {sorted(kernel_presets)}",
            )

        lower = config.get("Lower Order") or {"preset": "zero"}
        if isinstance(lower, str):
            lower = {"preset": lower}
        lower_presets = dict(config.get("Lower Order Presets") or {})
        if "preset" in lower:
            _require(
                lower["preset"] in lower_presets,
                f"unknown lower-order preset {lower['preset']!r}; "
                f"known: {sorted(lower_presets)}",
            )

        f = _section(config, "Forcing")
        forcing = ForcingConfig(
            kind=str(f.get("kind", "weierstrass")),
            points_per_axis=int(f.get("points_per_axis", 128)),
            J=int(f.get("J", 5)),
            seeds=[int(s) for s in f.get("seeds", [])],
            mode=int(f.get("mode", 1)),
            value=float(f.get("value", 1.0)),
            time_profile=str(f.get("time_profile", "constant")),
        )
        _require(forcing.kind in FORCING_KINDS, f"unknown forcing kind {forcing.kind!r}")
        _require(
            forcing.time_profile in TIME_PROFILES,
            f"unknown forcing time_profile {forcing.time_profile!r}",
        )
        _require(forcing.points_per_axis >= 8, "Forcing.points_per_axis must be at least 8")
        if forcing.kind == "weierstrass":
            _require(len(forcing.seeds) > 0, "empty forcing suite: Forcing.seeds is empty")
            _require(
                len(set(forcing.seeds)) == len(forcing.seeds),
                f"duplicate forcing seeds {forcing.seeds}",
            )
            _require(
                2**forcing.J < forcing.points_per_axis // 2,
                f"Forcing.J = {forcing.J}: frequency 2^J is past half-Nyquist "
                f"of {forcing.points_per_axis} points",
            )

        s = _section(config, "Solver")
        c = dict(s.get("Lambda Calibration") or {})
        solver = SolverConfig(
            time_cells=int(s.get("time_cells", 64)),
            time_scheme=str(s.get("time_scheme", "exponential")),
            symbol_method=str(s.get("symbol_method", "direct")),
            operator_method=str(s.get("operator_method", "auto")),
            reference=str(s.get("reference", "minorant")),
            tol=float(s.get("tol", 1e-6)),
            n_max=int(s.get("n_max", 50)),
            warmup=int(s.get("warmup", 2)),
            calibration=CalibrationConfig(
                threshold=float(c.get("threshold", 0.8)),
                run=int(c.get("run", 3)),
                lambda_max=float(c.get("lambda_max", 2.0**20)),
            ),
        )
        _require(solver.time_cells >= 1, "Solver.time_cells must be positive")
        _require(
            solver.time_scheme in TIME_SCHEMES,
            f"unknown time_scheme {solver.time_scheme!r}",
        )
        _require(
            solver.symbol_method in ("direct", "spherical"),
            f"unknown symbol_method {solver.symbol_method!r}",
        )
        _require(
            solver.operator_method in ("auto", "quadrature", "angular"),
            f"unknown operator_method {solver.operator_method!r}",
        )
        _require(solver.tol > 0.0, "Solver.tol must be positive")
        _require(solver.n_max >= 1, "Solver.n_max must be positive")

        seeds = _section(config, "Random Seeds")
        _require("Global" in seeds, "Random Seeds.Global is missing")
        global_seed = int(seeds.pop("Global"))
        substreams = {name: int(v) for name, v in seeds.items()}
        _require(
            len(set(substreams.values())) == len(substreams),
            f"random substreams must be distinct: {substreams}",
        )

        o = dict(config.get("Output") or {})
        output = OutputConfig(
            directory=str(o.get("directory", "results")),
            format=str(o.get("format", "json")),
        )
        _require(output.format in OUTPUT_FORMATS, f"unknown output format {output.format!r}")

        simulation = dict(config.get("Simulation") or {})
        SimulationSettings.from_config(simulation)

        return cls(
            name=str(config.get("Experiment Name", "Unnamed experiment")),
            alpha=alpha,
            beta=beta,
            lam=lam,
            T=T,
            dim=dim,
            kernel=dict(kernel),
            kernel_presets=kernel_presets,
            lower_order=dict(lower),
            lower_order_presets=lower_presets,
            forcing=forcing,
            solver=solver,
            simulation=simulation,
            substreams=substreams,
            acceptance=dict(config.get("Acceptance") or {}),
            seed=global_seed,
            output=output,
            raw=copy.deepcopy(dict(config)),
        )

    def substream(self, name: str) -> int:
        if name not in self.substreams:
            raise ConfigurationError(
                f"unknown random substream {name!r}; known: {sorted(self.substreams)}"
            )
        return self.substreams[name]

    def kernel_spec(
        self, alpha: Optional[float] = None, entry: Union[str, Mapping, None] = None
    ) -> KernelSpec:
        return kernel_from_config(
            dict(self.kernel) if entry is None else entry,
            alpha=self.alpha if alpha is None else alpha,
            dim=self.dim,
            beta=self.beta,
            table=self.kernel_presets,
        )

    def b_spec(self, alpha: Optional[float] = None) -> BOperatorSpec:
        alpha = self.alpha if alpha is None else alpha
        entry = dict(self.lower_order)
        name = entry.pop("preset", None)
        if name is not None:
            entry = update_dict(copy.deepcopy(self.lower_order_presets[name]), entry)
        ratio = float(entry.get("alpha_prime_ratio", 0.5))
        _require(0.0 < ratio < 1.0, f"alpha_prime_ratio = {ratio} outside (0, 1)")
        b = list(entry.get("b", ["0"] * self.dim))[: self.dim]
        b += ["0"] * (self.dim - len(b))
        return BOperatorSpec.from_expressions(
            alpha,
            self.dim,
            alpha_prime=ratio * alpha,
            b=b,
            l=str(entry.get("l", "0")),
            rho=str(entry.get("rho", "0")),
            bigK=float(entry.get("bigK", 1.0)),
            beta=self.beta,
            name=name or "inline",
        )

    def forcing_functions(
        self, beta: Optional[float] = None, n: Optional[int] = None
    ) -> List[GridFunction]:
        """Spatial profiles of the forcing suite, on ``n`` points per axis."""
        f = self.forcing
        beta = self.beta if beta is None else beta
        n = f.points_per_axis if n is None else n
        if f.kind == "weierstrass":
            seeds = [
                derive_seed(self.seed, self.substream("Forcing"), s) for s in f.seeds
            ]
            return weierstrass_suite(beta, f.J, seeds, n=n, dim=self.dim)
        if f.kind == "mode":
            x = grid_points(n, self.dim)
            return [GridFunction(f.value * np.cos(f.mode * x[..., 0]))]
        return [GridFunction(np.full((n,) * self.dim, f.value))]

    def forcing_suite(self, beta: Optional[float] = None) -> List[GridSequence]:
        """
        Time-stamped forcing suite: a single stamp for a time-constant
        profile, ``f`` at 0 and ``2 f`` at T for the linear one.
        """
        out = []
        for g in self.forcing_functions(beta):
            if self.forcing.time_profile == "constant":
                out.append(GridSequence([0.0], g.values[None]))
            else:
                out.append(GridSequence([0.0, self.T], np.stack([g.values, 2.0 * g.values])))
        return out

    def solve_config(
        self, forcing: GridSequence, lam: Optional[float] = None
    ) -> SolveConfig:
        return SolveConfig(
            lam=self.lam if lam is None else lam,
            T=self.T,
            n_t=self.solver.time_cells,
            forcing=forcing,
            symbol_method=self.solver.symbol_method,
            time_scheme=self.solver.time_scheme,
        )

    def simulation_settings(self) -> SimulationSettings:
        return SimulationSettings.from_config(self.simulation)

    def sample_points(
        self, spec: KernelSpec, n: int = 16
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Time-cell midpoints and an ``n``-point grid where assumptions are checked."""
        edges = spec.cell_edges(self.T)
        t_samples = 0.5 * (edges[:-1] + edges[1:])
        return t_samples, grid_points(n, self.dim).reshape(-1, self.dim)

    def picard_options(self) -> Dict[str, Any]:
        return {
            "reference": self.solver.reference,
            "tol": self.solver.tol,
            "n_max": self.solver.n_max,
            "warmup": self.solver.warmup,
            "method": self.solver.operator_method,
        }

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.raw)


def parse_override(item: str) -> Dict[str, Any]:
    """``section.key=value`` with a YAML scalar value."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not of the form path=value")
    path, value = item.split("=", 1)
    try:
        parsed = yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"override {item!r}: {e}") from e
    return set_by_path({}, path.strip(), parsed)


class Env(AbstractEnv):
    """
    Experiment configuration.
    """

    def __init__(
        self,
        comm: Optional[Intracomm] = None,
        config: Union[str, Mapping[str, Any], None] = None,
        config_prefix: str = "",
        overrides: Optional[Mapping[str, Any]] = None,
        verbose: bool = False,
        **kwargs,
    ) -> None:
        """
        :param comm: :class:'MPI.COMM_WORLD'
        :param config: str; experiment configuration file name, or a mapping
            of updates to the default configuration
        :param config_prefix: str; directory of relative configuration files
        :param overrides: mapping of further updates, applied last
        :param verbose: bool; log progress at INFO level
        """
        self.kwargs = kwargs

        if comm is None:
            self.comm = MPI.COMM_WORLD
        else:
            self.comm = comm
        rank = self.comm.Get_rank()

        self.verbose = verbose
        self.logger = get_root_logger()
        if self.verbose:
            self.logger.setLevel(logging.INFO)

        self.model_config = None
        self.config_prefix = config_prefix
        error = None
        if rank == 0:
            try:
                with open(config_path("default.yaml")) as fp:
                    default_config = yaml.load(fp, IncludeLoader)
                if isinstance(config, str):
                    # merge configuration file over the defaults
                    p = config
                    if config_prefix != "" and not os.path.isabs(config):
                        p = os.path.join(config_prefix, config)
                    if not os.path.isfile(p):
                        raise ConfigurationError(f"configuration file {p} not found")
                    with open(p) as fp:
                        loaded = yaml.load(fp, IncludeLoader)
                    self.model_config = update_dict(default_config, loaded)
                else:
                    # apply configuration update to the defaults
                    self.model_config = update_dict(default_config, config)
                self.model_config = update_dict(self.model_config, overrides)
            except (ConfigurationError, OSError, yaml.YAMLError, ValueError) as e:
                error = str(e)

        error = self.comm.bcast(error, root=0)
        if error is not None:
            raise ConfigurationError(error)
        self.model_config = self.comm.bcast(self.model_config, root=0)

        self.experiment = ExperimentConfig.from_dict(self.model_config)
        self.experiment_name = self.experiment.name
        self.output_dir = self.experiment.output.directory

        if rank == 0:
            self.logger.info(
                f"env: experiment = {self.experiment_name}, alpha = {self.experiment.alpha}, "
                f"beta = {self.experiment.beta}, lambda = {self.experiment.lam}, "
                f"dim = {self.experiment.dim}"
            )
