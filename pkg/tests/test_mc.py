import dataclasses
import math
import threading

import numpy as np
import pytest
from mpi4py import MPI
from nonlocal_cauchy.errors import AssumptionError, ConfigurationError
from nonlocal_cauchy.holder import GridFunction, GridSequence
from nonlocal_cauchy.kernel import fractional_laplacian_constant
from nonlocal_cauchy.mc import (
    JumpSimulator,
    SimulationSettings,
    backward_solution,
    block_generator,
    choose_delta_cut,
    density_bound,
    distribute_blocks,
    feynman_kac,
    jump_count_statistics,
    martingale_residual,
    simulate_path,
    simulate_paths,
)
from nonlocal_cauchy.utils import RunningStats
from numpy.testing import assert_allclose

FAST = SimulationSettings(max_rate=200.0, block_size=250, dt_max=0.05, field_points=8)


def sine_forcing(n=16):
    f = GridFunction.from_callable(np.sin, n, 1)
    return GridSequence([0.0], f.values[None])


def sine_solution(alpha, lam, T, s):
    c = fractional_laplacian_constant(alpha, 1) + lam
    return -(1.0 - math.exp(-c * (T - s))) / c


class ThreadComm:
    """Communicator of one rank in a group of threads, enough for allgather."""

    def __init__(self, rank, size, barrier, slots):
        self.rank = rank
        self.size = size
        self.barrier = barrier
        self.slots = slots

    def allgather(self, obj):
        self.slots[self.rank] = obj
        self.barrier.wait()
        gathered = list(self.slots)
        self.barrier.wait()
        return gathered


def run_on_ranks(size, fn):
    barrier = threading.Barrier(size, timeout=300)
    slots = [None] * size
    results = [None] * size

    def target(rank):
        results[rank] = fn(ThreadComm(rank, size, barrier, slots))

    threads = [threading.Thread(target=target, args=(rank,)) for rank in range(size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results


def test_block_generator():
    a = block_generator(7, 1, 3).random(5)
    assert_allclose(block_generator(7, 1, 3).random(5), a)
    assert not np.allclose(block_generator(7, 1, 4).random(5), a)
    assert not np.allclose(block_generator(7, 2, 3).random(5), a)
    assert not np.allclose(block_generator(8, 1, 3).random(5), a)


def test_simulation_settings():
    settings = SimulationSettings.from_config({"dt_max": 0.1, "block_size": 10, "unknown": 1})
    assert settings.dt_max == 0.1 and settings.block_size == 10
    assert settings.gaussian is None
    for kwargs in ({"dt_max": 0.0}, {"variance_fraction": 1.0}, {"block_size": 0}):
        with pytest.raises(ConfigurationError):
            SimulationSettings(**kwargs)


def test_choose_delta_cut():
    by_variance = choose_delta_cut(1.5, 1.0, 1, 0.01, 1e12)
    assert_allclose(by_variance, np.pi * 0.01**2)
    capped = choose_delta_cut(1.5, 1.0, 1, 0.01, 200.0)
    assert capped > by_variance
    # the proposal rate sits exactly at the cap
    assert_allclose(2.0 * capped**-1.5 / 1.5, 200.0)
    assert choose_delta_cut(0.5, 1.0, 2, 0.01, 1e12) == pytest.approx(np.pi * 0.01 ** (1 / 1.5))


def test_density_bound(isotropic):
    spec = isotropic()
    assert density_bound(spec.m, 1, [0.5], n=8) == pytest.approx(1.05)
    assert density_bound(spec.m, 1, [0.5], n=8, cap=1.0) == 1.0
    zero = lambda t, x, y: np.zeros(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]))
    assert density_bound(zero, 1, [0.5], n=8, cap=2.0) == 2.0


def test_simulator_cutoff_and_gaussian(isotropic):
    sim = JumpSimulator(isotropic(1.5), None, 1.0, FAST)
    assert sim.gaussian
    assert sim.delta_cut == pytest.approx(choose_delta_cut(1.5, 1.0, 1, 0.01, 200.0))
    assert sim.total_rate == pytest.approx(200.0)
    assert not JumpSimulator(isotropic(0.7), None, 1.0, FAST).gaussian


def test_simulator_rejects_asymmetric_alpha_one():
    from nonlocal_cauchy.kernel import presets

    spec = presets()["asymmetric-unit"](1.0, 2)
    with pytest.raises(AssumptionError):
        JumpSimulator(spec, None, 1.0, FAST)


def test_simulate_path(isotropic, tmp_path):
    spec = isotropic()
    a = simulate_path(spec, None, 0.25, [0.0], seed=5, T=1.0, settings=FAST)
    b = simulate_path(spec, None, 0.25, [0.0], seed=5, T=1.0, settings=FAST)
    assert_allclose(a.states, b.states)
    assert a.kinds[0] == "start"
    assert a.times[0] == 0.25 and a.times[-1] == pytest.approx(1.0)
    assert np.all(np.diff(a.times) >= 0.0)
    assert a.to_dict()["jumps"] == sum(k == "jump-A" for k in a.kinds)

    file_path = a.write_csv(str(tmp_path / "path.csv"))
    with open(file_path) as fp:
        lines = fp.read().splitlines()
    assert lines[0] == "time,x1,event"
    assert len(lines) == len(a.times) + 1
    assert lines[1].endswith(",start")

    with pytest.raises(ConfigurationError):
        simulate_path(spec, None, 0.0, [0.0, 1.0], seed=5, T=1.0, settings=FAST)
    with pytest.raises(ConfigurationError):
        simulate_path(spec, None, 2.0, [0.0], seed=5, T=1.0, settings=FAST)


def test_simulate_paths(isotropic):
    spec = isotropic()
    paths = simulate_paths(spec, None, 0.0, [1.0], [1, 2], T=0.5, settings=FAST)
    assert [p.seed for p in paths] == [1, 2]
    assert not np.allclose(paths[0].states[-1], paths[1].states[-1])
    with pytest.raises(ConfigurationError):
        simulate_paths(spec, None, 0.0, [1.0], [3, 4, 3], T=0.5, settings=FAST)


def test_distribute_blocks():
    def work(block, count):
        return {"block": np.full(count, block), "count": np.array([count])}

    out = distribute_blocks(25, 10, work, MPI.COMM_SELF)
    assert out["count"].tolist() == [10, 10, 5]
    assert out["block"].tolist() == [0] * 10 + [1] * 10 + [2] * 5
    with pytest.raises(ConfigurationError):
        distribute_blocks(0, 10, work, MPI.COMM_SELF)


def test_jump_count_statistics(isotropic):
    spec = isotropic(1.5)
    stats = jump_count_statistics(
        spec, 0.0, [0.0], 1.0, 1.0, paths=2000, seed=11, settings=FAST, comm=MPI.COMM_SELF
    )
    # m = 1 on both directions: 2 r^{-alpha} / alpha jumps above r per unit time
    assert stats.expected_count == pytest.approx(2.0 / 1.5)
    assert abs(stats.mean_count - stats.expected_count) <= 4.0 * stats.count_standard_error
    assert stats.acceptance == 1.0
    assert stats.expected_acceptance == pytest.approx(1.0)
    assert stats.paths == 2000

    with pytest.raises(ConfigurationError):
        jump_count_statistics(spec, 0.0, [0.0], 1.0, 1e-4, paths=10, seed=1, settings=FAST)


@pytest.mark.parametrize("lam", [0.0, 1.0])
def test_feynman_kac_constant_forcing(lam):
    from nonlocal_cauchy.kernel import presets

    spec = presets()["isotropic"](1.5, 1)
    forcing = GridSequence([0.0], np.ones((1, 16)))
    estimate = feynman_kac(
        spec, None, forcing, 0.25, [0.3], paths=20, seed=3, T=1.0,
        discount=lam, settings=FAST, comm=MPI.COMM_SELF,
    )
    expected = -0.75 if lam == 0.0 else -(1.0 - math.exp(-lam * 0.75)) / lam
    assert_allclose(estimate.value, expected, atol=5e-4)
    assert estimate.paths == 20 and estimate.x == (0.3,)


def test_feynman_kac_sine_forcing(isotropic):
    spec = isotropic(1.5)
    estimate = feynman_kac(
        spec, None, sine_forcing(), 0.25, [np.pi / 2], paths=1000, seed=4, T=1.0,
        settings=FAST, comm=MPI.COMM_SELF,
    )
    expected = sine_solution(1.5, 0.0, 1.0, 0.25)
    assert abs(estimate.value - expected) <= 4.0 * estimate.standard_error + 5e-3


def test_backward_solution(isotropic):
    spec = isotropic(1.5)
    u = backward_solution(spec, None, sine_forcing(), 1.0, lam=1.0, n_t=16)
    assert u.times[0] == pytest.approx(0.0) and u.times[-1] == pytest.approx(1.0)
    assert u.values.shape == (17, 16)
    assert_allclose(u.values[-1], 0.0, atol=1e-14)
    x = u[0].points[..., 0]
    for i in (0, 4, 12):
        expected = sine_solution(1.5, 1.0, 1.0, u.times[i]) * np.sin(x)
        assert_allclose(u.values[i], expected, atol=1e-6)


def test_martingale_residual(isotropic):
    spec = isotropic(1.5)
    forcing = sine_forcing()
    u = backward_solution(spec, None, forcing, 1.0, n_t=64)
    residual = martingale_residual(
        u, spec, None, 0.0, [0.5], paths=500, seed=9, T=1.0, forcing=forcing,
        increments=4, settings=FAST, comm=MPI.COMM_SELF,
    )
    assert residual.times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert residual.means.shape == (4,)
    assert residual.paths == 500
    assert residual.max_z < 4.5
    assert residual.to_dict()["max_z"] == residual.max_z


def test_running_stats():
    stats = RunningStats.from_samples(np.array([1.0, 2.0, 3.0, 6.0]))
    assert stats.n == 4
    assert stats.mean() == 3.0
    assert stats.variance() == pytest.approx(14.0 / 3.0)
    assert stats.standard_error() == pytest.approx(math.sqrt(14.0 / 3.0) / 2.0)
    empty = RunningStats.from_samples(np.array([]))
    assert empty.variance() == 0.0 and math.isnan(empty.standard_error())


def test_distribute_blocks_over_ranks():
    def work(block, count):
        return {"block": np.full(count, block)}

    for size in (2, 3):
        gathered = run_on_ranks(size, lambda comm: distribute_blocks(25, 10, work, comm))
        for out in gathered:
            assert out["block"].tolist() == [0] * 10 + [1] * 10 + [2] * 5


@pytest.mark.parametrize("size", [2, 3])
def test_feynman_kac_is_independent_of_rank_count(isotropic, size):
    spec = isotropic(1.5)
    forcing = sine_forcing()
    settings = dataclasses.replace(FAST, block_size=40)
    kwargs = dict(paths=130, seed=21, T=1.0, settings=settings)
    serial = feynman_kac(spec, None, forcing, 0.25, [0.5], comm=MPI.COMM_SELF, **kwargs)
    parallel = run_on_ranks(
        size, lambda comm: feynman_kac(spec, None, forcing, 0.25, [0.5], comm=comm, **kwargs)
    )
    for estimate in parallel:
        assert estimate.value == serial.value
        assert estimate.standard_error == serial.standard_error
        assert estimate.paths == 130


def test_halving_the_cutoff_moves_estimates_by_less_than_one_standard_error(isotropic):
    spec = isotropic(1.5)
    forcing = sine_forcing()
    settings = dataclasses.replace(FAST, block_size=500)
    halved = dataclasses.replace(
        settings, delta_cut=0.5 * JumpSimulator(spec, None, 1.0, settings).delta_cut
    )
    x = [np.pi / 2]
    reference = feynman_kac(
        spec, None, forcing, 0.25, x, paths=200, seed=18, T=1.0,
        settings=settings, comm=MPI.COMM_SELF,
    )
    # the shift itself is resolved with 32 times the paths of the reference run
    kwargs = dict(paths=6400, seed=17, T=1.0, comm=MPI.COMM_SELF)
    coarse = feynman_kac(spec, None, forcing, 0.25, x, settings=settings, **kwargs)
    fine = feynman_kac(spec, None, forcing, 0.25, x, settings=halved, **kwargs)
    assert abs(fine.value - coarse.value) < reference.standard_error
