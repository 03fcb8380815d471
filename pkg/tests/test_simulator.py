"""Event-engine semantics: hand traces, equivalences, accounting, determinism."""

import json
import math

import numpy as np
import pytest

from sgdtime.problem import ChainQuadratic
from sgdtime.simulator import (
    SimConfig,
    run,
    run_async,
    run_m_sync,
    run_rennala,
    run_sync,
)
from sgdtime.time_models import (
    ExponentialDelay,
    FixedTimes,
    PowerProfile,
    PowerProfiles,
    RandomDelays,
    StallError,
    UniformDelay,
)


def small_problem(d=6, p=0.5):
    return ChainQuadratic(d, p)


# ---------------------------------------------------------------------------
# hand traces under fixed times
# ---------------------------------------------------------------------------

def test_sync_barrier_trace():
    traj = run_sync(small_problem(), FixedTimes([1.0, 2.0, 5.0]),
                    SimConfig("sync", gamma=0.1, iteration_cap=3))
    assert traj.final_time == 15.0
    assert np.array_equal(traj.times, [0.0, 5.0, 10.0, 15.0])
    assert np.array_equal(traj.iterations, [0, 1, 2, 3])
    assert (traj.produced, traj.used, traj.discarded, traj.pending) == (9, 9, 0, 0)


def test_m_sync_first_two_of_three_trace():
    # the two fast workers resynchronize at the update; the slow worker's
    # leftover from iteration 0 would be discarded at t=5, after the stop
    traj = run_m_sync(small_problem(), FixedTimes([1.0, 2.0, 5.0]),
                      SimConfig("msync", gamma=0.1, group_size=2, iteration_cap=2))
    assert np.array_equal(traj.times, [0.0, 2.0, 4.0])
    assert traj.final_time == 4.0
    assert (traj.produced, traj.used, traj.discarded, traj.pending) == (4, 4, 0, 0)


def test_m_sync_discards_late_arrivals():
    traj = run_m_sync(small_problem(), FixedTimes([1.0, 2.0, 5.0]),
                      SimConfig("msync", gamma=0.1, group_size=2, iteration_cap=3))
    # updates at 2 and 4; at t=5 worker 3's iteration-0 gradient is discarded
    # and it starts over, landing the third update at t=6
    assert np.array_equal(traj.times, [0.0, 2.0, 4.0, 6.0])
    assert traj.discarded == 1


def test_m_sync_fixed_times_update_law():
    # after the first iteration the m fastest workers stay in lockstep, so
    # K iterations finish at exactly K * tau_(m)
    rng = np.random.default_rng(31)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        taus = np.sort(rng.uniform(0.3, 5.0, size=n))
        if rng.random() < 0.3:
            taus[n // 2:] = taus[n // 2]  # inject ties
        m = int(rng.integers(1, n + 1))
        k = int(rng.integers(1, 8))
        traj = run_m_sync(small_problem(), FixedTimes(taus),
                          SimConfig("msync", gamma=0.05, group_size=m,
                                    iteration_cap=k, seed=int(rng.integers(1 << 16))))
        assert traj.final_time == pytest.approx(k * taus[m - 1], rel=1e-12)


def brute_force_async_fixed(problem, taus, gamma, cap, seed):
    """Independent async reference: arrays and a min-scan, no heap.

    Returns (update times, worker ids, staleness, final x).
    """
    n = len(taus)
    rngs = [np.random.default_rng([seed, w]) for w in range(n)]
    x = problem.start_point()
    due = np.array([taus[w] for w in range(n)])
    ver = np.zeros(n, dtype=int)
    grad = [problem.stochastic_gradient(x, rngs[w]) for w in range(n)]
    times, ids, stale = [], [], []
    k = 0
    while k < cap:
        w = int(np.lexsort((np.arange(n), due))[0])
        t = due[w]
        times.append(t)
        ids.append(w)
        stale.append(k - ver[w])
        x = x - gamma * grad[w]
        k += 1
        ver[w] = k
        due[w] = t + taus[w]
        grad[w] = problem.stochastic_gradient(x, rngs[w])
    return times, ids, stale, x


def test_async_trace_two_workers():
    prob = small_problem()
    cfg = SimConfig("async", gamma=0.05, iteration_cap=6, seed=3)
    traj = run_async(prob, FixedTimes([1.0, 2.0]), cfg)
    times, ids, stale, x = brute_force_async_fixed(prob, [1.0, 2.0], 0.05, 6, 3)
    # ties go to the lower worker id
    assert times == [1.0, 2.0, 2.0, 3.0, 4.0, 4.0]
    assert ids == [0, 0, 1, 0, 0, 1]
    assert stale == [0, 0, 2, 1, 0, 2]
    assert np.array_equal(traj.staleness, stale)
    # same-time updates collapse into one record
    assert np.array_equal(traj.times, [0.0, 1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(traj.iterations, [0, 1, 3, 4, 6])
    assert traj.final_f == pytest.approx(prob.objective_value(x), rel=1e-12)
    assert (traj.produced, traj.used, traj.discarded) == (6, 6, 0)


def test_async_matches_brute_force_on_random_fixed_times():
    rng = np.random.default_rng(77)
    for _ in range(10):
        n = int(rng.integers(1, 6))
        taus = np.sort(rng.uniform(0.5, 3.0, size=n))
        prob = small_problem(d=5, p=0.3)
        cap = int(rng.integers(3, 20))
        seed = int(rng.integers(1 << 16))
        traj = run_async(prob, FixedTimes(taus),
                         SimConfig("async", gamma=0.02, iteration_cap=cap, seed=seed))
        times, _, stale, x = brute_force_async_fixed(prob, list(taus), 0.02, cap, seed)
        assert np.array_equal(traj.staleness, stale)
        assert traj.final_time == times[-1]
        assert traj.final_f == pytest.approx(prob.objective_value(x), rel=1e-12)


def test_async_single_worker_is_serial_sgd():
    prob = small_problem(d=8, p=0.25)
    traj = run_async(prob, FixedTimes([2.0]),
                     SimConfig("async", gamma=0.1, iteration_cap=15, seed=11))
    rng = np.random.default_rng([11, 0])
    x = prob.start_point()
    for _ in range(15):
        x = x - 0.1 * prob.stochastic_gradient(x, rng)
    assert np.array_equal(traj.staleness, np.zeros(15, dtype=int))
    assert traj.final_time == 30.0
    assert traj.final_f == pytest.approx(prob.objective_value(x), rel=1e-12)


def test_rennala_fast_worker_fills_batch():
    traj = run_rennala(small_problem(), FixedTimes([1.0, 10.0]),
                       SimConfig("rennala", gamma=0.1, batch_size=2, iteration_cap=2))
    # worker 1 supplies both gradients of each batch; worker 2's first result
    # lands at t=10, stale, and is discarded
    assert np.array_equal(traj.times, [0.0, 2.0, 4.0])
    assert (traj.produced, traj.used, traj.discarded, traj.pending) == (4, 4, 0, 0)


def test_rennala_discards_stale_then_reuses_worker():
    traj = run_rennala(small_problem(), FixedTimes([1.0, 10.0]),
                       SimConfig("rennala", gamma=0.1, batch_size=2,
                                 iteration_cap=5))
    assert np.array_equal(traj.times, [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    assert traj.discarded == 1  # worker 2's t=10 arrival carries version 0


# ---------------------------------------------------------------------------
# algorithm equivalences
# ---------------------------------------------------------------------------

def exact_equal(a, b):
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.iterations, b.iterations)
    assert np.array_equal(a.f_values, b.f_values)
    assert np.array_equal(a.grad_sq_norms, b.grad_sq_norms)
    assert (a.produced, a.used, a.discarded) == (b.produced, b.used, b.discarded)


def test_full_group_m_sync_equals_sync_fixed_times():
    prob = small_problem(d=10, p=0.2)
    model = FixedTimes([0.5, 1.0, 1.0, 4.0])
    sync = run_sync(prob, model, SimConfig("sync", gamma=0.08, iteration_cap=6, seed=5))
    msync = run_m_sync(prob, model, SimConfig("msync", gamma=0.08, group_size=4,
                                              iteration_cap=6, seed=5))
    exact_equal(sync, msync)


def test_full_group_m_sync_equals_sync_random_delays():
    prob = small_problem(d=7, p=0.4)
    model = RandomDelays([ExponentialDelay(2.0), UniformDelay(0.5, 1.5),
                          ExponentialDelay(0.7)])
    sync = run_sync(prob, model, SimConfig("sync", gamma=0.03, iteration_cap=8, seed=9))
    msync = run_m_sync(prob, model, SimConfig("msync", gamma=0.03, group_size=3,
                                              iteration_cap=8, seed=9))
    exact_equal(sync, msync)


def test_rennala_full_batch_homogeneous_equals_sync():
    prob = small_problem(d=9, p=0.3)
    model = FixedTimes([1.5, 1.5, 1.5, 1.5])
    sync = run_sync(prob, model, SimConfig("sync", gamma=0.06, iteration_cap=7, seed=2))
    ren = run_rennala(prob, model, SimConfig("rennala", gamma=0.06, batch_size=4,
                                             iteration_cap=7, seed=2))
    exact_equal(sync, ren)


# ---------------------------------------------------------------------------
# accounting, determinism, stopping
# ---------------------------------------------------------------------------

def test_work_conservation_iteration_capped():
    prob = small_problem()
    runs = [
        run_sync(prob, FixedTimes([1.0, 3.0]), SimConfig("sync", 0.1, iteration_cap=4)),
        run_m_sync(prob, FixedTimes([1.0, 2.0, 3.0]),
                   SimConfig("msync", 0.1, group_size=2, iteration_cap=5)),
        run_async(prob, FixedTimes([1.0, 2.5]),
                  SimConfig("async", 0.1, iteration_cap=9)),
        run_rennala(prob, FixedTimes([1.0, 2.5, 7.0]),
                    SimConfig("rennala", 0.1, batch_size=3, iteration_cap=4)),
    ]
    for traj in runs:
        assert traj.pending == 0
        assert traj.produced == traj.used + traj.discarded


def test_sync_time_budget_counts_partial_work():
    traj = run_sync(small_problem(), FixedTimes([1.0, 2.0, 5.0]),
                    SimConfig("sync", gamma=0.1, time_budget=12.0))
    # barriers at 5 and 10 fit; of the third wave only workers 1 and 2 finish
    assert traj.final_time == 10.0
    assert traj.updates == 2
    assert (traj.produced, traj.used, traj.pending) == (8, 6, 2)


def test_time_budget_caps_all_event_algorithms():
    prob = small_problem()
    for name, kwargs in (("msync", {"group_size": 2}),
                         ("async", {}),
                         ("rennala", {"batch_size": 2})):
        traj = run(prob, FixedTimes([1.0, 2.0, 6.0]),
                   SimConfig(name, gamma=0.05, time_budget=7.3, **kwargs))
        assert traj.final_time <= 7.3
        assert np.all(traj.times <= 7.3)
        assert traj.pending >= 0


def test_identical_seeds_reproduce_and_seeds_matter():
    prob = small_problem(d=12, p=0.1)
    model = RandomDelays([ExponentialDelay(1.0)] * 3)
    cfg = SimConfig("async", gamma=0.04, iteration_cap=30, seed=123)
    a = run_async(prob, model, cfg)
    b = run_async(prob, model, cfg)
    exact_equal(a, b)
    assert np.array_equal(a.staleness, b.staleness)
    c = run_async(prob, model, SimConfig("async", gamma=0.04, iteration_cap=30, seed=124))
    assert not np.array_equal(a.times, c.times) or not np.array_equal(a.f_values, c.f_values)


def test_power_profile_workers_follow_profiles():
    prob = small_problem()
    profs = PowerProfiles([PowerProfile(1.0, [2.0]), PowerProfile(1.0, [0.5])])
    traj = run_sync(prob, profs, SimConfig("sync", gamma=0.1, iteration_cap=3))
    # each iteration the slow worker needs 2 seconds
    assert np.array_equal(traj.times, [0.0, 2.0, 4.0, 6.0])


def test_dead_profiles_stall_barrier_algorithms():
    prob = small_problem()
    dead = PowerProfile(1.0, [1.0, 0.0], kind="step")  # one unit then nothing
    alive = PowerProfile(1.0, [1.0])
    profs = PowerProfiles([alive, dead])
    with pytest.raises(StallError):
        run_sync(prob, profs, SimConfig("sync", gamma=0.1, iteration_cap=5))
    with pytest.raises(StallError):
        run_m_sync(prob, profs, SimConfig("msync", gamma=0.1, group_size=2,
                                          iteration_cap=5))
    # async keeps going on the live worker alone
    traj = run_async(prob, profs, SimConfig("async", gamma=0.1, iteration_cap=5))
    assert traj.updates == 5


def test_trajectory_stride_thinning_keeps_endpoints():
    prob = small_problem(d=4)
    traj = run_async(prob, FixedTimes([1.0]),
                     SimConfig("async", gamma=0.01, iteration_cap=3000,
                               record_limit=200))
    assert len(traj.times) <= 201
    assert traj.stride > 1
    assert traj.iterations[0] == 0
    assert traj.iterations[-1] == 3000
    assert np.all(np.diff(traj.times) > 0)
    assert np.all(np.diff(traj.iterations) > 0)


def test_trajectory_csv_and_sidecar(tmp_path):
    traj = run_sync(small_problem(), FixedTimes([1.0, 2.0]),
                    SimConfig("sync", gamma=0.1, iteration_cap=3, seed=4))
    out = tmp_path / "run.csv"
    traj.save_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "time,iter,f,grad_sq_norm"
    assert len(lines) == 1 + len(traj.times)
    first = lines[1].split(",")
    assert float(first[0]) == traj.times[0]
    assert float(first[2]) == traj.f_values[0]
    side = json.loads((tmp_path / "run.json").read_text())
    assert side["config"]["algorithm"] == "sync"
    assert side["config"]["seed"] == 4
    assert side["produced"] == traj.produced
    assert side["final_f"] == traj.final_f


def test_config_validation_messages():
    prob = small_problem()
    model = FixedTimes([1.0, 2.0])
    bad = [
        SimConfig("warp", gamma=0.1, iteration_cap=1),
        SimConfig("sync", gamma=0.0, iteration_cap=1),
        SimConfig("sync", gamma=0.1),
        SimConfig("sync", gamma=0.1, iteration_cap=1, group_size=2),
        SimConfig("msync", gamma=0.1, iteration_cap=1),
        SimConfig("msync", gamma=0.1, iteration_cap=1, group_size=5),
        SimConfig("sync", gamma=0.1, iteration_cap=1, batch_size=2),
        SimConfig("rennala", gamma=0.1, iteration_cap=1),
        SimConfig("sync", gamma=0.1, iteration_cap=1, staleness_clip=2.0),
        SimConfig("async", gamma=0.1, iteration_cap=1, staleness_clip=0.0),
        SimConfig("sync", gamma=0.1, iteration_cap=0),
        SimConfig("sync", gamma=0.1, time_budget=-1.0),
    ]
    for cfg in bad:
        with pytest.raises(ValueError):
            run(prob, model, cfg)


def test_async_staleness_clip_shrinks_steps():
    prob = small_problem(d=10, p=1.0)  # deterministic gradients
    model = FixedTimes([1.0, 5.0])
    plain = run_async(prob, model, SimConfig("async", gamma=0.05, iteration_cap=12, seed=0))
    clipped = run_async(prob, model, SimConfig("async", gamma=0.05, iteration_cap=12,
                                               seed=0, staleness_clip=1.0))
    assert np.array_equal(plain.times, clipped.times)
    assert np.array_equal(plain.staleness, clipped.staleness)
    assert plain.staleness.max() > 1
    assert not np.array_equal(plain.f_values, clipped.f_values)


def test_monotone_descent_with_exact_gradients():
    # p = 1 turns every algorithm into its deterministic counterpart; with a
    # small stepsize f must fall monotonically from the start point
    prob = ChainQuadratic(20, 1.0)
    traj = run_sync(prob, FixedTimes(np.linspace(1, 2, 5)),
                    SimConfig("sync", gamma=0.5, iteration_cap=40))
    assert np.all(np.diff(traj.f_values) < 0)
    assert traj.f_values[0] == prob.objective_value(prob.start_point())
