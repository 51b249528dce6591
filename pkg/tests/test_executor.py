import os
import threading
import time

import numpy as np
import pytest

from pararealnet import executor as E
from pararealnet import parareal_net as P
from pararealnet import presets
from pararealnet.parallel import TaskError, run_parallel


def test_run_parallel_keeps_task_order():
    def task(i):
        def run():
            time.sleep(0.002 * (5 - i))  # later tasks finish first
            return i * i
        return run
    for workers in (1, 4):
        results, durations = run_parallel([task(i) for i in range(5)], workers)
        assert results == [0, 1, 4, 9, 16]
        assert len(durations) == 5 and all(d >= 0 for d in durations)


def test_run_parallel_reports_failing_index():
    def boom():
        raise RuntimeError("nope")
    for workers in (1, 3):
        with pytest.raises(TaskError) as info:
            run_parallel([lambda: 1, boom, lambda: 3], workers)
        assert info.value.index == 1 and isinstance(info.value.cause, RuntimeError)


def test_run_parallel_uses_threads_when_asked():
    seen = set()
    barrier = threading.Barrier(2, timeout=5)

    def task():
        seen.add(threading.get_ident())
        barrier.wait()  # deadlocks (and times out) unless two tasks run at once
    run_parallel([task, task], 2)
    assert len(seen) == 2


@pytest.mark.benchmark
@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="speed-up needs at least 4 cores")
def test_parallel_speedup_on_multicore():
    def work():
        a = np.random.default_rng(0).standard_normal((300, 300))
        for _ in range(20):
            a = np.tanh(a @ a.T / 300)
        return a
    t0 = time.perf_counter()
    run_parallel([work] * 4, 4)
    wall = time.perf_counter() - t0
    _, durations = run_parallel([work] * 4, 1)
    assert wall < 0.5 * sum(durations)


def test_relative_speedup():
    assert E.relative_speedup(5.0, 5.0) == 0.0
    assert abs(E.relative_speedup(81893, 59318) - 27.6) <= 0.05
    assert abs(E.relative_speedup(81893, 327406) - (-299.8)) <= 0.05
    with pytest.raises(ValueError):
        E.relative_speedup(0.0, 1.0)


@pytest.fixture(scope="module")
def balanced():
    return presets.toy_resnet((3, 16, 16), blocks=24, stages=1, width=2)


def _batch(src, n=4):
    rng = np.random.default_rng(0)
    return rng.standard_normal((n,) + src.input_shape), rng.integers(0, 10, n)


def test_cost_mode_stage_scaling(balanced):
    batch = _batch(balanced)
    ref = E.timed_step(P.build_parareal(balanced, 1), batch, mode="cost")
    assert ref.forward["coarse_network"] == 0 and ref.unit == "mac"
    last = ref.forward["parallel_subnetworks"]
    for N in (2, 3, 4, 6, 8, 12):
        rep = E.timed_step(P.build_parareal(balanced, N), batch, mode="cost")
        par = rep.forward["parallel_subnetworks"]
        assert par * 24 == ref.forward["parallel_subnetworks"] * -(-24 // N)
        assert par <= last
        last = par
        for d in (rep.forward, rep.backward):
            assert d["total"] == sum(d[s] for s in E.STAGES)
        assert rep.backward["parallel_subnetworks"] == 2 * par


def test_wall_mode_report(balanced):
    batch = _batch(balanced)
    rep = E.timed_step(P.build_parareal(balanced, 1), batch, workers=1)
    assert rep.unit == "ms" and rep.forward["coarse_network"] < 1.0
    assert rep.forward["total"] == sum(rep.forward[s] for s in E.STAGES)
    rep3 = E.timed_step(P.build_parareal(balanced, 3), batch, workers=2)
    assert rep3.forward["total"] == sum(rep3.forward[s] for s in E.STAGES)
    assert set(rep3.parallel_wall) == {"forward", "backward"}
    with pytest.raises(ValueError):
        E.timed_step(P.build_parareal(balanced, 1), batch, mode="sundial")


@pytest.mark.benchmark
def test_wall_parallel_stage_shrinks(balanced):
    batch = _batch(balanced, 16)
    E.timed_step(P.build_parareal(balanced, 1), batch)  # warm-up
    t1 = min(E.timed_step(P.build_parareal(balanced, 1), batch).forward["parallel_subnetworks"]
             for _ in range(2))
    t4 = min(E.timed_step(P.build_parareal(balanced, 4), batch).forward["parallel_subnetworks"]
             for _ in range(2))
    assert t4 <= 0.35 * t1


def test_timing_csv(tmp_path, balanced):
    rep = E.timed_step(P.build_parareal(balanced, 2), _batch(balanced), mode="cost")
    path = tmp_path / "t.csv"
    E.write_timing_csv(path, rep)
    lines = path.read_text().splitlines()
    assert lines[0] == "stage,forward_ms,backward_ms"
    assert [ln.split(",")[0] for ln in lines[1:]] == list(E.STAGES) + ["total"]
