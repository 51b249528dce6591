"""Fork-join execution of independent tasks on a fixed thread pool.

Results always come back in task order, so numerical outputs never depend on
how the scheduler interleaved the work.
"""

from concurrent.futures import ThreadPoolExecutor
import threading
import time

_pools = {}
_pools_lock = threading.Lock()


class TaskError(RuntimeError):
    """A task in a parallel batch raised; ``index`` says which one."""

    def __init__(self, index, cause):
        super().__init__(f"task {index} failed: {cause!r}")
        self.index = index
        self.cause = cause


def _pool(workers):
    with _pools_lock:
        pool = _pools.get(workers)
        if pool is None:
            pool = _pools[workers] = ThreadPoolExecutor(
                max_workers=workers, thread_name_prefix=f"pararealnet-{workers}"
            )
        return pool


def _timed(task):
    t0 = time.perf_counter()
    out = task()
    return out, time.perf_counter() - t0


def run_parallel(tasks, workers=1):
    """Run zero-argument callables, ``workers`` at a time.

    Returns ``(results, durations)`` in task order; durations are seconds.
    A failing task cancels whatever has not started yet and raises
    :class:`TaskError` carrying the task index.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        results, durations = [], []
        for i, task in enumerate(tasks):
            try:
                out, dt = _timed(task)
            except Exception as exc:
                raise TaskError(i, exc) from exc
            results.append(out)
            durations.append(dt)
        return results, durations

    futures = [_pool(workers).submit(_timed, t) for t in tasks]
    results, durations = [], []
    for i, fut in enumerate(futures):
        try:
            out, dt = fut.result()
        except Exception as exc:
            for other in futures[i + 1 :]:
                other.cancel()
            raise TaskError(i, exc) from exc
        results.append(out)
        durations.append(dt)
    return results, durations
