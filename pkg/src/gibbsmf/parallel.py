"""Deterministic parallel execution of per-entity sampling work.

Workers are forked processes sharing the factor matrices through
anonymous shared mappings; each worker writes only the columns of the
entities it was assigned.  All randomness is drawn from streams keyed by
(seed, iteration, mode, entity), and all cross-entity reductions are
combined at a fixed canonical granularity, so results are bit-identical
for any worker count and any task split.
"""

from __future__ import annotations

import mmap
import multiprocessing as mp
import queue
import traceback

import numpy as np

from .errors import GibbsMfError, NumericalError

_SENTINEL = None


def shared_array(shape, dtype=np.float64) -> np.ndarray:
    """Zero-filled array backed by an anonymous shared mapping.

    Forked children inherit the mapping, so writes are visible across
    processes without copies; the array keeps the mmap alive via .base.
    """
    count = int(np.prod(shape))
    buf = mmap.mmap(-1, max(count * np.dtype(dtype).itemsize, 1))
    arr = np.frombuffer(buf, dtype=dtype, count=count).reshape(shape)
    return arr


def _worker_loop(executor, task_queue, result_queue):
    while True:
        item = task_queue.get()
        if item is _SENTINEL:
            break
        task_id, task = item
        try:
            result_queue.put((task_id, executor.execute_task(task)))
        except BaseException as exc:  # propagate to the coordinator
            result_queue.put((task_id, _WorkerFailure(exc, traceback.format_exc())))


class _WorkerFailure:
    def __init__(self, exc, tb):
        self.exc = exc
        self.tb = tb


class Engine:
    """Task pool over forked workers; inline execution when workers == 0."""

    def __init__(self, executor, workers: int):
        self._executor = executor
        self._workers = max(int(workers), 0)
        self._procs = []
        self._tasks = None
        self._results = None

    @property
    def parallel(self) -> bool:
        return self._workers > 1

    def start(self) -> None:
        if not self.parallel or self._procs:
            return
        ctx = mp.get_context("fork")
        self._tasks = ctx.SimpleQueue()
        self._results = ctx.Queue()
        for _ in range(self._workers):
            p = ctx.Process(target=_worker_loop,
                            args=(self._executor, self._tasks, self._results),
                            daemon=True)
            p.start()
            self._procs.append(p)

    def execute(self, tasks: list) -> list:
        """Run tasks and return their results ordered by task index."""
        if not self.parallel:
            return [self._executor.execute_task(t) for t in tasks]
        for i, t in enumerate(tasks):
            self._tasks.put((i, t))
        out = [None] * len(tasks)
        received = 0
        while received < len(tasks):
            try:
                task_id, res = self._results.get(timeout=5.0)
            except queue.Empty:
                dead = [p.pid for p in self._procs if not p.is_alive()]
                if dead:
                    self.shutdown()
                    raise NumericalError(
                        f"worker process(es) {dead} died mid-phase"
                    ) from None
                continue
            if isinstance(res, _WorkerFailure):
                self.shutdown()
                if isinstance(res.exc, GibbsMfError):
                    raise res.exc
                raise NumericalError(f"worker failed:\n{res.tb}") from res.exc
            out[task_id] = res
            received += 1
        return out

    def shutdown(self) -> None:
        if not self._procs:
            return
        for _ in self._procs:
            self._tasks.put(_SENTINEL)
        for p in self._procs:
            p.join(timeout=10)
            if p.is_alive():
                p.terminate()
                p.join()
        self._procs = []
        self._tasks = None
        self._results = None
