"""Futures-based asynchronous task runtime with a work-stealing thread pool.

A task submitted through :meth:`RuntimeHandle.dataflow` becomes runnable once
all of its input futures have resolved, and its own future resolves with the
task body's return value. Dependency graphs are built simply by passing
futures of earlier tasks to later ones; cycles are impossible because a
future exists before anything can consume it.

Scheduling discipline: one deque per worker plus a shared inject queue for
submissions from outside the pool. Workers pop their own deque LIFO (good
locality: a finished tile's consumers run next) and steal from other deques
FIFO. Because task bodies are pure functions of their inputs and every
accumulation order is fixed by the dependency chain rather than by timing,
results are value-identical for any worker count.

Task bodies must never block on futures; :meth:`RuntimeHandle.wait` enforces
this and may only be called from outside the pool. BLAS threading is pinned
to one thread per call while a pool is running, since parallelism lives
between tasks, not inside kernels.
"""

from __future__ import annotations

import os
import threading
import time
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - threadpoolctl is a declared dep
    threadpool_limits = None

_PENDING, _READY, _FAILED = 0, 1, 2


class TaskFuture:
    """Handle to an asynchronously produced value; resolves exactly once."""

    __slots__ = ("id", "_state", "_value", "_error", "_dependents", "_event")

    def __init__(self, fid: int):
        self.id = fid
        self._state = _PENDING
        self._value = None
        self._error = None
        self._dependents = []
        self._event = threading.Event()

    @property
    def state(self) -> str:
        return ("pending", "ready", "failed")[self._state]

    def done(self) -> bool:
        return self._state != _PENDING


class _Task:
    __slots__ = ("tid", "fn", "deps", "out", "kind", "coords", "n_pending", "state")

    # state: 0 waiting on deps, 1 queued/running, 2 finished, 3 cancelled
    def __init__(self, tid, fn, deps, out, kind, coords):
        self.tid = tid
        self.fn = fn
        self.deps = deps
        self.out = out
        self.kind = kind
        self.coords = coords
        self.n_pending = 0
        self.state = 0


@dataclass(frozen=True)
class PoolConfig:
    """Worker pool configuration."""

    worker_count: int
    trace: bool = False
    trace_path: str | Path | None = None


@dataclass(frozen=True)
class TraceRecord:
    """One executed task, with dependency ids for ordering checks."""

    task_id: int
    kind: str
    coords: tuple | None
    worker: int
    t_start_ns: int
    t_end_ns: int
    dep_ids: tuple
    ok: bool


@dataclass
class RuntimeStats:
    """Accounting returned by shutdown."""

    tasks_executed: int
    per_worker: list[int]
    per_kind: dict[str, int]
    wall_seconds: float


def _coords_str(coords) -> str:
    if coords is None:
        return "-"
    if isinstance(coords, tuple):
        return ":".join(str(c) for c in coords)
    return str(coords)


class RuntimeHandle:
    """A started worker pool scoping task submission and synchronization."""

    def __init__(self, cfg: PoolConfig):
        if cfg.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {cfg.worker_count}")
        self.cfg = cfg
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._deques = [deque() for _ in range(cfg.worker_count)]
        self._inject = deque()
        self._threads = []
        self._worker_idents = {}
        self._next_id = 0
        self._stop = False
        self._started = False
        self._shut_down = False
        self._executed = 0
        self._per_worker = [0] * cfg.worker_count
        self._per_kind = {}
        self._trace = [] if cfg.trace else None
        self._t_start = None
        self._blas_limiter = None

    # -- lifecycle ---------------------------------------------------------

    def start(self):
        if self._started:
            raise RuntimeError("pool already started")
        self._started = True
        ncpu = os.cpu_count() or 1
        if self.cfg.worker_count > ncpu:
            warnings.warn(
                f"worker_count {self.cfg.worker_count} exceeds the "
                f"{ncpu} available hardware threads; expect degraded scaling",
                stacklevel=3,
            )
        if threadpool_limits is not None:
            # tile kernels are sequential by contract; keep BLAS that way too
            self._blas_limiter = threadpool_limits(limits=1, user_api="blas")
        self._t_start = time.perf_counter()
        for wid in range(self.cfg.worker_count):
            t = threading.Thread(
                target=self._run_worker, args=(wid,), name=f"gprs-worker-{wid}", daemon=True
            )
            self._threads.append(t)
            t.start()
        return self

    def shutdown(self) -> RuntimeStats:
        """Join workers and return execution statistics.

        Outstanding unfinished tasks are abandoned; wait on everything you
        care about first.
        """
        with self._cond:
            if self._shut_down:
                raise RuntimeError("pool already shut down")
            self._shut_down = True
            self._stop = True
            self._cond.notify_all()
        for t in self._threads:
            t.join()
        wall = time.perf_counter() - self._t_start if self._t_start else 0.0
        if self._blas_limiter is not None:
            self._blas_limiter.unregister()
            self._blas_limiter = None
        if self.cfg.trace and self._trace is not None:
            self._write_trace_file()
        return RuntimeStats(
            tasks_executed=self._executed,
            per_worker=list(self._per_worker),
            per_kind=dict(self._per_kind),
            wall_seconds=wall,
        )

    def _write_trace_file(self):
        path = Path(self.cfg.trace_path or "gprs-trace.txt")
        with open(path, "w") as fh:
            for r in self._trace:
                fh.write(
                    f"{r.task_id},{r.kind},{_coords_str(r.coords)},"
                    f"{r.worker},{r.t_start_ns},{r.t_end_ns}\n"
                )

    # -- submission --------------------------------------------------------

    def ready(self, value) -> TaskFuture:
        """A pre-resolved future wrapping an existing value (not a task)."""
        with self._lock:
            f = TaskFuture(self._next_id)
            self._next_id += 1
        f._value = value
        f._state = _READY
        f._event.set()
        return f

    def dataflow(self, fn, deps=(), kind: str = "task", coords=None) -> TaskFuture:
        """Schedule fn(*resolved dep values) once every dependency resolves."""
        deps = tuple(deps)
        with self._cond:
            if self._shut_down:
                raise RuntimeError("cannot submit tasks to a shut-down pool")
            out = TaskFuture(self._next_id)
            self._next_id += 1
            # the task shares its output future's id, so trace records can be
            # joined to their producers through dep_ids
            task = _Task(out.id, fn, deps, out, kind, coords)
            failed = None
            n_pending = 0
            for d in deps:
                if d._state == _PENDING:
                    d._dependents.append(task)
                    n_pending += 1
                elif d._state == _FAILED and failed is None:
                    failed = d
            task.n_pending = n_pending
            if failed is not None:
                task.state = 3
                self._fail_future_locked(out, failed._error)
            elif n_pending == 0:
                self._enqueue_locked(task, None)
                self._cond.notify()
        return out

    # -- synchronization ----------------------------------------------------

    def wait(self, f: TaskFuture, timeout: float | None = None):
        """Block until f resolves; returns its value or raises its error.

        With a timeout (seconds), raises TimeoutError if the future is still
        pending when it expires.
        """
        if threading.get_ident() in self._worker_idents:
            raise RuntimeError(
                "wait() called from inside a task body; express the "
                "dependency through dataflow() instead"
            )
        deadline = None if timeout is None else time.monotonic() + timeout
        while not f._event.wait(0.05):
            if self._shut_down and f._state == _PENDING:
                raise RuntimeError("future abandoned by pool shutdown")
            if deadline is not None and time.monotonic() > deadline:
                raise TimeoutError(f"future {f.id} still pending after {timeout}s")
        if f._state == _FAILED:
            raise f._error
        return f._value

    def wait_all(self, fs, timeout: float | None = None):
        return [self.wait(f, timeout) for f in fs]

    def tasks_executed(self) -> int:
        """Snapshot of the number of task bodies run so far."""
        with self._lock:
            return self._executed

    def trace_records(self) -> list[TraceRecord]:
        with self._lock:
            return list(self._trace) if self._trace is not None else []

    # -- internals -----------------------------------------------------------

    def _enqueue_locked(self, task, wid):
        task.state = 1
        if wid is None:
            self._inject.append(task)
        else:
            self._deques[wid].append(task)

    def _take_locked(self, wid):
        local = self._deques[wid]
        if local:
            return local.pop()  # LIFO
        if self._inject:
            return self._inject.popleft()  # FIFO
        n = len(self._deques)
        for off in range(1, n):
            victim = self._deques[(wid + off) % n]
            if victim:
                return victim.popleft()  # FIFO steal
        return None

    def _resolve_future_locked(self, f, value, wid):
        f._value = value
        f._state = _READY
        woken = 0
        for task in f._dependents:
            task.n_pending -= 1
            if task.n_pending == 0 and task.state == 0:
                self._enqueue_locked(task, wid)
                woken += 1
        f._dependents.clear()
        f._event.set()
        if woken:
            self._cond.notify(woken)

    def _fail_future_locked(self, f, error):
        # iterative cascade: consumers of a failed future fail without running
        stack = [(f, error)]
        while stack:
            fut, err = stack.pop()
            if fut._state != _PENDING:
                continue
            fut._error = err
            fut._state = _FAILED
            for task in fut._dependents:
                if task.state == 0:
                    task.state = 3
                    stack.append((task.out, err))
            fut._dependents.clear()
            fut._event.set()

    def _run_worker(self, wid):
        self._worker_idents[threading.get_ident()] = wid
        while True:
            with self._cond:
                task = self._take_locked(wid)
                while task is None:
                    if self._stop:
                        return
                    self._cond.wait()
                    task = self._take_locked(wid)
            self._execute(task, wid)

    def _execute(self, task, wid):
        args = [d._value for d in task.deps]
        t0 = time.perf_counter_ns()
        try:
            value = task.fn(*args)
            err = None
        except BaseException as exc:
            value = None
            err = exc
        t1 = time.perf_counter_ns()
        with self._cond:
            task.state = 2
            self._executed += 1
            self._per_worker[wid] += 1
            self._per_kind[task.kind] = self._per_kind.get(task.kind, 0) + 1
            if self._trace is not None:
                self._trace.append(
                    TraceRecord(
                        task_id=task.tid,
                        kind=task.kind,
                        coords=task.coords,
                        worker=wid,
                        t_start_ns=t0,
                        t_end_ns=t1,
                        dep_ids=tuple(d.id for d in task.deps),
                        ok=err is None,
                    )
                )
            if err is None:
                self._resolve_future_locked(task.out, value, wid)
            else:
                self._fail_future_locked(task.out, err)


def start_pool(cfg: PoolConfig) -> RuntimeHandle:
    """Start a worker pool and return the handle scoping all submissions."""
    return RuntimeHandle(cfg).start()
