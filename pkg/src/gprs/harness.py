"""Benchmark runner: timed repetitions, summary statistics, plot data.

Two experiments are timed end to end (covariance assembly plus the full
pipeline; dataset I/O and pool startup are excluded):

* ``opt``       - a configurable number of Adam iterations of the
                  hyperparameter optimization loop
* ``pred_full`` - prediction with the full posterior covariance matrix

Each configuration gets one untimed warm-up run (JIT compilation, allocator
and cache warm-up) and then ``reps`` timed repetitions. Runtimes are
summarized as mean plus a 95% Student-t confidence half-width; strong-scaling
groups additionally get speedup S(p) = mean(1 worker)/mean(p workers) and
efficiency E(p) = S(p)/p.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import scipy.stats

from .gp import DEFAULT_THETA, GpEngine
from .kernels import Dataset
from .runtime import PoolConfig, start_pool
from .simulator import MsdConfig, make_dataset, simulate, steps_for_samples

EXPERIMENTS = ("opt", "pred_full")

CSV_HEADER = [
    "experiment", "n_train", "n_test", "tiles", "workers",
    "backend", "rep", "wall_seconds", "tasks",
]


@dataclass(frozen=True)
class BenchRecord:
    """One timed repetition of one benchmark configuration."""

    experiment: str
    n_train: int
    n_test: int
    tiles_per_dim: int
    workers: int
    backend: str
    rep: int
    wall_seconds: float
    tasks_executed: int


def write_records(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([
                r.experiment, r.n_train, r.n_test, r.tiles_per_dim, r.workers,
                r.backend, r.rep, repr(r.wall_seconds), r.tasks_executed,
            ])


def read_records(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        for row in reader:
            records.append(BenchRecord(
                experiment=row[0], n_train=int(row[1]), n_test=int(row[2]),
                tiles_per_dim=int(row[3]), workers=int(row[4]), backend=row[5],
                rep=int(row[6]), wall_seconds=float(row[7]),
                tasks_executed=int(row[8]),
            ))
    return records


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupSummary:
    """Aggregated repetitions of one configuration."""

    experiment: str
    n_train: int
    n_test: int
    tiles_per_dim: int
    workers: int
    backend: str
    n_reps: int
    mean_seconds: float
    ci95: float  # half-width; NaN when undefined (single sample)
    speedup: float | None = None
    efficiency: float | None = None


@dataclass
class ScalingSummary:
    groups: list[GroupSummary]


def _mean_ci(values):
    """Mean and 95% t-interval half-width of a sample.

    Values are summed in ascending order so the result is independent of
    input permutation. A single sample has no variance estimate: ci is NaN.
    """
    xs = sorted(values)
    n = len(xs)
    total = 0.0
    for v in xs:
        total += v
    mean = total / n
    if n < 2:
        return mean, math.nan
    sq = 0.0
    for v in xs:
        sq += (v - mean) ** 2
    s = math.sqrt(sq / (n - 1))
    t = float(scipy.stats.t.ppf(0.975, n - 1))
    return mean, t * s / math.sqrt(n)


def summarize(records) -> ScalingSummary:
    """Group records by configuration and aggregate.

    Speedup/efficiency are filled in relative to the matching one-worker
    group when it exists.
    """
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple, list[float]] = {}
    for r in records:
        key = (r.experiment, r.n_train, r.n_test, r.tiles_per_dim,
               r.workers, r.backend)
        groups.setdefault(key, []).append(r.wall_seconds)

    means = {}
    for key, vals in groups.items():
        means[key] = _mean_ci(vals)

    out = []
    for key in sorted(groups):
        exp, n_train, n_test, tiles, workers, backend = key
        mean, ci = means[key]
        base_key = (exp, n_train, n_test, tiles, 1, backend)
        speedup = efficiency = None
        if base_key in means:
            speedup = means[base_key][0] / mean
            efficiency = speedup / workers
        out.append(GroupSummary(
            experiment=exp, n_train=n_train, n_test=n_test,
            tiles_per_dim=tiles, workers=workers, backend=backend,
            n_reps=len(groups[key]), mean_seconds=mean, ci95=ci,
            speedup=speedup, efficiency=efficiency,
        ))
    return ScalingSummary(groups=out)


# ---------------------------------------------------------------------------
# timed runs
# ---------------------------------------------------------------------------


def _run_experiment(engine, experiment, train, test, theta, opt_iters):
    if experiment == "pred_full":
        engine.predict_full_cov(train, test, theta)
    elif experiment == "opt":
        engine.optimize(train, theta0=theta, iters=opt_iters)
    else:
        raise ValueError(f"unknown experiment {experiment!r}; "
                         f"expected one of {EXPERIMENTS}")


def benchmark_config(*, experiment, train, test, workers, tiles, backend,
                     reps, opt_iters=1, theta=None, trace_path=None,
                     log=None):
    """Run one configuration in a fresh pool; returns its BenchRecords."""
    theta = theta or DEFAULT_THETA
    rt = start_pool(PoolConfig(
        worker_count=workers,
        trace=trace_path is not None,
        trace_path=trace_path,
    ))
    try:
        engine = GpEngine(rt, tiles_per_dim=tiles, backend=backend)
        _run_experiment(engine, experiment, train, test, theta, opt_iters)  # warm-up
        records = []
        for rep in range(1, reps + 1):
            before = rt.tasks_executed()
            t0 = time.perf_counter()
            _run_experiment(engine, experiment, train, test, theta, opt_iters)
            wall = time.perf_counter() - t0
            records.append(BenchRecord(
                experiment=experiment, n_train=train.n,
                n_test=test.n if test is not None else 0,
                tiles_per_dim=tiles, workers=workers,
                backend=engine.backend_name, rep=rep, wall_seconds=wall,
                tasks_executed=rt.tasks_executed() - before,
            ))
            if log:
                log(f"  {experiment} n={train.n} tiles={tiles} "
                    f"workers={workers} rep={rep}/{reps}: {wall:.4f}s")
    finally:
        rt.shutdown()
    return records


def strong_scaling(*, train, test, workers_list, tiles, reps, experiment,
                   backend="reference", opt_iters=1, theta=None, trace=False,
                   log=None):
    """Fixed problem, varying worker count; pool restarted per configuration."""
    if not workers_list:
        raise ValueError("workers_list must not be empty")
    records = []
    for workers in workers_list:
        trace_path = f"gprs-trace-{experiment}-w{workers}.txt" if trace else None
        records.extend(benchmark_config(
            experiment=experiment, train=train, test=test, workers=workers,
            tiles=tiles, backend=backend, reps=reps, opt_iters=opt_iters,
            theta=theta, trace_path=trace_path, log=log,
        ))
    return records, summarize(records)


DEFAULT_TILES_SCHEDULE = ((256, 1), (2048, 4), (math.inf, 16))


def tiles_for_size(n, schedule=DEFAULT_TILES_SCHEDULE):
    """Tiles per dimension for a problem size, from a threshold schedule."""
    for limit, tiles in schedule:
        if n <= limit:
            return min(tiles, n)
    return min(schedule[-1][1], n)


def parse_tiles_schedule(text) -> tuple:
    """Parse 'limit:tiles,...' with 'inf' allowed as the last limit."""
    entries = []
    for part in text.split(","):
        try:
            limit_s, tiles_s = part.split(":")
            limit = math.inf if limit_s.strip() == "inf" else int(limit_s)
            entries.append((limit, int(tiles_s)))
        except ValueError:
            raise ValueError(
                f"bad tiles schedule entry {part!r}; expected limit:tiles"
            ) from None
    if not entries:
        raise ValueError("empty tiles schedule")
    entries.sort(key=lambda e: e[0])
    return tuple(entries)


def generate_size_pair(n_train, n_test, seed, window=3, stride=50):
    """Train/test datasets carved from one simulated series."""
    n_samples = n_train + n_test
    cfg = MsdConfig(n_steps=steps_for_samples(n_samples, window, stride),
                    seed=seed)
    u, x = simulate(cfg)
    ds, _ = make_dataset(u, x, window, stride)
    train = Dataset(features=ds.features[:n_train],
                    observations=ds.observations[:n_train])
    test = Dataset(features=ds.features[n_train:n_samples],
                   observations=ds.observations[n_train:n_samples])
    return train, test


def size_scaling(*, sizes, schedule, workers, reps, experiment,
                 backend="reference", opt_iters=1, seed=42, theta=None,
                 log=None):
    """Varying problem size with the tiles-per-dimension switching schedule."""
    if not sizes:
        raise ValueError("sizes must not be empty")
    for a, b in zip(sizes, sizes[1:]):
        if b <= a:
            raise ValueError("sizes must be strictly ascending")
    for n in sizes:
        if n < 1 or (n & (n - 1)) != 0:
            raise ValueError(f"sizes must be powers of two, got {n}")
    records = []
    for n in sizes:
        tiles = tiles_for_size(n, schedule)
        train, test = generate_size_pair(n, n, seed)
        records.extend(benchmark_config(
            experiment=experiment, train=train, test=test, workers=workers,
            tiles=tiles, backend=backend, reps=reps, opt_iters=opt_iters,
            theta=theta, log=log,
        ))
    return records, summarize(records)


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return "nan"
    return repr(float(v))


def emit_plotdata(summary: ScalingSummary, out_dir, mode: str):
    """Write whitespace-separated plot files plus gnuplot script stubs.

    mode 'strong': x = workers, columns workers mean ci95 speedup efficiency.
    mode 'size':   x = n_train (log-log axes), columns n mean ci95 tiles.
    """
    if mode not in ("strong", "size"):
        raise ValueError(f"mode must be 'strong' or 'size', got {mode!r}")
    if not summary.groups:
        raise ValueError("empty summary")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    experiments = sorted({g.experiment for g in summary.groups})
    for exp in experiments:
        rows = [g for g in summary.groups if g.experiment == exp]
        stem = f"{mode}_scaling_{exp}"
        dat = out_dir / f"{stem}.dat"
        with open(dat, "w") as fh:
            if mode == "strong":
                fh.write("# workers mean_seconds ci95 speedup efficiency\n")
                for g in sorted(rows, key=lambda g: g.workers):
                    fh.write(
                        f"{g.workers} {_fmt(g.mean_seconds)} {_fmt(g.ci95)} "
                        f"{_fmt(g.speedup)} {_fmt(g.efficiency)}\n"
                    )
            else:
                fh.write("# n_train mean_seconds ci95 tiles\n")
                for g in sorted(rows, key=lambda g: g.n_train):
                    fh.write(
                        f"{g.n_train} {_fmt(g.mean_seconds)} {_fmt(g.ci95)} "
                        f"{g.tiles_per_dim}\n"
                    )
        gp = out_dir / f"{stem}.gp"
        with open(gp, "w") as fh:
            fh.write("set terminal pngcairo size 800,600\n")
            fh.write(f"set output '{stem}.png'\n")
            fh.write("set datafile missing 'nan'\n")
            fh.write("set ylabel 'runtime [s]'\n")
            if mode == "strong":
                fh.write("set xlabel 'workers'\n")
                fh.write("set logscale y\n")
            else:
                fh.write("set xlabel 'problem size N'\n")
                fh.write("set logscale xy\n")
            fh.write(
                f"plot '{stem}.dat' using 1:2:3 with yerrorlines "
                f"title '{exp} mean with 95% CI'\n"
            )
        written.extend([dat, gp])
    return written
