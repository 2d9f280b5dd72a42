"""Command-line driver: dataset generation, demos, and scaling benchmarks.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 I/O error.
``GPRS_WORKERS`` is used as the worker-count fallback when --workers is not
given.
"""

from __future__ import annotations

import argparse
import os
import sys

from .gp import DEFAULT_THETA, AdamRates, GpEngine
from .harness import (
    EXPERIMENTS,
    DEFAULT_TILES_SCHEDULE,
    emit_plotdata,
    parse_tiles_schedule,
    size_scaling,
    strong_scaling,
    write_records,
)
from .kernels import Hyperparameters
from .runtime import PoolConfig, start_pool
from .simulator import (
    DatasetFormatError,
    MsdConfig,
    SimulationUnstableError,
    load_dataset,
    make_dataset,
    save_dataset,
    simulate,
    steps_for_samples,
)
from .tile_blas import FactorizationError


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"{text!r} is not a comma-separated integer list"
        ) from None


def _theta(text):
    try:
        l, nu, s2 = (float(x) for x in text.split(","))
        return Hyperparameters(l, nu, s2)
    except ValueError as e:
        raise argparse.ArgumentTypeError(
            f"bad hyperparameters {text!r}: {e}"
        ) from None


def _default_workers():
    env = os.environ.get("GPRS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def _add_engine_flags(p, default_tiles=16):
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="worker threads (default: GPRS_WORKERS or cpu count)")
    p.add_argument("--tiles", type=_positive_int, default=default_tiles,
                   help="tiles per matrix dimension")
    p.add_argument("--backend", choices=("reference", "system"),
                   default="reference", help="per-tile kernel backend")
    p.add_argument("--trace", action="store_true",
                   help="write a task trace file (gprs-trace*.txt)")


def build_parser():
    p = argparse.ArgumentParser(
        prog="gprs",
        description="Tiled task-parallel Gaussian process regression "
                    "benchmark and demo driver.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate",
                       help="simulate the mass-spring-damper system and "
                            "write a dataset file")
    g.add_argument("--n", type=_positive_int, required=True,
                   help="number of regression samples")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--window", type=_positive_int, default=3,
                   help="feature window length D")
    g.add_argument("--stride", type=_positive_int, default=50,
                   help="steps between samples and between window taps")
    g.add_argument("--mass", type=float, default=1.0)
    g.add_argument("--damping", type=float, default=1.0)
    g.add_argument("--stiffness", type=float, default=2.0)
    g.add_argument("--cubic", type=float, default=1.0,
                   help="cubic stiffness (nonlinearity)")
    g.add_argument("--dt", type=float, default=0.01)
    g.add_argument("--amplitude", type=float, default=1.0,
                   help="force amplitude A; steps drawn uniform in [-A, A]")
    g.add_argument("--hold", type=_positive_int, default=50,
                   help="steps each random force level is held")
    g.add_argument("-o", "--out", required=True, help="output dataset file")

    ss = sub.add_parser("strong-scaling",
                        help="fixed problem size, varying worker count")
    ss.add_argument("--train", required=True)
    ss.add_argument("--test", required=True)
    ss.add_argument("--workers", type=_int_list, default=None,
                    help="comma-separated worker counts, e.g. 1,2,4")
    ss.add_argument("--tiles", type=_positive_int, default=16)
    ss.add_argument("--reps", type=_positive_int, default=10)
    ss.add_argument("--experiment", choices=EXPERIMENTS, default="pred_full")
    ss.add_argument("--backend", choices=("reference", "system"),
                    default="reference")
    ss.add_argument("--opt-iters", type=_positive_int, default=1,
                    help="Adam iterations timed per repetition (opt experiment)")
    ss.add_argument("--out", default="strong-scaling.csv")
    ss.add_argument("--plot-dir", default=None)
    ss.add_argument("--trace", action="store_true")

    zz = sub.add_parser("size-scaling",
                        help="varying problem size with a tiles-per-dimension "
                             "switching schedule")
    zz.add_argument("--sizes", type=_int_list,
                    default=[2**k for k in range(3, 11)],
                    help="ascending powers of two, e.g. 8,16,32")
    zz.add_argument("--tiles-schedule", default="256:1,2048:4,inf:16",
                    help="limit:tiles pairs; sizes up to the limit use that "
                         "tile count")
    zz.add_argument("--workers", type=_positive_int, default=None)
    zz.add_argument("--reps", type=_positive_int, default=10)
    zz.add_argument("--experiment", choices=EXPERIMENTS, default="pred_full")
    zz.add_argument("--backend", choices=("reference", "system"),
                    default="reference")
    zz.add_argument("--opt-iters", type=_positive_int, default=1)
    zz.add_argument("--seed", type=int, default=42)
    zz.add_argument("--out", default="size-scaling.csv")
    zz.add_argument("--plot-dir", default=None)

    pr = sub.add_parser("predict", help="predict at test inputs")
    pr.add_argument("--train", required=True)
    pr.add_argument("--test", required=True)
    kind = pr.add_mutually_exclusive_group()
    kind.add_argument("--uncertainty", action="store_true",
                      help="also compute per-point predictive variance")
    kind.add_argument("--full-cov", action="store_true",
                      help="also compute the full posterior covariance")
    pr.add_argument("--theta", type=_theta, default=None,
                    help="hyperparameters as l,nu,sigma2")
    pr.add_argument("--out", default=None,
                    help="write predictions here instead of stdout")
    _add_engine_flags(pr)

    op = sub.add_parser("optimize", help="fit hyperparameters with Adam")
    op.add_argument("--train", required=True)
    op.add_argument("--opt-iters", type=_positive_int, default=20)
    op.add_argument("--theta0", type=_theta, default=None,
                    help="initial hyperparameters as l,nu,sigma2")
    op.add_argument("--alpha", type=float, default=0.1, help="Adam step size")
    op.add_argument("--out", default=None, help="write the loss trace here")
    _add_engine_flags(op)

    return p


def _cmd_generate(args):
    cfg = MsdConfig(
        mass=args.mass, damping=args.damping, stiffness=args.stiffness,
        cubic_stiffness=args.cubic, dt=args.dt,
        n_steps=steps_for_samples(args.n, args.window, args.stride),
        force_amplitude=args.amplitude, force_hold_steps=args.hold,
        seed=args.seed,
    )
    u, x = simulate(cfg)
    ds, std = make_dataset(u, x, args.window, args.stride)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: N={ds.n} D={ds.d}")
    feat_means = " ".join(f"{v:.6g}" for v in std.z_mean)
    feat_stds = " ".join(f"{v:.6g}" for v in std.z_std)
    print(f"standardization: y_mean={std.y_mean:.6g} y_std={std.y_std:.6g}")
    print(f"feature means: {feat_means}")
    print(f"feature stds:  {feat_stds}")
    return 0


def _print_summary(summary):
    print("experiment n_train tiles workers reps mean[s] ci95 speedup efficiency")
    for g in summary.groups:
        sp = f"{g.speedup:.3f}" if g.speedup is not None else "-"
        ef = f"{g.efficiency:.3f}" if g.efficiency is not None else "-"
        print(f"{g.experiment} {g.n_train} {g.tiles_per_dim} {g.workers} "
              f"{g.n_reps} {g.mean_seconds:.5f} {g.ci95:.5f} {sp} {ef}")


def _cmd_strong_scaling(args):
    train = load_dataset(args.train)
    test = load_dataset(args.test)
    workers_list = args.workers or [_default_workers()]
    records, summary = strong_scaling(
        train=train, test=test, workers_list=workers_list, tiles=args.tiles,
        reps=args.reps, experiment=args.experiment, backend=args.backend,
        opt_iters=args.opt_iters, trace=args.trace, log=print,
    )
    write_records(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    _print_summary(summary)
    if args.plot_dir:
        for f in emit_plotdata(summary, args.plot_dir, "strong"):
            print(f"wrote {f}")
    return 0


def _cmd_size_scaling(args):
    schedule = (parse_tiles_schedule(args.tiles_schedule)
                if args.tiles_schedule else DEFAULT_TILES_SCHEDULE)
    workers = args.workers or _default_workers()
    records, summary = size_scaling(
        sizes=args.sizes, schedule=schedule, workers=workers, reps=args.reps,
        experiment=args.experiment, backend=args.backend,
        opt_iters=args.opt_iters, seed=args.seed, log=print,
    )
    write_records(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    _print_summary(summary)
    if args.plot_dir:
        for f in emit_plotdata(summary, args.plot_dir, "size"):
            print(f"wrote {f}")
    return 0


def _cmd_predict(args):
    train = load_dataset(args.train)
    test = load_dataset(args.test)
    theta = args.theta or DEFAULT_THETA
    rt = start_pool(PoolConfig(
        worker_count=args.workers or _default_workers(),
        trace=args.trace, trace_path="gprs-trace-predict.txt",
    ))
    try:
        engine = GpEngine(rt, tiles_per_dim=args.tiles, backend=args.backend)
        if args.full_cov:
            res = engine.predict_full_cov(train, test, theta)
        elif args.uncertainty:
            res = engine.predict_with_uncertainty(train, test, theta)
        else:
            res = engine.predict(train, test, theta)
    finally:
        rt.shutdown()

    lines = []
    if res.variance is not None:
        lines.append("# mean variance")
        for m, v in zip(res.mean, res.variance):
            lines.append(f"{m!r} {v!r}")
    else:
        lines.append("# mean")
        for m in res.mean:
            lines.append(f"{m!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {len(res.mean)} predictions to {args.out}")
        if res.full_cov is not None:
            cov_path = args.out + ".cov"
            with open(cov_path, "w") as fh:
                for row in res.full_cov:
                    fh.write(" ".join(repr(v) for v in row) + "\n")
            print(f"wrote posterior covariance to {cov_path}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_optimize(args):
    train = load_dataset(args.train)
    theta0 = args.theta0 or DEFAULT_THETA
    rt = start_pool(PoolConfig(
        worker_count=args.workers or _default_workers(),
        trace=args.trace, trace_path="gprs-trace-optimize.txt",
    ))
    try:
        engine = GpEngine(rt, tiles_per_dim=args.tiles, backend=args.backend)
        theta, trace = engine.optimize(
            train, theta0=theta0, iters=args.opt_iters,
            rates=AdamRates(alpha=args.alpha),
        )
    finally:
        rt.shutdown()
    for it, loss in enumerate(trace):
        print(f"iter {it}: loss {loss:.8f}")
    print(f"final hyperparameters: length_scale={theta.length_scale:.6g} "
          f"signal_variance={theta.signal_variance:.6g} "
          f"noise_variance={theta.noise_variance:.6g}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("# iter loss\n")
            for it, loss in enumerate(trace):
                fh.write(f"{it} {loss!r}\n")
        print(f"wrote loss trace to {args.out}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "strong-scaling": _cmd_strong_scaling,
    "size-scaling": _cmd_size_scaling,
    "predict": _cmd_predict,
    "optimize": _cmd_optimize,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FactorizationError, SimulationUnstableError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except DatasetFormatError as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 4
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
