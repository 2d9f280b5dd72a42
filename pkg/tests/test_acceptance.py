"""Acceptance suite: one test per release criterion.

Each criterion prints one `ACCEPTANCE <n>: PASS` line (run with `-s` to see
them live); the per-test pass/fail status in `pytest -v` mirrors the same
thing. Hardware-conditional criteria skip with an explanation when the host
cannot satisfy their preconditions.
"""

import os
import time

import numpy as np
import pytest

import oracles
from conftest import random_dataset
from gprs import (
    BenchRecord,
    Dataset,
    GpEngine,
    Hyperparameters,
    MsdConfig,
    cholesky_task_count,
    load_dataset,
    make_dataset,
    make_spec,
    save_dataset,
    simulate,
    steps_for_samples,
    summarize,
    symmetric_from_dense,
)
from gprs.gp import DEFAULT_THETA
from gprs.harness import generate_size_pair, strong_scaling

CORES = os.cpu_count() or 1


def _report(num, text):
    print(f"\nACCEPTANCE {num}: PASS - {text}")


def _default_sim_dataset(n_train, n_test, seed=0):
    cfg = MsdConfig(n_steps=steps_for_samples(n_train + n_test, 3, 50), seed=seed)
    u, x = simulate(cfg)
    ds, _ = make_dataset(u, x, window=3, stride=50)
    train = Dataset(ds.features[:n_train], ds.observations[:n_train])
    test = Dataset(ds.features[n_train : n_train + n_test],
                   ds.observations[n_train : n_train + n_test])
    return train, test


def test_criterion_01_oracle_equivalence(make_pool):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    rt = make_pool(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 257))
        m = int(rng.integers(4, 257))
        theta = Hyperparameters(
            float(rng.uniform(0.1, 10.0)),
            float(rng.uniform(0.1, 10.0)),
            float(rng.uniform(0.01, 10.0)),
        )
        train = random_dataset(rng, n)
        test = random_dataset(rng, m)
        eng = GpEngine(rt, tiles_per_dim=int(rng.integers(1, 5)))

        mean_o = oracles.predict_mean(train, test, theta)
        cov_o = oracles.posterior_cov(train, test, theta)
        nlml_o = oracles.nlml(train, theta)

        res_m = eng.predict(train, test, theta)
        res_u = eng.predict_with_uncertainty(train, test, theta)
        res_f = eng.predict_full_cov(train, test, theta)
        val = eng.nlml(train, theta)

        errs = (
            oracles.rel_err(res_m.mean, mean_o),
            oracles.rel_err(res_u.mean, mean_o),
            oracles.rel_err(res_u.variance, np.diag(cov_o)),
            oracles.rel_err(res_f.mean, mean_o),
            oracles.rel_err(res_f.full_cov, cov_o),
            abs(val - nlml_o) / max(abs(nlml_o), 1.0),
        )
        worst = max(worst, *errs)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-9
    assert elapsed < 120.0
    _report(1, f"50 random instances, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_gradient_check(make_pool):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    rt = make_pool(2)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(8, 65))
        train = random_dataset(rng, n)
        theta = Hyperparameters(
            float(rng.uniform(0.1, 10.0)),
            float(rng.uniform(0.1, 10.0)),
            float(rng.uniform(0.01, 10.0)),
        )
        eng = GpEngine(rt, tiles_per_dim=int(rng.integers(1, 5)))
        got = eng.nlml_gradient(train, theta)
        want = oracles.nlml_fd_gradient(train, theta, h=1e-6)
        err = float(np.abs(got - want).max() / max(np.abs(want).max(), 1e-8))
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-5
    assert elapsed < 60.0
    _report(2, f"20 gradient checks vs central differences, worst {worst:.2e}, "
               f"{elapsed:.1f}s")


def test_criterion_03_tile_invariance(make_pool):
    train, test = _default_sim_dataset(512, 256, seed=7)
    rt = make_pool(2)

    def run(tiles):
        eng = GpEngine(rt, tiles_per_dim=tiles)
        res = eng.predict_full_cov(train, test, DEFAULT_THETA)
        val = eng.nlml(train, DEFAULT_THETA)
        return val, res.mean, res.variance, res.full_cov

    base = run(1)
    worst = 0.0
    for tiles in (2, 4, 8, 16):
        val, mean, var, cov = run(tiles)
        worst = max(
            worst,
            abs(val - base[0]) / abs(base[0]),
            oracles.rel_err(mean, base[1]),
            oracles.rel_err(var, base[2]),
            oracles.rel_err(cov, base[3]),
        )
    assert worst < 1e-9
    _report(3, f"T in {{1,2,4,8,16}} on N=512 agree, worst rel err {worst:.2e}")


def test_criterion_04_worker_determinism(make_pool):
    train, test = _default_sim_dataset(512, 128, seed=11)
    outputs = []
    for workers in (1, 2, 4):
        rt = make_pool(workers)
        eng = GpEngine(rt, tiles_per_dim=8, backend="reference")
        res = eng.predict_full_cov(train, test, DEFAULT_THETA)
        val, grad = eng.nlml_value_and_gradient(train, DEFAULT_THETA)
        outputs.append((val, grad, res.mean, res.variance, res.full_cov))
        rt.shutdown()
    v0, g0, m0, s0, c0 = outputs[0]
    for val, grad, mean, var, cov in outputs[1:]:
        assert val == v0
        assert (grad == g0).all()
        assert (mean == m0).all()
        assert (var == s0).all()
        assert (cov == c0).all()
    _report(4, "bitwise-identical outputs for worker counts 1, 2, 4 "
               "(N=512, T=8, reference backend)")


def test_criterion_05_task_count_formula(make_pool):
    rt = make_pool(2)
    counts = {}
    for tiles in (1, 2, 3, 4, 8, 16):
        n = tiles * 8
        eng = GpEngine(rt, tiles_per_dim=tiles)
        spec = make_spec(n, tiles)
        rng = np.random.default_rng(tiles)
        a = rng.standard_normal((n, n))
        spd = a @ a.T + n * np.eye(n)
        lifted = eng._lift(
            symmetric_from_dense(np.tril(spd) + np.tril(spd, -1).T, spec).tiles
        )
        before = rt.tasks_executed()
        out = eng.tiled_cholesky(lifted, spec)
        rt.wait_all(list(out.values()))
        counts[tiles] = rt.tasks_executed() - before
        assert counts[tiles] == cholesky_task_count(tiles)
    assert counts[16] == 816
    _report(5, f"executed factorization tasks match T + T(T-1) + T(T-1)(T-2)/6 "
               f"for T in {{1,2,3,4,8,16}} (T=16 -> {counts[16]})")


@pytest.mark.skipif(CORES < 4, reason="criterion is defined on a >=4-core host; "
                                      f"this host has {CORES}")
def test_criterion_06_strong_scaling():
    t0 = time.perf_counter()
    train, test = generate_size_pair(2048, 2048, seed=42)
    _, summary = strong_scaling(
        train=train, test=test, workers_list=[1, 2, 4], tiles=16, reps=10,
        experiment="pred_full", backend="reference",
    )
    by_workers = {g.workers: g for g in summary.groups}
    s2 = by_workers[2].speedup
    s4 = by_workers[4].speedup
    elapsed = time.perf_counter() - t0
    assert s2 >= 1.3
    assert s4 >= 1.5
    assert elapsed < 600.0
    _report(6, f"prediction with full covariance, N=2^11, T=16: "
               f"S(2)={s2:.2f} >= 1.3, S(4)={s4:.2f} >= 1.5, {elapsed:.0f}s")


@pytest.mark.skipif(CORES < 2 or CORES >= 4,
                    reason="reduced variant applies to 2-3 core hosts only")
def test_criterion_06_reduced_two_core_smoke():
    # the full criterion needs >=4 cores; on this host only the 2-worker leg
    # is measurable, checked against a weak floor as a parallelism smoke test
    train, test = generate_size_pair(2048, 2048, seed=42)
    _, summary = strong_scaling(
        train=train, test=test, workers_list=[1, 2], tiles=16, reps=10,
        experiment="pred_full", backend="reference",
    )
    s2 = {g.workers: g for g in summary.groups}[2].speedup
    assert s2 >= 1.1
    _report("6 (reduced)", f"S(2)={s2:.2f} >= 1.1 on a {CORES}-core host; "
            "the full >=4-core criterion was skipped")


def test_criterion_07_optimization_progress(make_pool):
    train, _ = _default_sim_dataset(512, 1)  # default config, default seed
    rt = make_pool(2)
    eng = GpEngine(rt, tiles_per_dim=8)
    _, trace = eng.optimize(train, DEFAULT_THETA, iters=20)
    assert len(trace) == 20
    assert trace[-1] < trace[0]
    diffs = np.diff(trace)
    assert (diffs[3:] <= 1e-9).all()
    _report(7, f"20 Adam iterations on the default N=512 dataset: loss "
               f"{trace[0]:.1f} -> {trace[-1]:.1f}, non-increasing after iter 3")


def test_criterion_08_statistics():
    records = [
        BenchRecord(experiment="opt", n_train=8, n_test=8, tiles_per_dim=1,
                    workers=1, backend="reference", rep=i,
                    wall_seconds=float(i), tasks_executed=1)
        for i in range(1, 11)
    ]
    g = summarize(records).groups[0]
    assert g.mean_seconds == pytest.approx(5.5)
    assert abs(g.ci95 - 2.166) < 1e-3
    _report(8, f"t-interval on samples 1..10: mean {g.mean_seconds}, "
               f"ci95 {g.ci95:.4f} (target 2.166 +- 0.001)")


def test_criterion_09_backend_swap(make_pool):
    rng = np.random.default_rng(31)
    train = random_dataset(rng, 256)
    test = random_dataset(rng, 256)
    rt = make_pool(2)
    results = {}
    for backend in ("reference", "system"):
        eng = GpEngine(rt, tiles_per_dim=4, backend=backend)
        res = eng.predict_full_cov(train, test, DEFAULT_THETA)
        val = eng.nlml(train, DEFAULT_THETA)
        results[backend] = (val, res.mean, res.full_cov)
    v_r, m_r, c_r = results["reference"]
    v_s, m_s, c_s = results["system"]
    worst = max(
        abs(v_r - v_s) / abs(v_r),
        oracles.rel_err(m_s, m_r),
        oracles.rel_err(c_s, c_r),
    )
    assert worst < 1e-9
    _report(9, f"reference and system backends agree on N=256 pipelines, "
               f"worst rel err {worst:.2e}")


def test_criterion_10_dataset_round_trip(tmp_path):
    cfg = MsdConfig(n_steps=steps_for_samples(128, 3, 50), seed=5)
    u1, x1 = simulate(cfg)
    u2, x2 = simulate(cfg)
    assert (u1 == u2).all() and (x1 == x2).all()

    ds, _ = make_dataset(u1, x1, window=3, stride=50)
    p1, p2 = tmp_path / "a.ds", tmp_path / "b.ds"
    save_dataset(ds, p1)
    save_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_dataset(p1)
    assert (back.features == ds.features).all()
    assert (back.observations == ds.observations).all()
    _report(10, "save/load is bitwise exact and the simulator is "
                "seed-deterministic")
