"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as a script
(``python tests/test_acceptance.py``).  Thresholds are the contract values and
are not tuned per run.
"""

import itertools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from scsl.amortized import TrainConfig, train_x_model, train_y_model
from scsl.bench import BenchSpec, run_bench
from scsl.cli import main as cli_main
from scsl.data import DataMatrix, Domain, RngHandle, write_csv
from scsl.discovery import bh_procedure
from scsl.gcm import EdgeEvaluator, gcm_test
from scsl.search import SearchConfig, gumbel_relax, gumbel_relax_grad, search_edge
from scsl.synthgen import GenConfig, gen_real_confounding, gen_synth_confounding, simulate_base_dataset, simulate_x

RESULTS = {}


def report(capsys, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[number] = line
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


# ---------------------------------------------------------------------------
# shared fixtures


def _instance(i):
    """Semi-synthetic instance i: dataset, edge and the two models it needs."""
    rng = np.random.default_rng(1000 + i)
    m = int(rng.integers(2, 7))
    p = 4
    if i % 2:
        base = simulate_base_dataset(500, p, m, RngHandle(i, (0,)))
        out = gen_real_confounding(base, GenConfig(k_parents=2), RngHandle(i, (1,)))
    else:
        x = simulate_x(500, p, RngHandle(i, (0,)))
        out = gen_synth_confounding(x, GenConfig(k_parents=2, conf_p=0.5, m_targets=m), RngHandle(i, (1,)))
    j, k = int(rng.integers(p)), int(rng.integers(m))
    cfg = TrainConfig(n_epochs=20)
    data = out.data
    return data, j, k, train_y_model(data, k, cfg, RngHandle(i, (2,))), train_x_model(data, j, cfg, RngHandle(i, (3,)))


@pytest.fixture(scope="module")
def instances():
    return [_instance(i) for i in range(50)]


def bh_bruteforce(p, q):
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    best = 0
    for r in range(1, m + 1):
        if p[order[r - 1]] <= r * q / m:
            best = r
    return sorted(order[:best])


# ---------------------------------------------------------------------------


def check_1_exhaustion_equivalence(instances, capsys=None):
    t0 = time.perf_counter()
    matches = 0
    for i, (data, j, k, ym, xm) in enumerate(instances):
        ev = EdgeEvaluator(data, j, k, ym, xm)
        ex = search_edge(data, j, k, ym, xm, SearchConfig(mode="exhaustive", alpha_stop=None), evaluator=ev)
        hy = search_edge(data, j, k, ym, xm,
                         SearchConfig(mode="hybrid", q1=0, q2=2 ** (data.m - 1), alpha_stop=None),
                         RngHandle(i), evaluator=ev)
        matches += abs(hy.p_value - ex.p_value) <= 1e-12 and hy.best_subset == ex.best_subset
    wall = time.perf_counter() - t0
    ok = matches == 50 and wall <= 600
    assert report(capsys, 1, ok, f"{matches}/50 identical to exhaustive, {wall:.1f}s")


def check_2_hybrid_effectiveness(instances, capsys=None):
    matches = 0
    for i, (data, j, k, ym, xm) in enumerate(instances):
        ev = EdgeEvaluator(data, j, k, ym, xm)
        ex = search_edge(data, j, k, ym, xm, SearchConfig(mode="exhaustive", alpha_stop=None), evaluator=ev)
        hy = search_edge(data, j, k, ym, xm, SearchConfig(mode="hybrid", q1=200, q2=200, alpha_stop=None),
                         RngHandle(i), evaluator=ev)
        matches += abs(hy.p_value - ex.p_value) <= 1e-12
    assert report(capsys, 2, matches >= 45, f"{matches}/50 within 1e-12 of exhaustive (need >= 45)")


def _null_replicate(r):
    g = RngHandle(7000 + r).generator
    n = 2000
    x = (g.random((n, 3)) < 0.5).astype(float)
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    # X1 is independent of everything; Y1 and Y2 are conditionally independent given X
    y1 = (g.random(n) < sig(-1.0 + 1.5 * x[:, 1] + x[:, 2])).astype(float)
    y2 = (g.random(n) < sig(0.5 + x[:, 1] - x[:, 2])).astype(float)
    data = DataMatrix(x, np.column_stack([y1, y2]), Domain.BINARY)
    cfg = TrainConfig()
    ym = train_y_model(data, 0, cfg, RngHandle(r, (1,)))
    xm = train_x_model(data, 0, cfg, RngHandle(r, (2,)))
    return gcm_test(data, 0, 0, [1.0], ym, xm).statistic


def check_3_gcm_null_calibration(capsys=None):
    t0 = time.perf_counter()
    ts = np.array([_null_replicate(r) for r in range(500)])
    wall = time.perf_counter() - t0
    rate = float(np.mean(np.abs(ts) > stats.norm.ppf(0.975)))
    ks = float(stats.kstest(ts, "norm").statistic)
    ok = 0.03 <= rate <= 0.08 and ks <= 0.08 and wall <= 900
    assert report(capsys, 3, ok, f"rejection rate {rate:.3f}, KS {ks:.3f}, {wall:.1f}s")


def check_4_type_one_error(capsys=None):
    spec = BenchSpec(n=(2000,), shapes=((5, 5),), conf_p=(0.2, 0.4, 0.6, 0.8), seeds=tuple(range(20)))
    res = run_bench(spec, master_seed=4)
    worst, parts = 0.0, []
    for row in res.summary:
        th = np.asarray(row["thresholds"])
        ratio = np.asarray(row["pooled_fpr_ratio"])[th >= 0.01]
        worst = max(worst, float(ratio.max()))
        parts.append(f"conf_p={row['conf_p']}: max {ratio.max():.2f}")
    failed = sum(row["failed"] for row in res.summary)
    ok = worst <= 1.5 and failed == 0
    assert report(capsys, 4, ok, f"worst pooled FPR ratio {worst:.2f} at thresholds >= 0.01 ({'; '.join(parts)})")


def check_5_f1_reproduction(capsys=None):
    t0 = time.perf_counter()
    spec = BenchSpec(generator="real_confounding", n=(2000,), shapes=((5, 5),), seeds=tuple(range(10)))
    res = run_bench(spec, master_seed=5)
    wall = time.perf_counter() - t0
    (row,) = res.summary
    ok = row["F1"] >= 0.50 and row["failed"] == 0 and wall <= 1800
    assert report(capsys, 5, ok, f"mean F1 {row['F1']:.3f} over 10 seeds (reference 0.71, floor 0.50), {wall:.1f}s")


def check_6_gradient_correctness(capsys=None):
    t0 = time.perf_counter()
    h = 1e-5
    floor = 1e-6  # absolute scale below which a derivative counts as zero
    worst = 0.0
    configs = 0
    for ds in range(10):
        rng = np.random.default_rng(600 + ds)
        m = int(rng.integers(3, 7))
        x = simulate_x(300, 4, RngHandle(ds, (0,)))
        out = gen_synth_confounding(x, GenConfig(conf_p=0.5, m_targets=m), RngHandle(ds, (1,)))
        data = out.data
        cfg = TrainConfig(n_epochs=5)
        for _ in range(10):
            j, k = int(rng.integers(4)), int(rng.integers(m))
            ev = EdgeEvaluator(data, j, k, train_y_model(data, k, cfg, RngHandle(ds, (2, k))),
                               train_x_model(data, j, cfg, RngHandle(ds, (3, j))))
            d = m - 1
            theta = rng.uniform(0.1, 0.9, d)
            g1, g2 = -np.log(-np.log(rng.uniform(size=d))), -np.log(-np.log(rng.uniform(size=d)))
            tau = float(rng.uniform(0.5, 2.0))

            def f(th):
                return abs(ev.statistic(gumbel_relax(th, g1, g2, tau)))

            s = gumbel_relax(theta, g1, g2, tau)
            _, grad_s = ev.relaxed(s)
            analytic = grad_s * gumbel_relax_grad(theta, s, tau)
            for i in range(d):
                e = np.zeros(d)
                e[i] = h
                fd = (f(theta + e) - f(theta - e)) / (2 * h)
                err = abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), floor)
                worst = max(worst, err)
            configs += 1
    wall = time.perf_counter() - t0
    ok = worst <= 1e-4 and wall <= 60
    assert report(capsys, 6, ok, f"worst relative error {worst:.2e} over {configs} configurations, {wall:.1f}s")


def check_7_bh_oracle(capsys=None):
    rng = np.random.default_rng(7)
    agree = 0
    for t in range(1000):
        size = int(rng.integers(1, 51))
        # a third of the vectors come from a coarse grid to force ties
        p = rng.choice([0.0, 0.001, 0.01, 0.02, 0.05, 0.5, 1.0], size) if t % 3 == 0 else rng.uniform(0, 1, size) ** 3
        q = float(rng.choice([0.01, 0.05, 0.1, 0.2]))
        agree += list(bh_procedure(p, q)) == bh_bruteforce(list(p), q)
    assert report(capsys, 7, agree == 1000, f"{agree}/1000 vectors identical to the brute-force oracle")


def check_8_early_stopping(capsys=None):
    same = 0
    edges = 0
    for ds in range(10):
        x = simulate_x(1000, 5, RngHandle(ds, (80,)))
        out = gen_synth_confounding(x, GenConfig(conf_p=0.5, m_targets=5), RngHandle(ds, (81,)))
        data = out.data
        cfg = TrainConfig()
        pairs = list(itertools.product(range(5), range(5)))
        chosen = [pairs[i] for i in np.random.default_rng(ds).choice(25, 10, replace=False)]
        for j, k in chosen:
            ym = train_y_model(data, k, cfg, RngHandle(ds, (1, k)))
            xm = train_x_model(data, j, cfg, RngHandle(ds, (2, j)))
            ev = EdgeEvaluator(data, j, k, ym, xm)
            off = search_edge(data, j, k, ym, xm, SearchConfig(alpha_stop=None), RngHandle(ds, (3, j, k)), ev)
            on = search_edge(data, j, k, ym, xm, SearchConfig(alpha_stop=0.3), RngHandle(ds, (3, j, k)), ev)
            same += all((on.p_value <= t) == (off.p_value <= t) for t in (0.01, 0.05, 0.1))
            edges += 1
    assert report(capsys, 8, same == edges == 100, f"{same}/{edges} edges with identical decisions")


def check_9_determinism(capsys=None):
    import json

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        x = simulate_x(2000, 5, RngHandle(9, (0,)))
        out = gen_synth_confounding(x, GenConfig(conf_p=0.4, m_targets=5), RngHandle(9, (1,)))
        write_csv(out.data, tmp / "X.csv", tmp / "Y.csv")
        cfg = tmp / "cfg.json"
        cfg.write_text(json.dumps({"seed": 9, "discover": {"x_path": str(tmp / "X.csv"), "y_path": str(tmp / "Y.csv")}}))
        t0 = time.perf_counter()
        rc1 = cli_main(["discover", "--config", str(cfg), "--workers", "1", "--out", str(tmp / "w1")])
        wall = time.perf_counter() - t0
        rc8 = cli_main(["discover", "--config", str(cfg), "--workers", "8", "--out", str(tmp / "w8")])
        same = (tmp / "w1" / "p_matrix.csv").read_bytes() == (tmp / "w8" / "p_matrix.csv").read_bytes()
    ok = rc1 == rc8 == 0 and same and wall <= 300
    assert report(capsys, 9, ok, f"p_matrix.csv {'identical' if same else 'DIFFERS'} for 1 vs 8 workers, "
                                 f"1-worker wall {wall:.1f}s")


# ---------------------------------------------------------------------------
# pytest entry points


def test_criterion_1_exhaustion_equivalence(instances, capsys):
    check_1_exhaustion_equivalence(instances, capsys)


def test_criterion_2_hybrid_effectiveness(instances, capsys):
    check_2_hybrid_effectiveness(instances, capsys)


@pytest.mark.slow
def test_criterion_3_gcm_null_calibration(capsys):
    check_3_gcm_null_calibration(capsys)


@pytest.mark.slow
def test_criterion_4_type_one_error(capsys):
    check_4_type_one_error(capsys)


@pytest.mark.slow
def test_criterion_5_f1_reproduction(capsys):
    check_5_f1_reproduction(capsys)


def test_criterion_6_gradient_correctness(capsys):
    check_6_gradient_correctness(capsys)


def test_criterion_7_bh_oracle(capsys):
    check_7_bh_oracle(capsys)


def test_criterion_8_early_stopping(capsys):
    check_8_early_stopping(capsys)


def test_criterion_9_determinism(capsys):
    check_9_determinism(capsys)


if __name__ == "__main__":
    insts = [_instance(i) for i in range(50)]
    checks = [
        lambda: check_1_exhaustion_equivalence(insts),
        lambda: check_2_hybrid_effectiveness(insts),
        check_3_gcm_null_calibration,
        check_4_type_one_error,
        check_5_f1_reproduction,
        check_6_gradient_correctness,
        check_7_bh_oracle,
        check_8_early_stopping,
        check_9_determinism,
    ]
    failures = 0
    for check in checks:
        try:
            check()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
