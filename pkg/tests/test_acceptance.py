"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with the measured values at the criterion's tolerance."""

import json
import math
import sys
from dataclasses import replace
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from _mc import simulate_decisions, simulate_from_density

from seqverify.baselines import verify_single_llr
from seqverify.conflict import resolve, segments_conflict
from seqverify.density import (
    H0,
    H1,
    DistanceSample,
    fit_density_pair,
    kl_divergence,
    llr,
)
from seqverify.pgo import ate_rpe, chi2, edge_jacobians, edge_residual, optimize
from seqverify.pipeline import (
    POLICIES,
    RunConfig,
    compare_policies,
    run_experiment,
    sweep,
)
from seqverify.sprt import SprtConfig, max_subsegment, thresholds, verify
from seqverify.stream import DescriptorTable, retrieve


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")


# -- shared fixtures --------------------------------------------------------


@pytest.fixture(scope="module")
def mc_density_pair():
    """Well-separated pair for the statistical criteria (per-step KL >= 2)."""
    rng = np.random.default_rng(123)
    h1 = np.abs(rng.normal(0.30, 0.09, size=4000))
    h0 = np.abs(rng.normal(0.62, 0.15, size=4000))
    dp = fit_density_pair([DistanceSample(v, H1) for v in h1] +
                          [DistanceSample(v, H0) for v in h0])
    assert kl_divergence(dp) >= 2.0
    return dp


@pytest.fixture(scope="module")
def mc_results(mc_density_pair):
    cfg = SprtConfig()
    n = 1_000_000
    acc0, tau0, _ = simulate_from_density(mc_density_pair, H0, cfg, n,
                                          np.random.default_rng(7))
    acc1, tau1, _ = simulate_from_density(mc_density_pair, H1, cfg, n,
                                          np.random.default_rng(8))
    return {"n": n, "acc0": acc0, "tau0": tau0, "acc1": acc1, "tau1": tau1}


@pytest.fixture(scope="module")
def default_run():
    return run_experiment(RunConfig(seed=0, render_figures=False))


@pytest.fixture(scope="module")
def policy_table():
    cfg = RunConfig(seed=0)
    return compare_policies(cfg, POLICIES, seeds=[1, 2, 3, 4, 5], tune_seed=0)


# -- criteria ---------------------------------------------------------------


def test_criterion_1_threshold_formula():
    a, b = thresholds(1e-5, 0.009)
    ok = round(a, 1) == 11.5 and round(b, 2) == -4.71
    report("1 threshold formula", ok, f"A={a:.6f}, B={b:.6f}")
    assert math.isclose(a, 11.5, rel_tol=5e-3)
    assert math.isclose(b, -4.71, rel_tol=5e-3)


def test_criterion_2_error_control(mc_density_pair, mc_results):
    # Simulator equivalence first: the vectorized path must match the scalar
    # implementation exactly before its rates mean anything.
    from test_sprt import FakeStream, IDENTITY_DP

    cfg = SprtConfig()
    rng = np.random.default_rng(0)
    drifts = rng.uniform(-3, 3, size=10_000)
    h = rng.normal(drifts[:, None], rng.uniform(0.5, 4.0, size=(10_000, 1)),
                   size=(10_000, 13))
    acc_v, tau_v, _ = simulate_decisions(h, cfg)
    for row in range(10_000):
        v = verify(FakeStream(h[row].tolist(), IDENTITY_DP), IDENTITY_DP, cfg)
        assert v.accepted == acc_v[row] and v.tau == tau_v[row]

    n = mc_results["n"]
    alpha, beta = cfg.alpha, cfg.beta
    accept_rate = float(mc_results["acc0"].mean())
    bound_h0 = 2 * alpha + 3 * math.sqrt(2 * alpha * (1 - 2 * alpha) / n)
    reject_rate = 1.0 - float(mc_results["acc1"].mean())
    bound_h1 = 3 * beta
    kl = kl_divergence(mc_density_pair)
    ok = accept_rate <= bound_h0 and reject_rate <= bound_h1
    report("2 SPRT error control", ok,
           f"KL={kl:.2f}; H0 accept {accept_rate:.2e} <= {bound_h0:.2e}; "
           f"H1 reject {reject_rate:.4f} <= {bound_h1:.4f}")
    assert accept_rate <= bound_h0
    assert reject_rate <= bound_h1


def test_criterion_3_stopping_time_envelope(mc_results, default_run):
    cfg = SprtConfig()
    tau_all = np.concatenate([mc_results["tau0"], mc_results["tau1"]])
    acc_all = np.concatenate([mc_results["acc0"], mc_results["acc1"]])
    ok_mc = (tau_all.min() >= 1 and tau_all.max() <= cfg.n_max
             and (not acc_all.any() or tau_all[acc_all].min() >= cfg.n_min))

    taus = [v.tau for v in default_run.outcome.verdicts]
    acc_taus = [v.tau for v in default_run.outcome.verdicts if v.accepted]
    ok_world = max(taus) <= cfg.n_max and (not acc_taus or min(acc_taus) >= cfg.n_min)

    dt = default_run.report_doc["decision_tier"]
    gap = abs(dt["delay_frames"] - (dt["asn_acc"] - 1.0))
    ok_delay = gap <= 0.5
    ok = ok_mc and ok_world and ok_delay
    report("3 stopping-time envelope", ok,
           f"mc tau in [{tau_all.min()},{tau_all.max()}], accepts >= {cfg.n_min}; "
           f"world tau max {max(taus)}; |delay-(ASNacc-1)|={gap:.3f} <= 0.5")
    assert ok_mc and ok_world and ok_delay


def test_criterion_4_oracle_equivalences():
    rng = np.random.default_rng(42)

    # max_subsegment vs O(n^2) enumeration, 10^4 histories.
    def brute_max(h):
        best = None
        for j in range(len(h)):
            s = 0.0
            for k in range(j, len(h)):
                s += h[k]
                if best is None or s > best[2]:
                    best = (j, k, s)
        return best

    for _ in range(10_000):
        h = rng.normal(0.0, 2.0, size=int(rng.integers(1, 51))).tolist()
        got = max_subsegment(h)
        want = brute_max(h)
        assert got[:2] == want[:2] and math.isclose(got[2], want[2],
                                                    rel_tol=1e-12, abs_tol=1e-12)

    # conflict resolution vs exhaustive subset enumeration, 10^3 pools.
    from test_conflict import brute_force_best, seg

    for _ in range(1000):
        n = int(rng.integers(1, 16))
        pool = [seg(int(rng.integers(0, 60)), 0, int(rng.integers(0, 60)), 0,
                    float(rng.uniform(0.1, 10.0)))
                for _ in range(n)]
        pool = [replace_spans(s, rng) for s in pool]
        kept = resolve(pool)
        assert math.isclose(sum(s.score for s in kept), brute_force_best(pool)[0],
                            rel_tol=1e-12, abs_tol=1e-12)
        for a, b in combinations(kept, 2):
            assert not segments_conflict(a, b)

    # retrieval vs brute-force scan-sort-filter, tables up to N=500.
    from test_stream import brute_force_retrieve

    for trial in range(40):
        n = int(rng.integers(10, 501))
        table = DescriptorTable(rng.normal(size=(n, 5)) + 1.0,
                                metric=("euclidean", "cosine", "manhattan")[trial % 3])
        q = int(rng.integers(0, n))
        budget, excl, span = int(rng.integers(1, 8)), int(rng.integers(0, 25)), int(rng.integers(0, 12))
        ratio = None if trial % 2 else 1.5
        got = retrieve(table, q, budget, excl, span, ratio=ratio)
        assert got.indices == brute_force_retrieve(table, q, budget, excl, span, ratio=ratio)

    report("4 oracle equivalences", True,
           "kadane 10^4 exact; conflict 10^3 pools exact; retrieval 40 tables exact")


def replace_spans(s, rng):
    from test_conflict import seg

    q0 = int(rng.integers(0, 60))
    d0 = int(rng.integers(0, 60))
    return seg(q0, q0 + int(rng.integers(0, 10)), d0, d0 + int(rng.integers(0, 10)),
               s.score)


def test_criterion_5_pgo_numerics():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        xi = rng.uniform(-5, 5, size=3)
        xj = rng.uniform(-5, 5, size=3)
        z = rng.uniform(-1, 1, size=3)
        A, B = edge_jacobians(xi, xj, z)
        h = 1e-6
        for var, J in ((0, A), (1, B)):
            num = np.zeros((3, 3))
            for c in range(3):
                d = np.zeros(3)
                d[c] = h
                args_p = (xi + d, xj, z) if var == 0 else (xi, xj + d, z)
                args_m = (xi - d, xj, z) if var == 0 else (xi, xj - d, z)
                num[:, c] = (edge_residual(*args_p) - edge_residual(*args_m)) / (2 * h)
            worst = max(worst, float(np.abs(J - num).max() / max(1.0, np.abs(J).max())))
    ok_jac = worst < 1e-5

    from test_pgo import random_graph

    ok_descent = True
    rng2 = np.random.default_rng(6)
    for _ in range(25):
        graph, _ = random_graph(rng2)
        res = optimize(graph)
        diffs = np.diff(res.chi2_history)
        ok_descent &= bool(np.all(diffs <= 1e-12))

    poses = np.random.default_rng(7).uniform(-5, 5, size=(40, 3))
    err = ate_rpe(poses, poses)
    ok_zero = err.ate_rmse <= 1e-12 and err.rpe_rmse <= 1e-12

    ok = ok_jac and ok_descent and ok_zero
    report("5 PGO numerics", ok,
           f"jacobian rel err {worst:.2e} < 1e-5; chi2 non-increasing; "
           f"perfect-trajectory ATE/RPE = ({err.ate_rmse:.1e}, {err.rpe_rmse:.1e})")
    assert ok_jac and ok_descent and ok_zero


def _per_seed(table, kind, path):
    out = []
    for doc in table[kind]["per_seed"]:
        node = doc
        for p in path:
            node = node[p]
        out.append(node)
    return out


def test_criterion_6_policy_trends(policy_table):
    table = policy_table
    n_seeds = 5

    def wins(a, b, path, strict=True):
        xs, ys = _per_seed(table, a, path), _per_seed(table, b, path)
        return sum((x > y) if strict else (x >= y) for x, y in zip(xs, ys))

    a1 = wins("seq_sprt", "single", ("pairwise", "precision"))
    a2 = wins("seq_sprt", "single_llr", ("pairwise", "precision"))
    b1 = wins("seq_sprt", "single", ("khit", "f1_at_khit"))
    b2 = wins("seq_sprt", "single_llr", ("khit", "f1_at_khit"))
    d = wins("single", "seq_sprt", ("trajectory", "ate_rmse"))

    c_prec = c_ate = 0
    for i in range(n_seeds):
        precs = {k: table[k]["per_seed"][i]["pairwise"]["precision"] or 0.0
                 for k in POLICIES}
        ates = {k: table[k]["per_seed"][i]["trajectory"]["ate_rmse"] for k in POLICIES}
        if all(precs["seq_sprt_geom"] >= v - 1e-12 for v in precs.values()):
            c_prec += 1
        if all(ates["seq_sprt_geom"] <= v + 1e-12 for v in ates.values()):
            c_ate += 1

    counts = {"prec>single": a1, "prec>single_llr": a2, "f1k>single": b1,
              "f1k>single_llr": b2, "geom best prec": c_prec,
              "geom best ate": c_ate, "ate single>seq": d}
    ok = all(v >= 4 for v in counts.values())
    report("6 policy trends (5 seeds)", ok,
           ", ".join(f"{k} {v}/5" for k, v in counts.items()))
    for name, v in counts.items():
        assert v >= 4, f"{name}: {v}/5"


def test_criterion_7_aliasing_regime(default_run):
    fe = default_run.front_end
    world = fe.world
    truth = world.labels.loop_pairs
    ds = np.array([d for _, _, d in fe.candidates])
    matched = []
    for q, t, _ in fe.candidates:
        matched.append([(q + dq, t + dt) for dq in range(-2, 3)
                        for dt in range(-2, 3) if (q + dq, t + dt) in truth])
    worst = (0.0, 0.0)
    violated = False
    for thr in np.quantile(ds, np.linspace(0.01, 1.0, 200)):
        sel = ds <= thr
        if not sel.any():
            continue
        tp = sum(1 for ok, m in zip(sel, matched) if ok and m)
        precision = tp / int(sel.sum())
        covered = set()
        for ok, m in zip(sel, matched):
            if ok:
                covered.update(m)
        recall = len(covered) / len(truth)
        if recall >= 0.3:
            worst = max(worst, (precision, recall))
            if precision >= 0.9:
                violated = True
    report("7 aliasing regime", not violated,
           f"best single-frame precision at recall>=0.3 is {worst[0]:.3f}")
    assert not violated


def test_criterion_8_one_step_collapse():
    rng = np.random.default_rng(3)
    h1 = np.abs(rng.normal(0.3, 0.08, size=800))
    h0 = np.abs(rng.normal(0.9, 0.15, size=800))
    dp = fit_density_pair([DistanceSample(v, H1) for v in h1] +
                          [DistanceSample(v, H0) for v in h0])

    class OneObs:
        def __init__(self, x):
            self.query, self.candidate = 0, 100
            self.observations = [(0, 0, x)]

    mismatches = 0
    for _ in range(1000):
        x0 = float(rng.uniform(0.0, 1.5))
        thr = float(rng.uniform(-3.0, 3.0))
        cfg = SprtConfig(n_min=1, n_max=1, min_run=1, accept_override=thr,
                         reject_override=-math.inf, llr_step_threshold=-math.inf)
        v = verify(OneObs(x0), dp, cfg)
        if v.accepted != verify_single_llr(x0, dp, thr):
            mismatches += 1
    report("8 one-step collapse", mismatches == 0,
           f"{1000 - mismatches}/1000 fixtures identical")
    assert mismatches == 0


def test_criterion_9_determinism(tmp_path):
    blobs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        run_experiment(RunConfig(seed=5, output_dir=str(out), render_figures=False))
        blobs.append(((out / "report.json").read_bytes(),
                      (out / "verdicts.jsonl").read_bytes()))
    ok = blobs[0] == blobs[1]
    report("9 determinism", ok, "report.json and verdicts.jsonl byte-identical")
    assert ok


def test_criterion_10_stability_sweep():
    base = RunConfig(seed=0, render_figures=False)
    alpha_rows = sweep(base, "sprt.alpha", [1e-6, 1e-5, 1e-4])
    nmax_rows = sweep(base, "sprt.n_max", [10, 13, 16])

    def f1_range(rows):
        vals = [doc["khit"]["f1_at_khit"] for _, doc in rows]
        return max(vals) - min(vals), vals

    d_alpha, v_alpha = f1_range(alpha_rows)
    d_nmax, v_nmax = f1_range(nmax_rows)
    for _, doc in nmax_rows:
        asn = doc["decision_tier"]["asn_acc"]
        assert asn is None or asn <= 16
    ok = d_alpha < 0.05 and d_nmax < 0.05
    report("10 stability sweep", ok,
           f"F1@Khit range alpha {d_alpha:.4f} / n_max {d_nmax:.4f} < 0.05 "
           f"(alpha {['%.3f' % v for v in v_alpha]}, n_max {['%.3f' % v for v in v_nmax]})")
    assert d_alpha < 0.05
    assert d_nmax < 0.05
