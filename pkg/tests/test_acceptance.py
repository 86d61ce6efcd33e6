"""Acceptance gate: one test per criterion, each recorded as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary lines appear in the
"acceptance criteria" section at the end of the report.
"""

import time

import numpy as np
import pytest

from conftest import blob_field, pi_oracle, record
from test_betafit import grid_oracle
from test_merging import bh_oracle, two_stage_oracle
from pmixseg.bench import BASELINES, BenchConfig, run_study
from pmixseg.betafit import BetaStats, beta_objective, fit_constrained
from pmixseg.em import FitConfig, apecma_fit, update_pi_constrained
from pmixseg.evaluation import jaccard, summarize
from pmixseg.init import best_of_M
from pmixseg.merging import fdr_p1, fdr_p2, fdr_p3, merge_components, weighted_bh_adjust
from pmixseg.phantom import OMEGAS, calibrate_nu, make_phantom, pairwise_overlap

SPATIAL = "bic-p2-spatial"
NONSPATIAL = "bic-p2-nonspatial"


def _check(n, ok, detail, t0=None, budget=None):
    if t0 is not None:
        el = time.perf_counter() - t0
        detail = f"{detail}; {el:.0f}s (budget {budget}s)"
        ok = ok and el < budget
    record(n, ok, detail)
    assert ok, detail


def test_c01_monotone_gem():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, runs = np.inf, 0
    for i in range(100):
        n = int(rng.integers(200, 2001))
        K = int(rng.integers(1, 4))
        spatial = bool(i % 2)
        fld = blob_field(1000 + i, n, K)
        cfg = FitConfig(K=K, delta=0.9, spatial=spatial, seed=i, init_candidates=3)
        res = apecma_fit(fld, cfg, best_of_M(fld, K, cfg))
        tr = np.asarray(res.trace)
        rel = np.diff(tr) / np.abs(tr[:-1])
        worst = min(worst, float(rel.min()) if rel.size else 0.0)
        runs += 1
    _check(1, worst >= -1e-8, f"{runs} fits, worst relative step {worst:.3g}", t0, 120)


def test_c02_pi_update_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for i in range(500):
        K = int(rng.integers(1, 6))
        n = int(rng.integers(20, 400))
        conc = np.r_[rng.uniform(1, 50), rng.uniform(0.2, 3, K)]
        w = rng.dirichlet(conc, size=n)
        delta = (0.9, 0.95, 0.975, 0.99)[i % 4]
        got = update_pi_constrained(w, delta)
        ref = pi_oracle(w.sum(axis=0), delta)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    _check(2, worst <= 1e-6, f"500 matrices, max coordinate gap {worst:.2e}", t0, 60)


def test_c03_serial_equals_parallel():
    t0 = time.perf_counter()
    worst = 0.0
    for s in range(10):
        K = 1 + s % 3
        fld = blob_field(300 + s, int(600 + 150 * s), K)
        cfg = FitConfig(K=K, delta=0.9, seed=s, init_candidates=3, spatial=s % 4 != 3)
        th0 = best_of_M(fld, K, cfg)
        ref = apecma_fit(fld, cfg, th0, record_history=True)
        for D in (2, 4, 8):
            res = apecma_fit(fld, FitConfig(K=K, delta=0.9, seed=s, workers=D,
                                            spatial=cfg.spatial), th0, record_history=True)
            if len(res.history) != len(ref.history):
                worst = np.inf
                continue
            for a, b in zip(res.history, ref.history):
                for f in ("pi", "alpha", "beta", "mu", "sigma2"):
                    worst = max(worst, float(np.max(np.abs(getattr(a, f) - getattr(b, f)))))
    _check(3, worst <= 1e-10, f"10 instances x workers 2,4,8, max deviation {worst:.2e}", t0, 120)


# shared desk-scale study for criteria 4 to 7

@pytest.fixture(scope="module")
def null_rows():
    t0 = time.perf_counter()
    rows = run_study(["null"], [0.5], [0.95, 0.975, 0.99], [SPATIAL], 25, BenchConfig())
    return rows, time.perf_counter() - t0


@pytest.fixture(scope="module")
def phantom_rows():
    t0 = time.perf_counter()
    cfg = BenchConfig()
    rows = run_study(["b"], list(OMEGAS), [0.99], [SPATIAL, *BASELINES], 10, cfg)
    rows += run_study(["b"], [0.25], [0.95, 0.975], [SPATIAL], 10, cfg)
    rows += run_study(["b"], [0.75], [0.99], [NONSPATIAL], 10, cfg)
    return rows, time.perf_counter() - t0


def _medians(rows):
    return {(r["omega"], r["delta"], r["method"]): r["median"] for r in summarize(rows)}


def test_c04_null_activation(null_rows):
    rows, el = null_rows
    active = [r["n_active"] for r in rows]
    bad = sum(a > 0 for a in active)
    ok = bad == 0 and el < 600
    detail = (f"{len(rows)} runs, {bad} with activation (max {max(active)} voxels); "
              f"{el:.0f}s (budget 600s)")
    _check(4, ok, detail)


def test_c05_phantom_reproduction(phantom_rows):
    rows, el = phantom_rows
    med = _medians(rows)
    sp = [med[(om, 0.99, SPATIAL)] for om in OMEGAS]
    c1 = sp[1] >= 0.8
    c2 = all(med[(om, 0.99, SPATIAL)] > med[(om, 0.99, b)] for om in (0.5, 0.75) for b in BASELINES)
    inv = [b - a for a, b in zip(sp, sp[1:]) if b > a]
    c3 = len(inv) <= 1 and all(x <= 0.05 for x in inv)
    best_base = {om: max(med[(om, 0.99, b)] for b in BASELINES) for om in (0.5, 0.75)}
    detail = (f"spatial medians {[round(x, 3) for x in sp]}; best baseline at 0.5/0.75 "
              f"{best_base[0.5]:.3f}/{best_base[0.75]:.3f}; (i) {c1} (ii) {c2} (iii) {c3}; "
              f"study {el:.0f}s (budget 1800s)")
    _check(5, c1 and c2 and c3 and el < 1800, detail)


def test_c06_delta_robustness(phantom_rows):
    med = _medians(phantom_rows[0])
    vals = [med[(0.25, d, SPATIAL)] for d in (0.95, 0.975, 0.99)]
    spread = max(vals) - min(vals)
    _check(6, spread <= 0.15, f"medians at omega 0.25 {[round(v, 3) for v in vals]}, "
                              f"spread {spread:.3f}")


def test_c07_spatial_benefit(phantom_rows):
    med = _medians(phantom_rows[0])
    on, off = med[(0.75, 0.99, SPATIAL)], med[(0.75, 0.99, NONSPATIAL)]
    _check(7, on - off >= 0.1, f"omega 0.75 median spatial {on:.3f} vs non-spatial {off:.3f}")


def _mc_overlap(nu_k, nu_l, pi_k, pi_l, n, rng, chunk=2_000_000):
    lk, ll = np.log(pi_k), np.log(pi_l)
    wrong = [0, 0]
    for j, (own, oth, lo, lt) in enumerate(((nu_k, nu_l, lk, ll), (nu_l, nu_k, ll, lk))):
        done = 0
        while done < n:
            m = min(chunk, n - done)
            z = rng.standard_normal(m) + own
            wrong[j] += int(np.count_nonzero(lt - 0.5 * (z - oth) ** 2 > lo - 0.5 * (z - own) ** 2))
            done += m
    return wrong[0] / n + wrong[1] / n


def test_c08_calibration():
    t0 = time.perf_counter()
    worst_cal, worst_mc = 0.0, 0.0
    rng = np.random.default_rng(808)
    for v in ("a", "b", "c"):
        pi = make_phantom(v).pi_true
        for om in OMEGAS:
            cal = calibrate_nu(pi, om)
            worst_cal = max(worst_cal, abs(cal.achieved["01"] - om), abs(cal.achieved["02"] - om))
            if v == "b":
                for k, l in ((0, 1), (0, 2), (1, 2)):
                    cf = pairwise_overlap(cal.nu[k], cal.nu[l], pi[k], pi[l])
                    mc = _mc_overlap(cal.nu[k], cal.nu[l], pi[k], pi[l], 10_000_000, rng)
                    worst_mc = max(worst_mc, abs(cf - mc))
    ok = worst_cal <= 1e-4 and worst_mc <= 0.002
    _check(8, ok, f"max calibration error {worst_cal:.1e}, max closed-form vs 1e7-draw "
                  f"Monte Carlo gap {worst_mc:.1e}", t0, 600)


def test_c09_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(909)
    beta_gap = -np.inf
    for _ in range(500):
        n = int(rng.integers(10, 3000))
        p = np.clip(rng.beta(rng.uniform(0.2, 3), rng.uniform(1, 600), n), 1e-12, 1 - 1e-12)
        w = rng.uniform(size=n) if rng.random() < 0.5 else None
        st = BetaStats.from_sample(p, w)
        eta = float(rng.choice([0.01, 0.05, 0.1]))
        a, b = fit_constrained(st, eta)
        beta_gap = max(beta_gap, grid_oracle(st, eta) - beta_objective(st, a, b))
    q_bad = 0
    for _ in range(1000):
        m = int(rng.integers(1, 40))
        p = rng.uniform(size=m) ** rng.uniform(1, 8)
        wts = rng.integers(1, 300, m).astype(float)
        q_bad += not np.array_equal(weighted_bh_adjust(p), bh_oracle(p))
        q_bad += not np.array_equal(fdr_p2(p).q, two_stage_oracle(p, 0.05))
        q_bad += not np.array_equal(fdr_p3(p, wts).q, two_stage_oracle(p, 0.05, wts))
    j_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 100))
        a = rng.random(n) < rng.random()
        b = rng.random(n) < rng.random()
        sa, sb = set(np.flatnonzero(a)), set(np.flatnonzero(b))
        ref = 1.0 if not sa | sb else len(sa & sb) / len(sa | sb)
        j_bad += jaccard(a, b) != ref
    ok = beta_gap <= 1e-3 and q_bad == 0 and j_bad == 0
    _check(9, ok, f"beta: grid beats fit by at most {beta_gap:.1e}; q-value mismatches {q_bad}; "
                  f"Jaccard mismatches {j_bad}", t0, 600)


def test_c10_merging_fdr():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1010)
    n_null, n_act, size = 20, 5, 50
    K = n_null + n_act
    labels = np.repeat(np.arange(1, K + 1), size)
    is_act = np.r_[np.zeros(n_null, bool), np.ones(n_act, bool)]
    out = {}
    for method in ("p1", "p2"):
        fdp, power = [], []
        for _ in range(500):
            p = np.concatenate([rng.uniform(size=size) for _ in range(n_null)]
                               + [rng.beta(0.5, 200, size) for _ in range(n_act)])
            p = np.clip(p, 1e-12, 1 - 1e-12)
            rep = merge_components(labels, p, K, method=method, pairwise=False)
            kept = np.array([rep.relabel[k] != 0 for k in range(1, K + 1)])
            fdp.append((kept & ~is_act).sum() / max(kept.sum(), 1))
            power.append((kept & is_act).sum() / n_act)
        out[method] = (float(np.mean(fdp)), float(np.mean(power)))
    ok = all(f <= 0.07 and pw >= 0.9 for f, pw in out.values())
    _check(10, ok, "; ".join(f"{m}: FDR {f:.3f} power {pw:.3f}" for m, (f, pw) in out.items()),
           t0, 600)
