import math

import numpy as np
import pytest
from scipy import stats

from pmixseg.betafit import BetaStats, beta_objective
from pmixseg.errors import ParameterError
from pmixseg.merging import (fdr, fdr_p1, fdr_p2, fdr_p3, lrt_component_vs_null, lrt_pair,
                             merge_components, pairwise_merge, weighted_bh_adjust)


def bh_oracle(p, w=None):
    """q_i = min over p_j >= p_i of m p_j / W(p_j), W = weight of {l : p_l <= p_j}."""
    m = len(p)
    w = np.ones(m) if w is None else np.asarray(w, float) * m / math.fsum(w)
    order = sorted(range(m), key=lambda i: p[i])
    cum, W = 0.0, {}
    for i in order:
        cum += w[i]
        W[i] = cum
    # ties share the weight of the whole tie block
    for i in order:
        W[i] = max(W[j] for j in order if p[j] == p[i])
    q = np.empty(m)
    for i in range(m):
        q[i] = min(min(1.0, m * p[j] / W[j]) for j in range(m) if p[j] >= p[i])
    return q


def two_stage_oracle(p, q0, w=None):
    m = len(p)
    adj = bh_oracle(p, w)
    wn = np.ones(m) if w is None else np.asarray(w, float) * m / math.fsum(w)
    m0 = m - math.fsum(wn[i] for i in range(m) if adj[i] <= q0 / (1 + q0))
    if m0 <= 1e-12 * m:
        m0 = 0.0
    return np.array([min(1.0, (1 + q0) * (m0 / m) * a) for a in adj])


def test_bh_examples():
    assert fdr_p1([0.01]).q.tolist() == [0.01]
    q = fdr_p1([0.01, 0.04, 0.03, 0.005]).q
    assert np.allclose(q, [0.02, 0.04, 0.04, 0.02], rtol=0, atol=1e-15)
    assert not fdr_p1(np.ones(10)).reject.any()


def test_bh_matches_oracle(rng):
    for _ in range(100):
        m = int(rng.integers(1, 30))
        p = rng.uniform(size=m) ** 3
        if rng.random() < 0.3:
            p[: m // 2] = p[0]  # ties
        assert np.array_equal(weighted_bh_adjust(p), bh_oracle(p))


def test_two_stage_matches_oracle(rng):
    for _ in range(100):
        m = int(rng.integers(1, 30))
        p = rng.uniform(size=m) ** rng.uniform(1, 6)
        assert np.array_equal(fdr_p2(p).q, two_stage_oracle(p, 0.05))
        w = rng.integers(1, 200, m).astype(float)
        assert np.array_equal(fdr_p3(p, w).q, two_stage_oracle(p, 0.05, w))


def test_two_stage_decisions_match_stage_rule(rng):
    # stage 2 is BH at q' m / m0 on the raw p-values
    q0 = 0.05
    qp = q0 / (1 + q0)
    for _ in range(200):
        m = int(rng.integers(2, 40))
        p = np.sort(rng.uniform(size=m) ** rng.uniform(1, 8))
        r1 = np.max(np.r_[0, np.flatnonzero(p <= np.arange(1, m + 1) * qp / m) + 1])
        m0 = m - r1
        if m0 == 0:
            expect = np.ones(m, bool)
        else:
            r2 = np.max(np.r_[0, np.flatnonzero(p <= np.arange(1, m + 1) * qp / m0) + 1])
            expect = np.arange(m) < r2
        got = fdr_p2(p, q0).reject
        # skip draws sitting within rounding of a threshold
        near = np.any(np.abs(p * m0 - np.arange(1, m + 1) * qp) < 1e-12) if m0 else False
        if not near:
            assert np.array_equal(got, expect)


def test_p2_all_small_rejects_all():
    assert fdr_p2(np.full(10, 1e-8)).reject.all()


def test_p2_fdr_control_uniform():
    rng = np.random.default_rng(5)
    any_rej = sum(fdr_p2(rng.uniform(size=100)).reject.any() for _ in range(1000))
    assert any_rej / 1000 <= 0.07


def test_p3_equal_weights_is_p2(rng):
    for _ in range(50):
        p = rng.uniform(size=12) ** 4
        assert np.array_equal(fdr_p3(p, np.full(12, 7.0)).reject, fdr_p2(p).reject)


def test_p3_heavy_cluster_first():
    p = np.r_[0.004, np.linspace(0.3, 0.9, 9)]
    w = np.r_[1000.0, np.ones(9)]
    p[0] = 0.009
    res = fdr_p3(p, w)
    assert res.reject[0] and res.q[0] == res.q.min()
    assert not fdr_p1(p).reject[0]


def test_fdr_dispatch():
    with pytest.raises(ParameterError):
        fdr("p4", [0.1])
    with pytest.raises(ParameterError):
        fdr_p1([1.5])


def test_lrt_mean_at_eta():
    rng = np.random.default_rng(1)
    p = rng.beta(0.5, 9.5, 400)  # mean 0.05
    lam, pv = lrt_component_vs_null(np.full(50, 0.05))
    assert lam == 0.0 and pv == 1.0
    lam, pv = lrt_component_vs_null(p, 0.05)
    assert lam < 4.0 and pv > 0.04


def test_lrt_beta_small_mean_rejected():
    rej = 0
    for s in range(40):
        p = np.random.default_rng(s).beta(0.5, 200, 500)
        rej += lrt_component_vs_null(p)[1] < 1e-3
    assert rej / 40 >= 0.95


def _grid_max(st, eta=None, n=300):
    """Grid maximum of the beta log-likelihood over (log alpha, mean).

    With ``eta`` the mean runs over [eta, 1), so the boundary is a grid line.
    """
    lo = np.log(eta) if eta is not None else np.log(1e-5)
    la = np.linspace(np.log(1e-3), np.log(50), n)
    lm = np.linspace(lo, np.log(0.999), n)

    def f(LA, LM):
        A, M = np.exp(LA), np.exp(LM)
        return beta_objective(st, A, A * (1 - M) / M)

    LA, LM = np.meshgrid(la, lm, indexing="ij")
    F = f(LA, LM)
    i = np.unravel_index(np.argmax(F), F.shape)
    best = F[i]
    a0, m0, da, dm = LA[i], LM[i], la[1] - la[0], lm[1] - lm[0]
    for _ in range(4):
        LA2, LM2 = np.meshgrid(np.linspace(a0 - da, a0 + da, 81),
                               np.clip(np.linspace(m0 - dm, m0 + dm, 81), lo, None), indexing="ij")
        F2 = f(LA2, LM2)
        j = np.unravel_index(np.argmax(F2), F2.shape)
        best = max(best, F2[j])
        a0, m0, da, dm = LA2[j], LM2[j], da / 40, dm / 40
    return best


def test_lrt_grid_oracle(rng):
    for _ in range(10):
        p = rng.beta(rng.uniform(0.3, 1.5), rng.uniform(10, 400), int(rng.integers(20, 300)))
        st = BetaStats.from_sample(p)
        lam, _ = lrt_component_vs_null(p, 0.05)
        ref = max(0.0, 2 * (_grid_max(st) - _grid_max(st, 0.05)))
        assert abs(lam - ref) <= 1e-2


def test_lrt_pair_null_distribution():
    rng = np.random.default_rng(2)
    lams = [lrt_pair(rng.beta(0.6, 150, 200), rng.beta(0.6, 150, 200))[0] for _ in range(300)]
    assert stats.kstest(lams, "chi2", args=(2,)).pvalue > 0.01


def test_pairwise_same_distribution_merges():
    merged = 0
    for s in range(40):
        rng = np.random.default_rng(100 + s)
        _, root = pairwise_merge({1: rng.beta(0.6, 150, 150), 2: rng.beta(0.6, 150, 150)})
        merged += root[1] == root[2]
    assert merged / 40 >= 0.9


def test_pairwise_separated_kept():
    kept = 0
    for s in range(40):
        rng = np.random.default_rng(200 + s)
        _, root = pairwise_merge({1: rng.beta(0.524, 404.09, 150), 2: rng.beta(1.533, 79.55, 150)})
        kept += root[1] != root[2]
    assert kept / 40 >= 0.9


def test_pairwise_single_component_identity():
    rows, root = pairwise_merge({3: np.array([0.01, 0.02])})
    assert rows == [] and root == {3: 3}


def test_merge_components_invariants(rng):
    n = 3000
    labels = rng.integers(0, 5, n)
    p = rng.uniform(size=n)
    p[labels == 1] = rng.beta(0.5, 200, (labels == 1).sum())
    p[labels == 2] = rng.beta(0.5, 200, (labels == 2).sum())
    p[labels == 3] = rng.beta(1.5, 60, (labels == 3).sum())
    for method in ("p1", "p2", "p3"):
        rep = merge_components(labels, p, 4, method=method)
        assert rep.relabel[0] == 0
        assert set(np.unique(rep.labels)) <= set(range(rep.K_final + 1))
        assert rep.relabel[4] == 0  # uniform group merges into 0
        assert rep.relabel[1] == rep.relabel[2] != 0
        assert rep.relabel[3] != 0 and rep.relabel[3] != rep.relabel[1]
        assert rep.K_final == 2
        assert np.array_equal(rep.active, rep.labels != 0)
        for k in range(5):
            assert np.all(rep.labels[labels == k] == rep.relabel[k])


def test_merge_without_active_components():
    rep = merge_components(np.zeros(5, int), np.full(5, 0.5), 0)
    assert rep.K_final == 0 and not rep.active.any()
