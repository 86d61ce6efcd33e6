"""Post-fit merging of active components.

Stage 1 tests each active MAP group against ``H0: mean >= eta`` with a
likelihood-ratio statistic and merges non-significant groups into component
0, using one of three FDR procedures on the group p-values:

* ``p1``: Benjamini-Hochberg step-up.
* ``p2``: two-stage adaptive BH (Benjamini, Krieger and Yekutieli) with
  ``q' = q0 / (1 + q0)`` in both stages.
* ``p3``: the same two-stage rule with weighted BH, the weights being the
  group sizes.

Stage 2 tests pairs of surviving groups for a common beta distribution and
joins pairs that are not significantly different.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional

import numpy as np

from .betafit import BetaStats, fit_mean_boundary, fit_unconstrained
from .errors import ParameterError
from .special import chi2_sf

METHODS = ("p1", "p2", "p3")


def _check_p(pvals):
    p = np.asarray(pvals, dtype=float)
    if p.ndim != 1 or np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ParameterError("p-values must be a vector in [0, 1]")
    return p


def weighted_bh_adjust(pvals, weights=None):
    """Weighted BH adjusted p-values (plain BH when ``weights`` is None).

    Weights are rescaled to sum to m.  Sorting by p, the adjusted value of
    the i-th smallest is ``min_{j >= i} m p_(j) / W_j`` capped at 1, where
    ``W_j`` is the cumulative weight of the j smallest p-values.
    """
    p = _check_p(pvals)
    m = p.size
    if m == 0:
        return p.copy()
    if weights is None:
        w = np.ones(m)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != p.shape or np.any(w <= 0):
            raise ParameterError("weights must be positive, one per p-value")
        w = w * m / math.fsum(w)
    order = np.argsort(p, kind="stable")
    cum = np.cumsum(w[order])
    raw = np.minimum(m * p[order] / cum, 1.0)
    adj_sorted = np.minimum.accumulate(raw[::-1])[::-1]
    out = np.empty(m)
    out[order] = adj_sorted
    return out


@dataclass
class FDRResult:
    q: np.ndarray
    reject: np.ndarray
    m0_hat: Optional[float] = None


def fdr_p1(pvals, q0=0.05):
    """Benjamini-Hochberg q-values; reject where ``q <= q0``."""
    q = weighted_bh_adjust(pvals)
    return FDRResult(q, q <= q0, float(q.size))


def _two_stage(pvals, weights, q0):
    p = _check_p(pvals)
    m = p.size
    if m == 0:
        return FDRResult(p.copy(), np.zeros(0, dtype=bool), 0.0)
    qp = q0 / (1.0 + q0)
    adj = weighted_bh_adjust(p, weights)
    r1 = adj <= qp
    if weights is None:
        wt = np.ones(m)
    else:
        wt = np.asarray(weights, dtype=float)
        wt = wt * m / math.fsum(wt)
    m0 = float(m - math.fsum(wt[r1]))
    if m0 <= 1e-12 * m:
        m0 = 0.0
    q = np.minimum(1.0, (1.0 + q0) * (m0 / m) * adj)
    return FDRResult(q, q <= q0, m0)


def fdr_p2(pvals, q0=0.05):
    """Two-stage adaptive BH.

    Stage 1 runs BH at ``q' = q0/(1+q0)``; with ``r1`` rejections the null
    count estimate is ``m0 = m - r1`` and stage 2 runs BH at ``q' m / m0``.
    The returned q-values are ``(1+q0) (m0/m)`` times the BH adjusted
    p-values, so ``q <= q0`` reproduces the stage-2 decisions (none when
    stage 1 rejects nothing, all when it rejects everything).
    """
    return _two_stage(pvals, None, q0)


def fdr_p3(pvals, weights, q0=0.05):
    """Weighted two-stage procedure; ``weights`` are cluster sizes."""
    return _two_stage(pvals, weights, q0)


def fdr(method, pvals, q0=0.05, weights=None):
    if method == "p1":
        return fdr_p1(pvals, q0)
    if method == "p2":
        return fdr_p2(pvals, q0)
    if method == "p3":
        return fdr_p3(pvals, weights, q0)
    raise ParameterError(f"unknown FDR method {method!r}")


def lrt_component_vs_null(pvals, eta=0.05):
    """LRT of ``H0: alpha/(alpha+beta) >= eta`` for one group of p-values.

    Returns ``(Lambda, p)`` with p from the upper tail of chi-square(1).
    When the unrestricted MLE already satisfies H0 the statistic is 0.
    """
    p = np.asarray(pvals, dtype=float)
    if p.size < 2:
        return 0.0, 1.0
    st = BetaStats.from_sample(p)
    a, b, l1 = fit_unconstrained(st)
    if not (np.isfinite(l1) and a > 0 and b > 0):
        return 0.0, 1.0
    if a / (a + b) >= eta:
        return 0.0, 1.0
    _, _, l0 = fit_mean_boundary(st, eta)
    if not np.isfinite(l0):
        return 0.0, 1.0
    lam = max(0.0, 2.0 * (l1 - l0))
    return float(lam), float(chi2_sf(lam, 1))


def lrt_pair(p_k, p_l):
    """LRT of a common beta distribution for two groups; chi-square(2) tail."""
    sk, sl = BetaStats.from_sample(p_k), BetaStats.from_sample(p_l)
    lk = fit_unconstrained(sk)[2]
    ll = fit_unconstrained(sl)[2]
    lj = fit_unconstrained(sk + sl)[2]
    if not all(np.isfinite([lk, ll, lj])):
        return 0.0, 1.0
    lam = max(0.0, 2.0 * (lk + ll - lj))
    return float(lam), float(chi2_sf(lam, 2))


@dataclass
class MergeReport:
    """Outcome of both merging stages.

    ``labels`` is the final labeling with contiguous indices and
    ``relabel`` maps each original component to its final index.
    """

    method: str
    components: List[dict]
    pairs: List[dict]
    relabel: Dict[int, int]
    labels: np.ndarray
    K_final: int

    @property
    def active(self):
        return self.labels != 0


class _UnionFind:
    def __init__(self, items):
        self.parent = {i: i for i in items}

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # keep the smaller index as the root
            self.parent[max(ri, rj)] = min(ri, rj)

    def members(self, i):
        r = self.find(i)
        return [k for k in self.parent if self.find(k) == r]


def pairwise_merge(groups: Dict[int, np.ndarray], q0=0.05):
    """Join surviving components whose p-value distributions agree.

    Pairs are tested with :func:`lrt_pair`, converted to BH q-values, and
    pairs with ``q > q0`` are joined in order of decreasing q.  When both
    sides of a pair already belong to enlarged groups the pooled groups are
    re-tested first and joined only if that raw p-value exceeds ``q0``.

    Returns
    -------
    pairs : list of dict
    root : dict mapping each component to its group representative
    """
    keys = sorted(groups)
    uf = _UnionFind(keys)
    if len(keys) < 2:
        return [], {k: k for k in keys}
    rows = []
    for k, l in combinations(keys, 2):
        lam, p = lrt_pair(groups[k], groups[l])
        rows.append({"k": k, "l": l, "lambda": lam, "p": p})
    q = fdr_p1([r["p"] for r in rows]).q
    for r, qq in zip(rows, q):
        r["q"] = float(qq)
        r["decision"] = "keep"
    for r in sorted(rows, key=lambda r: (-r["q"], r["k"], r["l"])):
        if r["q"] <= q0:
            break
        k, l = r["k"], r["l"]
        if uf.find(k) == uf.find(l):
            r["decision"] = "merge"
            continue
        mk, ml = uf.members(k), uf.members(l)
        if len(mk) > 1 and len(ml) > 1:
            pk = np.concatenate([groups[i] for i in mk])
            pl = np.concatenate([groups[i] for i in ml])
            _, p_re = lrt_pair(pk, pl)
            r["retest_p"] = p_re
            if p_re <= q0:
                continue
        uf.union(k, l)
        r["decision"] = "merge"
    return rows, {k: uf.find(k) for k in keys}


def merge_components(labels, pvals, K, eta=0.05, method="p2", q0=0.05, pairwise=True):
    """Run both merging stages on a MAP labeling.

    Parameters
    ----------
    labels : (n,) int array
        MAP labels in 0..K.
    pvals : (n,) array
        The p-values the labels refer to.
    K : int
        Number of active components in the fit.
    method : {"p1", "p2", "p3"}
    pairwise : bool
        Run the pairwise stage on the surviving components.

    Returns
    -------
    MergeReport
    """
    if method not in METHODS:
        raise ParameterError(f"method must be one of {METHODS}")
    labels = np.asarray(labels)
    pvals = np.asarray(pvals, dtype=float)
    comps = []
    for k in range(1, K + 1):
        pk = pvals[labels == k]
        lam, p = lrt_component_vs_null(pk, eta)
        comps.append({"k": k, "n": int(pk.size), "lambda": lam, "p": p})
    keep = []
    if comps:
        pv = np.array([c["p"] for c in comps])
        sizes = np.array([max(c["n"], 1) for c in comps], dtype=float)
        res = fdr(method, pv, q0, sizes)
        for c, q, rej in zip(comps, res.q, res.reject):
            # an empty group has nothing to keep
            rej = bool(rej) and c["n"] > 0
            c["q"] = float(q)
            c["decision"] = "keep" if rej else "merge-to-0"
            if rej:
                keep.append(c["k"])

    pairs, root = [], {k: k for k in keep}
    if pairwise and len(keep) >= 2:
        pairs, root = pairwise_merge({k: pvals[labels == k] for k in keep}, q0)

    relabel = {0: 0}
    reps = sorted(set(root.values()))
    new_index = {r: i + 1 for i, r in enumerate(reps)}
    for k in range(1, K + 1):
        relabel[k] = new_index[root[k]] if k in root else 0
    lut = np.array([relabel[k] for k in range(K + 1)], dtype=np.int64)
    final = lut[labels]
    return MergeReport(method, comps, pairs, relabel, final, len(reps))
