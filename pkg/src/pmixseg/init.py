"""Random best-of-M initialization (Rnd-EM) with feasibility constraints."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .betafit import EPS_C, BetaStats, maximize_constrained
from .em import FitConfig, FitResult, apecma_fit, update_pi_constrained
from .errors import InitializationError
from .model import SIGMA2_MIN, MixtureParams, PValueField, penalized_loglik


@dataclass
class InitCandidate:
    centers: np.ndarray       # (K+1, 1+c_v): p-seed followed by coordinates
    grouping: np.ndarray
    theta0: Optional[MixtureParams]
    loglik0: float
    valid: bool
    index: int = 0


def candidate_rng(seed, K, restart, index):
    """Counter-based generator keyed by (seed, K, restart, candidate)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, K, restart, index])
    return np.random.Generator(np.random.Philox(ss))


def _moment_beta(p, eta):
    # method of moments projected into the feasible set
    m = float(np.mean(p))
    var = float(np.var(p))
    if var > 0 and 0 < m < 1:
        common = m * (1 - m) / var - 1.0
        a, b = m * common, (1 - m) * common
    else:
        a, b = 0.5, 20.0
    if not np.isfinite(a) or a <= 0:
        a = 0.5
    a = min(a, 1.0 - 2 * EPS_C)
    b = max(b, 1.0 + 2 * EPS_C) if np.isfinite(b) else 20.0
    b = max(b, a * (1 - eta) / eta)
    return a, b


def nearest_seed_groups(points, centers):
    """Index of the nearest center (Euclidean) for every point; ties go low."""
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def draw_candidate(fld: PValueField, K, eta, p_max, rng, delta=0.99, spatial=True,
                   index=0) -> InitCandidate:
    """Seed K+1 groups, fit each group and score the result.

    Component 0 is seeded at p = 0.5 and the center of the volume; the K
    active seeds are records drawn without replacement among those with
    ``p < p_max`` (or the K smallest p-values when too few qualify).
    """
    c_v = fld.c_v
    pts = np.column_stack([fld.p, fld.v]) if spatial else fld.p[:, None]
    centers = np.empty((K + 1, pts.shape[1]))
    centers[0] = 0.5
    if K > 0:
        pool = np.flatnonzero(fld.p < p_max)
        if pool.size < K:
            pool = np.argsort(fld.p, kind="stable")[:K]
        pick = rng.choice(pool, size=K, replace=False)
        centers[1:] = pts[pick]
    groups = nearest_seed_groups(pts, centers)
    counts = np.bincount(groups, minlength=K + 1)
    if np.any(counts < 2):
        return InitCandidate(centers, groups, None, -np.inf, False, index)

    pi = update_pi_constrained(counts.astype(float), delta)
    alpha = np.ones(K + 1)
    beta = np.ones(K + 1)
    mu = np.empty((K + 1, c_v))
    sigma2 = np.empty((K + 1, c_v))
    for k in range(K + 1):
        sel = groups == k
        vk = fld.v[sel]
        mu[k] = vk.mean(axis=0)
        sigma2[k] = np.maximum(vk.var(axis=0), SIGMA2_MIN)
        if k > 0:
            pk = fld.p[sel]
            start = _moment_beta(pk, eta)
            alpha[k], beta[k] = maximize_constrained(BetaStats.from_sample(pk), eta, start)
    theta = MixtureParams(pi, alpha, beta, mu, sigma2, delta, eta)
    ll = penalized_loglik(fld, theta, spatial)
    return InitCandidate(centers, groups, theta, ll, bool(np.isfinite(ll)), index)


def best_of_M(fld: PValueField, K, config: FitConfig, restart=0) -> MixtureParams:
    """Best of M valid candidates by penalized log-likelihood.

    Ties go to the lower candidate index.  If none of the first M is
    valid, further candidates are drawn until one is or 10 M were tried.
    """
    M = config.init_candidates
    best = None
    for j in range(10 * M):
        if j >= M and best is not None:
            break
        cand = draw_candidate(fld, K, config.eta, config.p_max_init,
                              candidate_rng(config.seed, K, restart, j),
                              config.delta, config.spatial, j)
        if cand.valid and (best is None or cand.loglik0 > best.loglik0):
            best = cand
    if best is None:
        raise InitializationError(f"no valid start for K={K} after {10 * M} candidates")
    return best.theta0


def fit_K(fld: PValueField, config: FitConfig, record_history=False) -> FitResult:
    """Rnd-EM initialization followed by the constrained fit.

    The whole procedure restarts with fresh candidates when the fit ends
    invalid, up to ``config.max_restarts`` times; the last result is
    returned flagged invalid if no attempt succeeds.
    """
    fld.check_fit_size(config.K)
    res = None
    for r in range(config.max_restarts + 1):
        try:
            theta0 = best_of_M(fld, config.K, config, restart=r)
        except InitializationError:
            if r == config.max_restarts and res is None:
                raise
            continue
        res = apecma_fit(fld, config, theta0, record_history=record_history)
        if res.valid:
            break
    return res
