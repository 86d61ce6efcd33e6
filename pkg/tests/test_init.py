import numpy as np
import pytest

from conftest import blob_field, grid_field
from pmixseg.em import FitConfig
from pmixseg.errors import InitializationError
from pmixseg.init import (best_of_M, candidate_rng, draw_candidate, fit_K,
                          nearest_seed_groups)


def test_K0_single_group(rng):
    fld = grid_field(6, 6, rng.uniform(size=36))
    c = draw_candidate(fld, 0, 0.05, 0.05, candidate_rng(0, 0, 0, 0))
    assert c.valid and np.all(c.grouping == 0)
    th = c.theta0
    assert th.K == 0 and th.pi[0] == 1.0 and th.alpha[0] == 1 and th.beta[0] == 1
    assert np.allclose(th.mu[0], fld.v.mean(axis=0))
    assert np.allclose(th.sigma2[0], fld.v.var(axis=0))


def test_identical_seeds_invalid():
    p = np.full(16, 0.7)
    p[:2] = 0.001
    fld = grid_field(4, 4, p)
    # records 0 and 1 differ only in y; force K=2 to seed both at record 0's p and v
    fld.coords[1] = fld.coords[0]
    fld.v[1] = fld.v[0]
    c = draw_candidate(fld, 2, 0.05, 0.01, candidate_rng(0, 2, 0, 0))
    assert not c.valid


def test_nearest_seed_oracle(rng):
    pts = rng.uniform(size=(200, 3))
    ctr = rng.uniform(size=(4, 3))
    g = nearest_seed_groups(pts, ctr)
    for i in range(200):
        d = [np.linalg.norm(pts[i] - c) for c in ctr]
        assert g[i] == int(np.argmin(d))


def test_seed_zero_is_neutral(rng):
    fld = blob_field(2, 500, 2)
    c = draw_candidate(fld, 2, 0.05, 0.05, candidate_rng(1, 2, 0, 0))
    assert np.all(c.centers[0] == 0.5)
    assert np.all(fld.p[np.isin(np.arange(fld.n), [])] < 0.05)
    assert np.all(c.centers[1:, 0] < 0.05)


def test_candidates_feasible():
    fld = blob_field(4, 600, 2)
    for j in range(20):
        c = draw_candidate(fld, 2, 0.05, 0.05, candidate_rng(9, 2, 0, j), delta=0.95)
        if c.valid:
            c.theta0.validate()
            assert c.theta0.pi[0] >= 0.95


def test_M1_returns_that_candidate():
    fld = blob_field(5, 500, 1)
    cfg = FitConfig(K=1, delta=0.9, init_candidates=1, seed=3)
    th = best_of_M(fld, 1, cfg)
    c = draw_candidate(fld, 1, 0.05, 0.05, candidate_rng(3, 1, 0, 0), 0.9)
    assert c.valid
    assert np.array_equal(th.alpha, c.theta0.alpha) and np.array_equal(th.mu, c.theta0.mu)


def test_best_is_max_loglik():
    fld = blob_field(6, 500, 2)
    cfg = FitConfig(K=2, delta=0.9, init_candidates=8, seed=1)
    th = best_of_M(fld, 2, cfg)
    lls = [draw_candidate(fld, 2, 0.05, 0.05, candidate_rng(1, 2, 0, j), 0.9).loglik0
           for j in range(8)]
    from pmixseg.model import penalized_loglik
    assert penalized_loglik(fld, th) == max(lls)


def test_no_valid_candidate_raises():
    fld = grid_field(2, 2, np.array([0.01, 0.5, 0.6, 0.7]))
    with pytest.raises(InitializationError):
        best_of_M(fld, 3, FitConfig(K=3, delta=0.5, init_candidates=2))


def test_pipeline_deterministic():
    fld = blob_field(7, 700, 2)
    cfg = FitConfig(K=2, delta=0.95, init_candidates=5, seed=11)
    a, b = fit_K(fld, cfg), fit_K(fld, cfg)
    assert a.loglik == b.loglik and np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.theta.beta, b.theta.beta)
