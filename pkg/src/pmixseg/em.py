"""Constrained EM for the uniform/beta mixture with a spatial Gaussian factor.

The main entry point is :func:`apecma_fit`.  One iteration runs K+1 cycles;
cycle ``c`` updates ``pi`` and the parameters of component ``c`` from
gathered sufficient statistics (CM-step) and then recomputes only column
``c`` of the cached log-densities before renormalizing the
responsibilities (partial E-step).
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .betafit import BetaStats, maximize_constrained
from .errors import NumericalError, ParameterError
from .model import SIGMA2_MIN, MixtureParams, PValueField, component_log_densities
from .parallel import BlockRunner

MONOTONE_SLACK = 1e-8


@dataclass
class FitConfig:
    K: int = 1
    delta: float = 0.99
    eta: float = 0.05
    epsilon: float = 1e-6
    max_iter: int = 1000
    spatial: bool = True
    seed: int = 0
    workers: int = 1
    init_candidates: int = 50
    p_max_init: float = 0.05
    max_restarts: int = 5

    def __post_init__(self):
        if not 0 < self.delta < 1 or not 0 < self.eta < 1:
            raise ParameterError("delta and eta must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ParameterError("epsilon must be positive")
        if self.init_candidates < 1 or self.workers < 1 or self.K < 0:
            raise ParameterError("K >= 0, M >= 1 and workers >= 1 are required")

    def with_K(self, K):
        return replace(self, K=K)


@dataclass
class Responsibilities:
    """Posterior weights ``w`` and the cache of log component densities.

    The cache is kept as ``log u`` so that far-out voxels do not underflow.
    """

    w: np.ndarray
    log_u: np.ndarray

    @property
    def u(self):
        return np.exp(self.log_u)


@dataclass
class FitResult:
    theta: MixtureParams
    loglik: float
    n_iter: int
    converged: bool
    resp: Responsibilities
    labels: np.ndarray
    trace: List[float]
    valid: bool = True
    reason: str = ""
    criteria: Optional[dict] = None
    history: Optional[List[MixtureParams]] = None
    config: Optional[FitConfig] = None


class _Data:
    """Logarithms of the data computed once per fit."""

    def __init__(self, fld: PValueField, spatial):
        self.fld = fld
        self.log_p = np.log(fld.p)
        self.log_1mp = np.log1p(-fld.p)
        self.v = fld.v
        self.spatial = spatial

    def log_dens(self, theta, cols=None):
        return component_log_densities(self.log_p, self.log_1mp, self.v, theta,
                                       self.spatial, cols)


def _normalize(log_u, pi):
    with np.errstate(divide="ignore"):
        lj = log_u + np.log(pi)
    m = lj.max(axis=1, keepdims=True)
    w = np.exp(lj - m)
    tot = w.sum(axis=1, keepdims=True)
    w /= tot
    return w, float(np.sum(m[:, 0] + np.log(tot[:, 0])))


def e_step(fld: PValueField, theta: MixtureParams, spatial=True) -> Responsibilities:
    """Posterior membership weights, normalized in the log domain."""
    log_u = _Data(fld, spatial).log_dens(theta)
    w, _ = _normalize(log_u, theta.pi)
    return Responsibilities(w, log_u)


def update_pi_constrained(resp_or_sw, delta):
    """Maximize ``sum_ik w_ik log pi_k`` subject to ``pi_0 >= delta``.

    Accepts a Responsibilities object, a weight matrix or the column sums.
    If the unconstrained maximizer already has ``pi_0 >= delta`` it is
    returned; otherwise ``pi_0 = delta`` and the active proportions are
    rescaled to share the remaining ``1 - delta``.
    """
    if isinstance(resp_or_sw, Responsibilities):
        sw = resp_or_sw.w.sum(axis=0)
    else:
        arr = np.asarray(resp_or_sw, dtype=float)
        sw = arr.sum(axis=0) if arr.ndim == 2 else arr
    pi = sw / sw.sum()
    if pi[0] >= delta:
        return pi
    out = np.empty_like(pi)
    out[0] = delta
    rest = 1.0 - pi[0]
    if rest <= 0:
        # nothing outside component 0 to rescale; split the remainder evenly
        out[1:] = (1.0 - delta) / max(pi.size - 1, 1)
    else:
        out[1:] = (1.0 - delta) * pi[1:] / rest
    return out


def _gaussian_from_stats(sw, swv, swvv):
    mu = swv / sw
    sigma2 = np.maximum(swvv / sw, SIGMA2_MIN)
    return mu, sigma2


def update_gaussian(resp, fld: PValueField, k):
    """Weighted mean and per-axis variance (floored) of the coordinates."""
    w = resp.w[:, k] if isinstance(resp, Responsibilities) else np.asarray(resp)[:, k]
    s = w.sum()
    if s <= 0:
        raise NumericalError(f"component {k} carries no weight")
    mu = (w @ fld.v) / s
    sigma2 = np.maximum((w @ (fld.v - mu) ** 2) / s, SIGMA2_MIN)
    return mu, sigma2


def update_beta_constrained(resp, fld: PValueField, k, eta, current):
    """One constrained ascent step on the weighted beta log-likelihood."""
    w = resp.w[:, k] if isinstance(resp, Responsibilities) else np.asarray(resp)[:, k]
    return maximize_constrained(BetaStats.from_sample(fld.p, w), eta, current)


def map_classify(resp):
    """MAP labels; ``argmax`` picks the lowest index among ties."""
    w = resp.w if isinstance(resp, Responsibilities) else np.asarray(resp)
    return np.argmax(w, axis=1)


def _empty(sw_k, n):
    return not sw_k > 1e-8 * n


def _random_component(theta, k, fld, rng):
    # fresh feasible draw for an emptied component
    eta = theta.eta
    a = rng.uniform(0.2, 0.9)
    theta.alpha[k] = a
    theta.beta[k] = a * (1 - eta) / eta * rng.uniform(1.2, 3.0)
    theta.mu[k] = fld.v[rng.integers(fld.n)]
    theta.sigma2[k] = np.full(fld.c_v, 0.01)


def _check_valid(labels, theta, K, c_v, spatial):
    counts = np.bincount(labels, minlength=K + 1)
    need = 1 + c_v if spatial else 2
    if K > 0 and np.any(counts[1:] < need):
        return f"cluster sizes {counts.tolist()} below {need}"
    if spatial and np.any(theta.sigma2 <= SIGMA2_MIN):
        return "a spatial variance collapsed to the floor"
    return ""


def _rel_change(new, old):
    if old == 0.0:
        return new - old
    return (new - old) / abs(old)


def apecma_fit(fld: PValueField, config: FitConfig, theta0: MixtureParams,
               record_history=False) -> FitResult:
    """Fit the mixture for fixed K from ``theta0``.

    Parameters
    ----------
    fld : PValueField
    config : FitConfig
        ``K``, ``delta``, ``eta``, ``epsilon``, ``max_iter``, ``spatial``,
        ``workers`` and ``seed`` are used.
    theta0 : MixtureParams
        Feasible start.
    record_history : bool
        Keep a copy of the parameters after every iteration.

    Returns
    -------
    FitResult
        ``trace`` holds the log-likelihood after the initial E-step and
        after every cycle.

    Raises
    ------
    NumericalError
        If the log-likelihood drops by more than the relative slack.
    """
    theta0.validate()
    K = theta0.K
    theta = theta0.copy()
    data = _Data(fld, config.spatial)
    n = fld.n
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, K, 7919])))
    reinit_done = np.zeros(K + 1, dtype=bool)
    history = [theta.copy()] if record_history else None

    log_u = data.log_dens(theta)
    w, ll = _normalize(log_u, theta.pi)
    trace = [ll]
    ll_old = ll
    converged = False
    reason = ""
    it = 0
    # coordinate statistics only matter with the spatial factor
    v_stats = data.v if config.spatial else np.empty((n, 0))
    mu_fn = None
    if config.spatial:
        def mu_fn(s):
            sw = s.sw[list(s.cols)]
            return s.swv / np.where(sw > 0, sw, 1.0)[:, None]
    with BlockRunner(n, config.workers) as runner:
        while it < config.max_iter:
            it += 1
            reset = False
            for c in range(K + 1):
                # CM-step on {pi, Gamma_c}
                st = runner.stats(w, v_stats, data.log_p, data.log_1mp, (c,), mu_fn=mu_fn)
                sw_c = st.sw[c]
                if _empty(sw_c, n):
                    if c == 0 or reinit_done[c]:
                        reason = f"component {c} emptied twice"
                        break
                    reinit_done[c] = True
                    _random_component(theta, c, fld, rng)
                    reset = True
                else:
                    theta.pi = update_pi_constrained(st.sw, config.delta)
                    if config.spatial:
                        theta.mu[c], theta.sigma2[c] = _gaussian_from_stats(
                            sw_c, st.swv[0], st.swvv[0])
                    if c > 0:
                        bs = BetaStats(float(sw_c), float(st.slp[0]), float(st.sl1p[0]))
                        theta.alpha[c], theta.beta[c] = maximize_constrained(
                            bs, config.eta, (theta.alpha[c], theta.beta[c]))
                # partial E-step: refresh column c only
                log_u[:, c] = data.log_dens(theta, (c,))[:, 0]
                w, ll = _normalize(log_u, theta.pi)
                if not reset and _rel_change(ll, trace[-1]) < -MONOTONE_SLACK:
                    raise NumericalError(
                        f"log-likelihood decreased from {trace[-1]!r} to {ll!r} (iteration {it}, cycle {c})")
                trace.append(ll)
            if reason:
                break
            if record_history:
                history.append(theta.copy())
            if reset:
                ll_old = ll
                continue
            rel = _rel_change(ll, ll_old)
            ll_old = ll
            if rel < config.epsilon:
                converged = True
                break

    labels = map_classify(w)
    if not reason:
        reason = _check_valid(labels, theta, K, fld.c_v, config.spatial)
    return FitResult(theta=theta, loglik=ll, n_iter=it, converged=converged,
                     resp=Responsibilities(w, log_u), labels=labels, trace=trace,
                     valid=not reason, reason=reason, history=history, config=config)


def full_em_fit(fld: PValueField, config: FitConfig, theta0: MixtureParams,
                max_inner=400) -> FitResult:
    """Plain EM with a full E-step and a complete M-step per iteration.

    Slow reference implementation used to cross-check :func:`apecma_fit`.
    """
    theta = theta0.copy()
    K = theta.K
    data = _Data(fld, config.spatial)
    log_u = data.log_dens(theta)
    w, ll = _normalize(log_u, theta.pi)
    trace = [ll]
    converged = False
    it = 0
    while it < config.max_iter:
        it += 1
        theta.pi = update_pi_constrained(w, config.delta)
        for k in range(K + 1):
            theta.mu[k], theta.sigma2[k] = update_gaussian(w, fld, k)
            if k > 0:
                st = BetaStats.from_sample(fld.p, w[:, k])
                theta.alpha[k], theta.beta[k] = maximize_constrained(
                    st, config.eta, (theta.alpha[k], theta.beta[k]), max_iter=max_inner)
        log_u = data.log_dens(theta)
        w, ll_new = _normalize(log_u, theta.pi)
        trace.append(ll_new)
        rel = _rel_change(ll_new, ll)
        ll = ll_new
        if rel < config.epsilon:
            converged = True
            break
    labels = map_classify(w)
    return FitResult(theta=theta, loglik=ll, n_iter=it, converged=converged,
                     resp=Responsibilities(w, log_u), labels=labels, trace=trace,
                     config=config)
