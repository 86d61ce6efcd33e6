"""Weighted beta log-likelihood maximization.

All routines work on the three sufficient statistics of a weighted beta
sample, ``s = sum w``, ``a = sum w log p`` and ``b = sum w log(1-p)``, so
the objective ``(alpha-1) a + (beta-1) b - s log B(alpha, beta)`` is cheap
to evaluate and the same code serves the M-step, initialization and the
merge tests.  The objective is concave in (alpha, beta).
"""

import math
from dataclasses import dataclass

import numpy as np

from .special import betaln, digamma, trigamma

EPS_C = 1e-4
MAX_INNER = 25


@dataclass(frozen=True)
class BetaStats:
    s: float
    a: float
    b: float

    @classmethod
    def from_sample(cls, p, w=None):
        p = np.asarray(p, dtype=float)
        w = np.ones_like(p) if w is None else np.asarray(w, dtype=float)
        return cls(float(w.sum()), float(w @ np.log(p)), float(w @ np.log1p(-p)))

    def __add__(self, other):
        return BetaStats(self.s + other.s, self.a + other.a, self.b + other.b)


def beta_objective(st: BetaStats, alpha, beta):
    """Weighted beta log-likelihood ``sum_i w_i log b(p_i; alpha, beta)``."""
    return (alpha - 1.0) * st.a + (beta - 1.0) * st.b - st.s * betaln(alpha, beta)


def is_feasible(alpha, beta, eta, tol=1e-12):
    return 0.0 < alpha < 1.0 < beta and alpha / (alpha + beta) <= eta + tol


def _grad_hess(st, x):
    al, be = float(x[0]), float(x[1])
    ab = al + be
    dab, tab = digamma(ab), trigamma(ab)
    g = np.array([st.a / st.s - digamma(al) + dab, st.b / st.s - digamma(be) + dab])
    h = -np.array([[trigamma(al) - tab, -tab], [-tab, trigamma(be) - tab]])
    return g, h


def _constraints(eta, eps_c):
    # rows (c_alpha, c_beta, d): c . x + d >= 0
    return np.array([
        [-1.0, 0.0, 1.0 - eps_c],
        [0.0, 1.0, -(1.0 + eps_c)],
        [-(1.0 - eta), eta, 0.0],
    ])


def _interior_start(x, eta, eps_c):
    al, be = float(x[0]), float(x[1])
    if not np.isfinite(al) or al <= 0:
        al = 0.5
    al = min(al, 1.0 - 2.0 * eps_c)
    be = max(be, 1.0 + 2.0 * eps_c) if np.isfinite(be) else 1.0 + 2.0 * eps_c
    # keep the mean strictly below eta
    limit = 0.999 * eta * be / (1.0 - eta)
    if al >= limit:
        al = limit
    return np.array([al, be])


def _newton_ascent(st, x, cons, t, t_min, max_iter):
    """Damped Newton on f/s + t * sum log g over a shrinking barrier weight.

    Works on Python floats; the problem is two-dimensional and numpy call
    overhead would dominate.  Returns the best point by the unbarriered
    objective, its value and the number of Newton iterations spent.
    """
    sa, sb = st.a / st.s, st.b / st.s
    rows = [] if cons is None else [tuple(float(v) for v in r) for r in cons]

    def fs(a, b):
        return (a - 1.0) * sa + (b - 1.0) * sb - betaln(a, b)

    def slacks(a, b):
        return [ca * a + cb * b + d for ca, cb, d in rows]

    def phi(a, b, t):
        val = fs(a, b)
        for g in slacks(a, b):
            val += t * math.log(g)
        return val

    def ok(a, b):
        if not (a > 0.0 and b > 0.0 and math.isfinite(a) and math.isfinite(b)):
            return False
        return all(g > 0.0 for g in slacks(a, b))

    a, b = float(x[0]), float(x[1])
    best_a, best_b, best_f = a, b, fs(a, b)
    barrier = bool(rows)
    it = 0
    while it < max_iter:
        it += 1
        ab = a + b
        dab, tab = digamma(ab), trigamma(ab)
        g0 = sa - digamma(a) + dab
        g1 = sb - digamma(b) + dab
        h00 = tab - trigamma(a)
        h11 = tab - trigamma(b)
        h01 = tab
        if barrier:
            for (ca, cb, d), g in zip(rows, slacks(a, b)):
                g0 += t * ca / g
                g1 += t * cb / g
                q = t / (g * g)
                h00 -= q * ca * ca
                h01 -= q * ca * cb
                h11 -= q * cb * cb
        det = h00 * h11 - h01 * h01
        if det != 0.0 and math.isfinite(det):
            s0 = -(h11 * g0 - h01 * g1) / det
            s1 = -(h00 * g1 - h01 * g0) / det
        else:
            s0, s1 = g0, g1
        dec = g0 * s0 + g1 * s1
        if not math.isfinite(dec) or dec < 0:
            s0, s1 = g0, g1
            dec = g0 * g0 + g1 * g1
        if dec < 1e-13:
            if not barrier or t <= t_min:
                break
            t = max(t * 0.1, t_min)
            continue
        f0 = phi(a, b, t if barrier else 0.0)
        u = 1.0
        for _ in range(60):
            na, nb = a + u * s0, b + u * s1
            if ok(na, nb):
                f1 = phi(na, nb, t if barrier else 0.0)
                if f1 >= f0 + 0.25 * u * dec:
                    break
            u *= 0.5
        else:
            break
        stalled = f1 - f0 <= 1e-14 * max(1.0, abs(f0))
        a, b = na, nb
        fx = fs(a, b)
        if fx > best_f:
            best_a, best_b, best_f = a, b, fx
        if barrier and (dec < 1e-8 or stalled):
            # progress is at rounding level or the barrier centre is reached
            if stalled and t <= t_min:
                break
            t = max(t * 0.1, t_min)
        elif stalled:
            break
    return np.array([best_a, best_b]), best_f * st.s, it


def maximize_constrained(st: BetaStats, eta, current=None, max_iter=MAX_INNER, eps_c=EPS_C):
    """Ascend the weighted beta log-likelihood inside the constraint set
    ``alpha <= 1 - eps_c``, ``beta >= 1 + eps_c``, ``alpha/(alpha+beta) <= eta``.

    Parameters
    ----------
    st : BetaStats
        Weighted sufficient statistics.
    eta : float
        Upper bound on the component mean.
    current : (alpha, beta), optional
        Present value.  If it is feasible the returned point never has a
        smaller objective (the generalized-EM requirement); when no
        improvement is found ``current`` comes back unchanged.
    max_iter : int
        Budget of Newton iterations.

    Returns
    -------
    (alpha, beta) : tuple of float
    """
    if current is None:
        current = (0.5, max(2.0, 0.5 * (1 - eta) / eta * 1.5))
    current = (float(current[0]), float(current[1]))
    cur_ok = is_feasible(current[0], current[1], eta)
    if st.s <= 0 or not np.isfinite(st.a) or not np.isfinite(st.b):
        return current
    f_cur = beta_objective(st, *current) if cur_ok else -np.inf

    x0 = _interior_start(np.array(current), eta, eps_c)
    cons = _constraints(eta, eps_c)
    x, fx, _ = _newton_ascent(st, x0, cons, t=1e-3, t_min=1e-11, max_iter=max_iter)
    if fx >= f_cur and is_feasible(x[0], x[1], eta):
        return float(x[0]), float(x[1])
    if cur_ok:
        return current
    return float(x0[0]), float(x0[1])


def fit_constrained(st: BetaStats, eta, start=None, eps_c=EPS_C):
    """Run the constrained ascent to convergence (no iteration cap in practice)."""
    return maximize_constrained(st, eta, start, max_iter=400, eps_c=eps_c)


def _moment_free_start(st):
    g1, g2 = np.exp(st.a / st.s), np.exp(st.b / st.s)
    denom = max(1.0 - g1 - g2, 1e-6)
    return np.array([0.5 + g1 / (2 * denom), 0.5 + g2 / (2 * denom)])


def fit_unconstrained(st: BetaStats, max_iter=200):
    """Beta MLE with only alpha, beta > 0.  Returns (alpha, beta, loglik)."""
    x0 = _moment_free_start(st)
    x, fx, _ = _newton_ascent(st, x0, None, 0.0, 0.0, max_iter)
    return float(x[0]), float(x[1]), float(fx)


def fit_mean_boundary(st: BetaStats, eta, max_iter=200):
    """Beta MLE restricted to the line ``alpha / (alpha + beta) = eta``.

    Newton on alpha with ``beta = r alpha``, ``r = (1 - eta) / eta``; the
    restricted objective is concave in alpha.  Returns (alpha, beta, loglik).
    """
    r = (1.0 - eta) / eta

    def f(al):
        return beta_objective(st, al, r * al)

    al = max(_moment_free_start(st)[0], 1e-3)
    fa = f(al)
    for _ in range(max_iter):
        d1 = st.a + r * st.b - st.s * (digamma(al) + r * digamma(r * al)
                                       - (1 + r) * digamma((1 + r) * al))
        d2 = -st.s * (trigamma(al) + r * r * trigamma(r * al)
                      - (1 + r) ** 2 * trigamma((1 + r) * al))
        step = -d1 / d2 if d2 < 0 else d1
        u = 1.0
        while u > 1e-14:
            cand = al + u * step
            if cand > 0 and f(cand) >= fa:
                break
            u *= 0.5
        else:
            break
        if abs(cand - al) <= 1e-13 * max(al, 1e-300):
            al, fa = cand, f(cand)
            break
        al, fa = cand, f(cand)
    return float(al), float(r * al), float(fa)
