"""Choosing the number of active components with AIC, BIC or ICL-BIC."""

import numpy as np

from .em import FitConfig, FitResult
from .errors import InitializationError, NumericalError, ParameterError
from .init import fit_K

CRITERIA = ("aic", "bic", "iclbic")


def param_count(K, c_v, spatial=True):
    """Free parameters of the K-component model.

    With the spatial factor: ``K (3 + 2 c_v) + 2 c_v``.  Without it only
    ``pi_k, alpha_k, beta_k`` remain for each active component.
    """
    if K < 0:
        raise ParameterError("K must be non-negative")
    if spatial:
        return K * (3 + 2 * c_v) + 2 * c_v
    return 3 * K


def entropy(w):
    """``sum_ik -w_ik log w_ik`` with ``0 log 0 = 0``."""
    w = np.asarray(w, dtype=float)
    pos = w > 0
    return float(-np.sum(w[pos] * np.log(w[pos])))


def criteria(loglik, d, n, w=None):
    """AIC, BIC and ICL-BIC (BIC plus twice the classification entropy)."""
    aic = -2.0 * loglik + 2.0 * d
    bic = -2.0 * loglik + d * np.log(n)
    icl = bic + (2.0 * entropy(w) if w is not None else 0.0)
    return {"aic": float(aic), "bic": float(bic), "iclbic": float(icl)}


def fit_criteria(fit: FitResult, fld, spatial=True):
    d = param_count(fit.theta.K, fld.c_v, spatial)
    fit.criteria = criteria(fit.loglik, d, fld.n, fit.resp.w)
    return fit.criteria


def select_K(fld, config: FitConfig, K_max, criterion="bic", keep_fits=False):
    """Fit K = 0..K_max and keep the minimizer of ``criterion``.

    Ties go to the smaller K; invalid fits are recorded but never chosen.

    Returns
    -------
    best : FitResult
    table : list of dict
        One row per K with the log-likelihood, every criterion and the
        validity flag.  When ``keep_fits`` is set each row also carries
        its ``FitResult`` under ``"fit"``.
    """
    if criterion not in CRITERIA:
        raise ParameterError(f"criterion must be one of {CRITERIA}")
    if K_max < 0:
        raise ParameterError("K_max must be non-negative")
    best, table = None, []
    for K in range(K_max + 1):
        if fld.n < K * (1 + fld.c_v) + 1:
            break
        try:
            fit = fit_K(fld, config.with_K(K))
        except InitializationError as exc:
            table.append({"K": K, "valid": False, "reason": str(exc)})
            continue
        crit = fit_criteria(fit, fld, config.spatial)
        row = {"K": K, "loglik": fit.loglik, "valid": fit.valid, "reason": fit.reason,
               "n_iter": fit.n_iter, "converged": fit.converged, **crit}
        if keep_fits:
            row["fit"] = fit
        table.append(row)
        if fit.valid and (best is None or crit[criterion] < best.criteria[criterion]):
            best = fit
    if best is None:
        raise NumericalError("no K produced a valid fit")
    return best, table
