"""Domain types and densities for the uniform/beta p-value mixture with a
diagonal Gaussian factor over voxel coordinates."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, ParameterError
from .special import betaln

SIGMA2_MIN = 1e-6
P_CLAMP = 1e-12

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class PValueField:
    """Voxel-wise p-values with integer grid coordinates.

    ``coords`` holds grid indices (n, c_v); ``v`` is the per-axis
    normalization ``index / (extent - 1)`` so that every coordinate lies in
    [0, 1].  ``p`` is clamped into ``[P_CLAMP, 1 - P_CLAMP]``; when clamping
    changed a value the untouched input is kept in ``raw_p``.
    """

    coords: np.ndarray
    p: np.ndarray
    dims: Tuple[int, ...]
    raw_p: Optional[np.ndarray] = None
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords)
        self.p = np.asarray(self.p, dtype=float)
        self.dims = tuple(int(d) for d in self.dims)
        if self.coords.ndim != 2 or self.coords.shape[0] != self.p.shape[0]:
            raise DataError("coords must be (n, c_v) with one row per p-value")
        if self.coords.shape[1] not in (2, 3):
            raise DataError("only 2D slices or 3D volumes are supported")
        if len(self.dims) != self.coords.shape[1]:
            raise DataError("dims must have one extent per coordinate axis")
        scale = np.array([max(d - 1, 1) for d in self.dims], dtype=float)
        self.v = self.coords.astype(float) / scale
        if np.any(self.v < 0) or np.any(self.v > 1):
            raise DataError("coordinates fall outside the grid extents")

    @classmethod
    def from_arrays(cls, coords, p, dims=None):
        """Build a field, validating p and clamping exact 0/1 values."""
        coords = np.asarray(coords)
        p = np.asarray(p, dtype=float)
        if p.ndim != 1:
            raise DataError("p must be one-dimensional")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise DataError("p-values must lie in [0, 1]")
        if dims is None:
            dims = tuple(int(m) + 1 for m in coords.max(axis=0))
        clamped = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
        raw = p.copy() if np.any(clamped != p) else None
        return cls(coords=coords, p=clamped, dims=dims, raw_p=raw)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def c_v(self) -> int:
        return self.coords.shape[1]

    def check_fit_size(self, K: int):
        need = K * (1 + self.c_v) + 1
        if self.n < need:
            raise DataError(f"{self.n} records cannot support K={K} (need >= {need})")


@dataclass
class ComponentParams:
    alpha: float
    beta: float
    mu: np.ndarray
    sigma2: np.ndarray


@dataclass
class MixtureParams:
    """Parameters of the K+1 component mixture stored column-wise.

    Row 0 of every array is the inactive (uniform) component.
    """

    pi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    delta: float
    eta: float

    @property
    def K(self) -> int:
        return self.pi.shape[0] - 1

    @property
    def components(self) -> List[ComponentParams]:
        return [self.component(k) for k in range(self.K + 1)]

    def component(self, k: int) -> ComponentParams:
        return ComponentParams(float(self.alpha[k]), float(self.beta[k]),
                               self.mu[k].copy(), self.sigma2[k].copy())

    def copy(self) -> "MixtureParams":
        return MixtureParams(self.pi.copy(), self.alpha.copy(), self.beta.copy(),
                             self.mu.copy(), self.sigma2.copy(), self.delta, self.eta)

    def validate(self, tol=1e-12):
        """Raise ParameterError unless every mixture constraint holds."""
        pi = self.pi
        if not 0 < self.delta < 1 or not 0 < self.eta < 1:
            raise ParameterError("delta and eta must lie in (0, 1)")
        if np.any(pi < -tol) or abs(pi.sum() - 1.0) > tol:
            raise ParameterError(f"pi is not on the simplex: {pi}")
        if pi[0] < self.delta - tol:
            raise ParameterError(f"pi_0={pi[0]} below delta={self.delta}")
        if self.alpha[0] != 1.0 or self.beta[0] != 1.0:
            raise ParameterError("component 0 must be uniform (alpha=beta=1)")
        a, b = self.alpha[1:], self.beta[1:]
        if np.any(a <= 0) or np.any(a >= 1) or np.any(b <= 1):
            raise ParameterError("active components need 0 < alpha < 1 < beta")
        if np.any(a / (a + b) > self.eta + tol):
            raise ParameterError("active component mean exceeds eta")
        if np.any(self.sigma2 < SIGMA2_MIN * (1 - 1e-12)):
            raise ParameterError("sigma2 below floor")


def _check_beta_args(p, alpha, beta):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ParameterError("p must lie strictly inside (0, 1)")
    if np.any(np.asarray(alpha) <= 0) or np.any(np.asarray(beta) <= 0):
        raise ParameterError("beta shape parameters must be positive")
    return p


def beta_log_density(p, alpha, beta):
    """``log b(p; alpha, beta)``, broadcasting over arrays."""
    p = _check_beta_args(p, alpha, beta)
    return (alpha - 1.0) * np.log(p) + (beta - 1.0) * np.log1p(-p) - betaln(alpha, beta)


def gaussian_log_density(v, mu, sigma2):
    """Sum over axes of univariate normal log-densities (diagonal covariance)."""
    v = np.asarray(v, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ParameterError("sigma2 entries must be positive")
    return -0.5 * np.sum(_LOG_2PI + np.log(sigma2) + (v - mu) ** 2 / sigma2, axis=-1)


def joint_log_density(p, v, gamma: ComponentParams, spatial=True):
    """log f(p, v; Gamma) = log b(p; alpha, beta) + log phi(v; mu, Sigma)."""
    out = beta_log_density(p, gamma.alpha, gamma.beta)
    if spatial:
        out = out + gaussian_log_density(v, gamma.mu, gamma.sigma2)
    return out


def component_log_densities(log_p, log_1mp, v, theta: MixtureParams, spatial=True,
                            cols: Optional[Sequence[int]] = None):
    """Matrix of ``log f(p_i, v_i; Gamma_k)`` for the requested columns.

    Takes precomputed ``log p`` and ``log(1-p)`` so the E-step never
    recomputes logarithms of the data.
    """
    cols = range(theta.K + 1) if cols is None else cols
    out = np.empty((log_p.shape[0], len(cols)))
    for j, k in enumerate(cols):
        if k == 0:
            col = np.zeros_like(log_p)
        else:
            a, b = theta.alpha[k], theta.beta[k]
            col = (a - 1.0) * log_p + (b - 1.0) * log_1mp - betaln(a, b)
        if spatial:
            s2 = theta.sigma2[k]
            col = col - 0.5 * (np.sum(_LOG_2PI + np.log(s2))
                               + np.sum((v - theta.mu[k]) ** 2 / s2, axis=1))
        out[:, j] = col
    return out


def penalized_loglik(fld: PValueField, theta: MixtureParams, spatial=True) -> float:
    """Observed-data log-likelihood of the spatially penalized mixture."""
    log_u = component_log_densities(np.log(fld.p), np.log1p(-fld.p), fld.v, theta, spatial)
    with np.errstate(divide="ignore"):
        log_pi = np.log(theta.pi)
    return float(np.sum(logsumexp(log_u + log_pi, axis=1)))
