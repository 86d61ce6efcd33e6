"""Ellipse phantoms and the one-sided normal-test p-value generator.

A pixel of class k gets ``z ~ N(nu_k, 1)`` and reports ``p = 1 - Phi(z)``,
so class 0 (``nu_0 = 0``) is uniform.  The shifts are chosen so that the
pairwise overlap between the null class and each active class equals a
target ``omega``.
"""

import configparser
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import DataError, ParameterError
from .model import PValueField
from .special import norm_cdf, norm_ppf, norm_sf

VARIANTS = ("a", "b", "c", "null")
OMEGAS = (0.01, 0.1, 0.25, 0.5, 0.75, 0.95)


@dataclass
class Ellipse:
    center: Tuple[float, float]
    axes: Tuple[float, float]
    rotation: float = 0.0
    cls: int = 0
    name: str = ""

    def mask(self, nx, ny, scale=1.0):
        x, y = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float), indexing="ij")
        th = np.deg2rad(self.rotation)
        dx, dy = x - self.center[0], y - self.center[1]
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        a, b = self.axes[0] * scale, self.axes[1] * scale
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0


@dataclass
class PhantomSpec:
    """Calibrated phantom: class map on the grid plus the in-brain mask."""

    variant: str
    grid: Tuple[int, int]
    regions: List[Ellipse]
    pi_true: np.ndarray
    in_brain: np.ndarray
    classes: np.ndarray
    scales: Dict[int, float] = field(default_factory=dict)
    version: str = "1"

    @property
    def n(self):
        return int(self.in_brain.sum())

    def realized_pi(self):
        c = self.classes[self.in_brain]
        return np.bincount(c, minlength=3) / c.size

    def coords(self):
        """In-brain pixel indices in row-major order."""
        return np.argwhere(self.in_brain)

    def truth(self):
        return self.classes[self.in_brain]


@dataclass
class ComplexityCalibration:
    omega: float
    nu: np.ndarray
    pi: np.ndarray
    achieved: Dict[str, float]
    convention: str = "null-vs-active overlaps matched; active pair reported"


def _floats(text):
    return tuple(float(t) for t in text.split(","))


def load_geometry(path=None):
    cp = configparser.ConfigParser()
    if path is None:
        cp.read_string(resources.files("pmixseg").joinpath("data/phantoms.cfg").read_text())
    else:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def _ellipse(cp, sec, cls):
    s = cp[sec]
    return Ellipse(_floats(s["center"]), _floats(s["axes"]), float(s.get("rotation", "0")),
                   int(s.get("class", cls)), sec.split(".", 1)[-1])


def _calibrate_scale(regions, nx, ny, in_brain, target, tol):
    # bisection on a common semi-axis scale for the ellipses of one class
    n = in_brain.sum()

    def frac(s):
        m = np.zeros((nx, ny), dtype=bool)
        for e in regions:
            m |= e.mask(nx, ny, s)
        return (m & in_brain).sum() / n, m & in_brain

    lo, hi = 0.0, 1.0
    while frac(hi)[0] < target:
        hi *= 2
        if hi > 64:
            raise DataError("active ellipses cannot reach the requested share")
    best = None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f, m = frac(mid)
        if best is None or abs(f - target) < abs(best[1] - target):
            best = (mid, f, m)
        if abs(f - target) <= 0.1 * tol:
            break
        if f < target:
            lo = mid
        else:
            hi = mid
    if abs(best[1] - target) > tol:
        raise DataError(f"class share {best[1]:.5f} misses target {target} by more than {tol}")
    return best[0], best[2]


def make_phantom(variant="b", path=None) -> PhantomSpec:
    """Build and calibrate a phantom variant (``a``, ``b``, ``c`` or ``null``)."""
    if variant not in VARIANTS:
        raise ParameterError(f"unknown phantom variant {variant!r}")
    cp = load_geometry(path)
    g = cp["geometry"]
    nx, ny = int(g["nx"]), int(g["ny"])
    tol = float(g.get("tolerance", "0.0005"))
    head = _ellipse(cp, "head", 0)
    in_brain = head.mask(nx, ny)
    regions = [head]
    regions += [_ellipse(cp, s, 0) for s in cp.sections() if s.startswith("structure.")]
    active = [_ellipse(cp, s, 1) for s in cp.sections() if s.startswith("active.")]
    classes = np.zeros((nx, ny), dtype=np.int64)
    scales = {}
    if variant == "null":
        pi = np.array([1.0, 0.0, 0.0])
    else:
        pi = np.array(_floats(cp[f"variant.{variant}"]["pi"]))
        for k in (1, 2):
            regs = [e for e in active if e.cls == k]
            s, m = _calibrate_scale(regs, nx, ny, in_brain, pi[k], tol)
            if np.any(classes[m] != 0):
                raise DataError("active regions of different classes overlap")
            classes[m] = k
            scales[k] = s
            regions += [Ellipse(e.center, (e.axes[0] * s, e.axes[1] * s), e.rotation, k, e.name)
                        for e in regs]
    return PhantomSpec(variant, (nx, ny), regions, pi, in_brain, classes, scales,
                       g.get("version", "1"))


def psi_density(p, nu):
    """Density of a one-sided normal-test p-value when the mean shift is ``nu``."""
    p = np.asarray(p, dtype=float)
    z = -norm_ppf(p)  # Phi^{-1}(1 - p) without cancellation
    return np.exp(nu * z - 0.5 * nu * nu)


def pairwise_overlap(nu_k, nu_l, pi_k, pi_l):
    """Misclassification overlap of two weighted unit-variance normals.

    Sum of the probabilities that a draw from one class is assigned to the
    other by the Bayes rule.  Equal shifts give 1 by convention.
    """
    if pi_k <= 0 or pi_l <= 0:
        raise ParameterError("mixing proportions must be positive")
    if nu_k == nu_l:
        return 1.0
    if nu_k > nu_l:
        nu_k, nu_l, pi_k, pi_l = nu_l, nu_k, pi_l, pi_k
    c = 0.5 * (nu_k + nu_l) + np.log(pi_k / pi_l) / (nu_l - nu_k)
    return float(norm_sf(c - nu_k) + norm_cdf(c - nu_l))


def calibrate_nu(pi_true, omega) -> ComplexityCalibration:
    """Shifts (0, nu_1, nu_2) so that each null-vs-active overlap equals ``omega``."""
    if not 0 < omega < 1:
        raise ParameterError("omega must lie in (0, 1)")
    pi = np.asarray(pi_true, dtype=float)
    nu = np.zeros(pi.size)
    for k in range(1, pi.size):
        if pi[k] <= 0:
            continue

        def gap(x):
            return pairwise_overlap(0.0, x, pi[0], pi[k]) - omega

        lo, hi = 1e-9, 1.0
        while gap(hi) > 0:
            hi *= 2
            if hi > 1e3:
                raise ParameterError(f"no bracket for omega={omega}")
        if gap(lo) < 0:
            raise ParameterError(f"no bracket for omega={omega}")
        nu[k] = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14)
    achieved = {}
    for k in range(pi.size):
        for l in range(k + 1, pi.size):
            if pi[k] > 0 and pi[l] > 0:
                achieved[f"{k}{l}"] = pairwise_overlap(nu[k], nu[l], pi[k], pi[l])
    return ComplexityCalibration(float(omega), nu, pi, achieved)


def simulate_field(spec: PhantomSpec, calib: Optional[ComplexityCalibration], seed):
    """Draw one p-value field; returns the field and the true class labels."""
    truth = spec.truth()
    nu = np.zeros(3) if calib is None else calib.nu
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 20101])))
    z = rng.standard_normal(truth.size) + nu[truth]
    p = norm_sf(z)
    fld = PValueField.from_arrays(spec.coords(), p, spec.grid)
    return fld, truth
