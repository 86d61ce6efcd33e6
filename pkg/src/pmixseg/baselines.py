"""Competing voxel-wise and cluster-extent thresholding rules."""

import hashlib

import numpy as np
from scipy import ndimage

from .errors import DataError, ParameterError
from .merging import weighted_bh_adjust

_STRUCT = {
    1: ndimage.generate_binary_structure(2, 1),  # faces: 4-neighbour
    2: ndimage.generate_binary_structure(2, 2),  # faces or corners: 8-neighbour
}


def bonferroni(pvals, alpha=0.05):
    p = np.asarray(pvals, dtype=float)
    return p <= alpha / p.size


def bh_threshold(pvals, q=0.05):
    return weighted_bh_adjust(pvals) <= q


def by_threshold(pvals, q=0.05):
    """BH at level ``q / H_n`` with ``H_n`` the n-th harmonic number."""
    p = np.asarray(pvals, dtype=float)
    h = np.sum(1.0 / np.arange(1, p.size + 1))
    return weighted_bh_adjust(p) <= q / h


def cluster_sizes(active, order=1):
    """Label supra-threshold clusters; returns (labels, sizes) with sizes[0] = 0."""
    lab, nlab = ndimage.label(active, structure=_STRUCT[order])
    sizes = np.bincount(lab.ravel(), minlength=nlab + 1)
    sizes[0] = 0
    return lab, sizes


def null_max_cluster_sizes(mask, p0, order, n_null, seed):
    """Largest cluster size in each of ``n_null`` uniform fields on ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 4242, order])))
    out = np.empty(n_null, dtype=np.int64)
    for r in range(n_null):
        u = rng.random(mask.shape)
        _, sizes = cluster_sizes(mask & (u <= p0), order)
        out[r] = sizes.max() if sizes.size else 0
    return out


_SMIN_CACHE = {}


def min_cluster_size(mask, p0=0.001, order=1, n_null=1000, alpha=0.05, seed=0):
    """Smallest size ``s`` with ``P_null(max cluster >= s) <= alpha``.

    Estimated by Monte Carlo on ``mask``; results are cached per setting.
    """
    mask = np.asarray(mask, dtype=bool)
    key = (hashlib.sha1(np.packbits(mask).tobytes() + str(mask.shape).encode()).hexdigest(),
           float(p0), int(order), int(n_null), float(alpha), int(seed))
    if key not in _SMIN_CACHE:
        mx = null_max_cluster_sizes(mask, p0, order, n_null, seed)
        s = 1
        while np.mean(mx >= s) > alpha:
            s += 1
        _SMIN_CACHE[key] = s
    return _SMIN_CACHE[key]


def cluster_threshold(pgrid, mask=None, p0=0.001, order=1, n_null=1000, alpha=0.05, seed=0):
    """Cluster-extent thresholding on a 2D grid.

    Parameters
    ----------
    pgrid : (nx, ny) array
        p-values on the grid; entries outside ``mask`` are ignored.
    mask : (nx, ny) bool array, optional
        In-brain mask; defaults to the finite entries of ``pgrid``.
    order : {1, 2}
        1 for 4-neighbour (faces) and 2 for 8-neighbour (faces or corners)
        connectivity.

    Returns
    -------
    (nx, ny) bool array of detected voxels.
    """
    pgrid = np.asarray(pgrid, dtype=float)
    if pgrid.ndim != 2:
        raise DataError("cluster thresholding needs a 2D grid")
    if order not in _STRUCT:
        raise ParameterError("order must be 1 or 2")
    if mask is None:
        mask = np.isfinite(pgrid)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("empty mask")
    supra = mask & (np.nan_to_num(pgrid, nan=1.0) <= p0)
    if not supra.any():
        return supra
    s_min = min_cluster_size(mask, p0, order, n_null, alpha, seed)
    lab, sizes = cluster_sizes(supra, order)
    keep = sizes >= s_min
    keep[0] = False
    return keep[lab]


def to_grid(values, coords, dims, fill=np.nan):
    """Scatter per-record values onto the grid."""
    out = np.full(tuple(dims), fill, dtype=float)
    out[tuple(np.asarray(coords).T)] = values
    return out
