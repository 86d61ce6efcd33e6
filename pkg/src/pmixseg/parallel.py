"""Block-partitioned sufficient statistics for the EM engine.

Records are split into ``D`` consecutive row blocks.  Each block produces a
:class:`LocalStats` from its slice of the responsibilities and the reducer
combines them in block order.

Sums are reproducible: every term is split into ``FOLDS`` slices on a
binary grid fixed by the global maximum magnitude of its column, and each
slice is summed as an exact integer.  Totals are therefore bitwise
identical for any block count, which keeps serial and parallel fits on the
same trajectory.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

FOLDS = 3


@dataclass(frozen=True)
class BlockPartition:
    D: int
    offsets: np.ndarray

    @property
    def sizes(self):
        return np.diff(self.offsets)

    @property
    def n(self):
        return int(self.offsets[-1])

    def slices(self):
        return [slice(int(self.offsets[d]), int(self.offsets[d + 1])) for d in range(self.D)]


def partition(n, D):
    """Split ``n`` records into ``D`` contiguous blocks of near-equal size.

    The first ``n mod D`` blocks get one extra record.
    """
    n, D = int(n), int(D)
    if D < 1:
        raise ValueError("need at least one block")
    if D > n:
        raise DataError(f"cannot split {n} records into {D} blocks")
    base, extra = divmod(n, D)
    sizes = np.full(D, base, dtype=np.int64)
    sizes[:extra] += 1
    return BlockPartition(D, np.concatenate([[0], np.cumsum(sizes)]))


def fold_grid(maxabs, n):
    """Exponents ``e`` (``|x| < 2**e`` per column) and slice width ``b`` bits.

    ``b`` leaves room for ``n`` integer slices to add without rounding.
    ``e`` is floored at -800 so every grid step stays a normal float.
    """
    e = np.frexp(np.asarray(maxabs, dtype=float))[1].astype(np.int64)
    b = 51 - int(np.ceil(np.log2(max(int(n), 2))))
    return np.maximum(e, -800), b


def fold(x, e, b):
    """Integer slice sums of ``x`` (one row per statistic), shape ``(FOLDS, m)``."""
    r = np.asarray(x, dtype=float)
    out = np.empty((FOLDS, r.shape[0]))
    for j in range(FOLDS):
        sh = (e - (j + 1) * b)[:, None]
        # scaling by powers of two is exact
        k = np.rint(r * np.ldexp(1.0, -sh))
        out[j] = k.sum(axis=1)
        if j < FOLDS - 1:
            r = r - k * np.ldexp(1.0, sh)
    return out


def unfold(folds, e, b):
    """Float totals from slice sums, finest slice first."""
    tot = np.zeros(folds.shape[1])
    for j in range(FOLDS - 1, -1, -1):
        tot = tot + folds[j] * np.ldexp(1.0, e - (j + 1) * b)
    return tot


def _terms(w, v, log_p, log_1mp, cols):
    # one row per statistic: sw (all K+1) | w_c v (c_v per col) | w_c log p | w_c log(1-p)
    ws = w[:, list(cols)].T
    wv = (ws[:, None, :] * v.T[None, :, :]).reshape(-1, len(v))
    return np.concatenate([w.T, wv, ws * log_p, ws * log_1mp])


@dataclass
class LocalStats:
    """Per-block sufficient statistics.

    ``sw`` covers every component; the remaining fields cover the
    components listed in ``cols`` (one row each).  ``swvv`` is the weighted
    squared deviation about the means supplied for the second pass and is
    ``None`` until then.  ``folds``, ``exps`` and ``bits`` hold the exact
    slice sums behind ``sw``, ``swv``, ``slp`` and ``sl1p``.
    """

    cols: tuple
    sw: np.ndarray
    swv: np.ndarray
    slp: np.ndarray
    sl1p: np.ndarray
    swvv: Optional[np.ndarray] = None
    block: int = -1
    folds: Optional[np.ndarray] = None
    exps: Optional[np.ndarray] = None
    bits: int = 0

    @classmethod
    def from_folds(cls, folds, exps, bits, cols, K1, c_v, block=-1):
        tot = unfold(folds, exps, bits)
        m = len(cols)
        o = K1 + m * c_v
        return cls(tuple(cols), tot[:K1], tot[K1:o].reshape(m, c_v), tot[o:o + m],
                   tot[o + m:o + 2 * m], block=block, folds=folds, exps=exps, bits=bits)


def local_stats(w, v, log_p, log_1mp, cols, block=-1, exps=None, bits=None):
    """Block statistics; the fold grid defaults to this block's own range."""
    t = _terms(w, v, log_p, log_1mp, cols)
    if exps is None:
        exps, bits = fold_grid(np.abs(t).max(axis=1), t.shape[1])
    return LocalStats.from_folds(fold(t, exps, bits), exps, bits, cols, w.shape[1],
                                 v.shape[1], block)


def local_spread(w, v, cols, mu):
    """Second pass: per-record ``w_ik (v_i - mu_k)^2``, shape (len(cols) * c_v, n_b)."""
    ws = w[:, list(cols)].T
    d2 = (v.T[None, :, :] - np.asarray(mu)[:, :, None]) ** 2
    return (ws[:, None, :] * d2).reshape(-1, len(v))


def gather_reduce(stats: Sequence[LocalStats], D=None):
    """Combine block statistics in fixed block order.

    Blocks are reordered by their ``block`` index.  When ``D`` is given
    every block 0..D-1 must be present exactly once.  All blocks must share
    one fold grid; the slice sums then add exactly.
    """
    stats = list(stats)
    if not stats:
        raise DataError("nothing to reduce")
    if D is not None:
        got = sorted(s.block for s in stats)
        if got != list(range(D)):
            raise DataError(f"expected blocks 0..{D - 1}, got {got}")
    stats.sort(key=lambda s: s.block)
    first = stats[0]
    folds = first.folds.copy()
    for s in stats[1:]:
        if s.cols != first.cols:
            raise DataError("blocks disagree on component columns")
        if s.bits != first.bits or not np.array_equal(s.exps, first.exps):
            raise DataError("blocks disagree on the summation grid")
        folds = folds + s.folds
    return LocalStats.from_folds(folds, first.exps, first.bits, first.cols, first.sw.size,
                                 first.swv.shape[1])


class BlockRunner:
    """Evaluates per-block work over a fixed partition.

    With ``workers > 1`` blocks are dispatched to a thread pool; results
    always come back in block order.
    """

    def __init__(self, n, workers=1):
        self.part = partition(n, workers)
        self.slices = self.part.slices()
        self._pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def map(self, fn):
        if self._pool is None:
            return [fn(d, sl) for d, sl in enumerate(self.slices)]
        futs = [self._pool.submit(fn, d, sl) for d, sl in enumerate(self.slices)]
        return [f.result() for f in futs]

    def _exact_sum(self, parts):
        # global grid from the blockwise maxima, then exact slice sums
        mx = np.max([np.abs(t).max(axis=1) for t in parts], axis=0)
        e, b = fold_grid(mx, self.part.n)
        folds = self.map(lambda d, sl: fold(parts[d], e, b))
        tot = folds[0]
        for f in folds[1:]:
            tot = tot + f
        return tot, e, b

    def stats(self, w, v, log_p, log_1mp, cols, mu_fn=None) -> LocalStats:
        """Gathered statistics for ``cols``.

        ``mu_fn`` maps the first-pass totals to component means; when given,
        a second pass fills ``swvv`` about those means.
        """
        terms = self.map(lambda d, sl: _terms(w[sl], v[sl], log_p[sl], log_1mp[sl], cols))
        mx = np.max([np.abs(t).max(axis=1) for t in terms], axis=0)
        e, b = fold_grid(mx, self.part.n)
        K1, c_v = w.shape[1], v.shape[1]
        out = gather_reduce(
            self.map(lambda d, sl: LocalStats.from_folds(fold(terms[d], e, b), e, b, cols,
                                                         K1, c_v, d)),
            self.part.D)
        if mu_fn is not None:
            mu = mu_fn(out)
            parts = self.map(lambda d, sl: local_spread(w[sl], v[sl], cols, mu))
            tot, e2, b2 = self._exact_sum(parts)
            out.swvv = unfold(tot, e2, b2).reshape(len(cols), c_v)
        return out

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
