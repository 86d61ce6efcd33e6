"""Simulation study harness: phantoms x overlaps x deltas x methods x replicates."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .baselines import bh_threshold, bonferroni, by_threshold, cluster_threshold, to_grid
from .em import FitConfig
from .errors import ParameterError
from .evaluation import jaccard, summarize
from .merging import merge_components
from .phantom import calibrate_nu, make_phantom, simulate_field
from .selection import select_K

BASELINES = ("bonf", "bh", "by", "ct1", "ct2")
MODEL_METHODS = ("bic-p2-spatial", "bic-p2-nonspatial")


@dataclass
class BenchConfig:
    """Settings shared by every cell of a study.

    ``K_max`` and ``init_candidates`` default to desk-scale values.
    """

    K_max: int = 4
    init_candidates: int = 10
    eta: float = 0.05
    q0: float = 0.05
    alpha: float = 0.05
    p0: float = 0.001
    n_null: int = 1000
    epsilon: float = 1e-6
    max_iter: int = 1000
    workers: int = 1
    max_restarts: int = 2
    seed: int = 2024

    def digest(self):
        return hashlib.sha1(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


def parse_model_method(method):
    """``"bic-p2-spatial"`` -> ("bic", "p2", True)."""
    parts = method.split("-")
    if len(parts) != 3 or parts[2] not in ("spatial", "nonspatial"):
        raise ParameterError(f"unknown method {method!r}")
    return parts[0], parts[1], parts[2] == "spatial"


def field_seed(base, phantom, omega, replicate):
    key = f"{base}|{phantom}|{omega!r}|{replicate}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def model_detect(fld, delta, cfg: BenchConfig, criterion="bic", merge="p2", spatial=True,
                 seed=0, return_details=False):
    """Fit by K selection, merge, and flag records outside component 0."""
    fc = FitConfig(K=0, delta=delta, eta=cfg.eta, epsilon=cfg.epsilon, max_iter=cfg.max_iter,
                   spatial=spatial, seed=seed, workers=cfg.workers,
                   init_candidates=cfg.init_candidates, max_restarts=cfg.max_restarts)
    best, table = select_K(fld, fc, cfg.K_max, criterion)
    rep = merge_components(best.labels, fld.p, best.theta.K, cfg.eta, merge, cfg.q0)
    if return_details:
        return rep.active, best, table, rep
    return rep.active


def baseline_detect(fld, spec, method, cfg: BenchConfig):
    p = fld.p if fld.raw_p is None else fld.raw_p
    if method == "bonf":
        return bonferroni(p, cfg.alpha)
    if method == "bh":
        return bh_threshold(p, cfg.q0)
    if method == "by":
        return by_threshold(p, cfg.q0)
    if method in ("ct1", "ct2"):
        grid = to_grid(p, fld.coords, fld.dims)
        det = cluster_threshold(grid, spec.in_brain, cfg.p0, 1 if method == "ct1" else 2,
                                cfg.n_null, cfg.alpha, cfg.seed)
        return det[tuple(fld.coords.T)]
    raise ParameterError(f"unknown method {method!r}")


def detect(fld, spec, method, delta, cfg, seed):
    if method in BASELINES:
        return baseline_detect(fld, spec, method, cfg)
    crit, merge, spatial = parse_model_method(method)
    return model_detect(fld, delta, cfg, crit, merge, spatial, seed)


def run_study(phantoms: Sequence[str], omegas: Sequence[float], deltas: Sequence[float],
              methods: Sequence[str], replicates: int, cfg: BenchConfig = None, progress=None):
    """Run every cell and return one row per (field, delta, method).

    The field for a given (phantom, omega, replicate) is shared by all
    methods and deltas.  Baselines do not depend on delta and are scored
    once per field, then repeated across the delta values.
    """
    cfg = cfg or BenchConfig()
    rows = []
    for ph in phantoms:
        spec = make_phantom(ph)
        for om in omegas:
            calib = None if ph == "null" else calibrate_nu(spec.pi_true, om)
            for r in range(replicates):
                fs = field_seed(cfg.seed, ph, om, r)
                fld, truth = simulate_field(spec, calib, fs)
                tmask = truth != 0
                base_cache = {}
                for dl in deltas:
                    for m in methods:
                        if m in BASELINES:
                            if m not in base_cache:
                                base_cache[m] = detect(fld, spec, m, dl, cfg, fs)
                            det = base_cache[m]
                        else:
                            det = detect(fld, spec, m, dl, cfg, fs)
                        row = {"phantom": ph, "omega": om, "delta": dl, "method": m,
                               "replicate": r, "seed": fs, "jaccard": jaccard(det, tmask),
                               "n_active": int(np.count_nonzero(det))}
                        rows.append(row)
                        if progress is not None:
                            progress(row)
    return rows


def study_table(rows):
    return summarize(rows)
