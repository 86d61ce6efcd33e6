"""Command-line interface.

Subcommands: simulate, fit, threshold, evaluate, report, bench.
Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import io as pio
from .baselines import bh_threshold, bonferroni, by_threshold, cluster_threshold, to_grid
from .bench import BASELINES, MODEL_METHODS, BenchConfig, run_study
from .em import FitConfig
from .errors import DataError, NumericalError, ParameterError
from .evaluation import jaccard, summarize
from .merging import METHODS, merge_components
from .phantom import VARIANTS, calibrate_nu, make_phantom, simulate_field
from .selection import CRITERIA, select_K

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _default_workers():
    try:
        return max(1, int(os.environ.get("PMIXSEG_WORKERS", "1")))
    except ValueError:
        return 1


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser():
    ap = argparse.ArgumentParser(prog="pmixseg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a phantom p-value field")
    s.add_argument("--phantom", choices=VARIANTS, default="b")
    s.add_argument("--omega", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--geometry", help="phantom geometry config file")
    s.add_argument("--out", required=True)
    s.add_argument("--truth")

    f = sub.add_parser("fit", help="fit the mixture, select K and merge")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--kmax", type=int, default=8)
    f.add_argument("--criterion", choices=CRITERIA, default="bic")
    f.add_argument("--merge", choices=METHODS, default="p2")
    f.add_argument("--delta", type=float, default=0.99)
    f.add_argument("--eta", type=float, default=0.05)
    f.add_argument("--q0", type=float, default=0.05)
    f.add_argument("--epsilon", type=float, default=1e-6)
    f.add_argument("--max-iter", type=int, default=1000)
    f.add_argument("--no-spatial", action="store_true")
    f.add_argument("--init-m", type=int, default=50)
    f.add_argument("--pmax-init", type=float, default=0.05)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--workers", type=int, default=_default_workers())
    f.add_argument("--out", required=True, help="fit result (JSON)")
    f.add_argument("--labels", help="prefix for the label map CSV and image")

    t = sub.add_parser("threshold", help="baseline thresholding")
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--method", choices=BASELINES, required=True)
    t.add_argument("--alpha", type=float, default=0.05, help="level for bonf and the cluster null")
    t.add_argument("--q", type=float, default=0.05, help="FDR level for bh and by")
    t.add_argument("--p0", type=float, default=0.001)
    t.add_argument("--n-null", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="prefix for the label map")

    e = sub.add_parser("evaluate", help="Jaccard index of a detection against truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)

    r = sub.add_parser("report", help="median / IQR table from bench rows")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--out", required=True)

    b = sub.add_parser("bench", help="run the simulation study grid")
    b.add_argument("--phantoms", default="b")
    b.add_argument("--omegas", default="0.01,0.1,0.25,0.5,0.75,0.95")
    b.add_argument("--deltas", default="0.99")
    b.add_argument("--methods", default=",".join(MODEL_METHODS + BASELINES))
    b.add_argument("--replicates", type=int, default=25)
    b.add_argument("--kmax", type=int, default=BenchConfig.K_max)
    b.add_argument("--init-m", type=int, default=BenchConfig.init_candidates)
    b.add_argument("--seed", type=int, default=BenchConfig.seed)
    b.add_argument("--workers", type=int, default=_default_workers())
    b.add_argument("--out", default="results.csv")
    b.add_argument("--table", default="table.csv")
    b.add_argument("--quiet", action="store_true")
    return ap


def cmd_simulate(a):
    spec = make_phantom(a.phantom, a.geometry)
    calib = None if a.phantom == "null" else calibrate_nu(spec.pi_true, a.omega)
    fld, truth = simulate_field(spec, calib, a.seed)
    config = {"command": "simulate", "phantom": a.phantom, "omega": a.omega, "seed": a.seed,
              "geometry_version": spec.version,
              "nu": None if calib is None else calib.nu.tolist(),
              "overlaps": None if calib is None else calib.achieved}
    pio.write_field(a.out, fld, config)
    if a.truth:
        pio.write_labelmap(os.path.splitext(a.truth)[0], truth, fld.coords, fld.dims, config)
    return EXIT_OK


def cmd_fit(a):
    fld = pio.read_field(a.inp)
    cfg = FitConfig(K=0, delta=a.delta, eta=a.eta, epsilon=a.epsilon, max_iter=a.max_iter,
                    spatial=not a.no_spatial, seed=a.seed, workers=a.workers,
                    init_candidates=a.init_m, p_max_init=a.pmax_init)
    best, table = select_K(fld, cfg, a.kmax, a.criterion)
    rep = merge_components(best.labels, fld.p, best.theta.K, a.eta, a.merge, a.q0)
    config = {k: v for k, v in vars(a).items() if k not in ("func",)}
    pio.write_fit(a.out, best, rep, table, config)
    if a.labels:
        pio.write_labelmap(a.labels, rep.labels, fld.coords, fld.dims, config)
    print(f"K={best.theta.K} loglik={best.loglik:.6f} active={int(rep.active.sum())}")
    return EXIT_OK


def cmd_threshold(a):
    fld = pio.read_field(a.inp)
    p = fld.p if fld.raw_p is None else fld.raw_p
    if a.method == "bonf":
        det = bonferroni(p, a.alpha)
    elif a.method == "bh":
        det = bh_threshold(p, a.q)
    elif a.method == "by":
        det = by_threshold(p, a.q)
    else:
        if fld.c_v != 2:
            raise DataError("cluster thresholding needs a 2D field")
        mask = np.zeros(fld.dims, dtype=bool)
        mask[tuple(fld.coords.T)] = True
        grid = to_grid(p, fld.coords, fld.dims)
        det = cluster_threshold(grid, mask, a.p0, 1 if a.method == "ct1" else 2,
                                a.n_null, a.alpha, a.seed)[tuple(fld.coords.T)]
    config = {k: v for k, v in vars(a).items() if k != "func"}
    pio.write_labelmap(a.out, det.astype(np.int64), fld.coords, fld.dims, config)
    print(f"active={int(det.sum())}")
    return EXIT_OK


def cmd_evaluate(a):
    cp, lp = pio.read_labels(a.pred)
    ct, lt = pio.read_labels(a.truth)
    key_p = {tuple(c): l for c, l in zip(cp.tolist(), lp.tolist())}
    if len(key_p) != len(ct) or any(tuple(c) not in key_p for c in ct.tolist()):
        raise DataError("prediction and truth cover different voxels")
    pred = np.array([key_p[tuple(c)] != 0 for c in ct.tolist()])
    print(f"jaccard={jaccard(pred, lt != 0):.6f}")
    return EXIT_OK


def cmd_report(a):
    rows = pio.read_rows(a.inp)
    for r in rows:
        r["omega"] = float(r["omega"])
        r["delta"] = float(r["delta"])
    table = summarize(rows)
    pio.write_rows(a.out, table)
    return EXIT_OK


def cmd_bench(a):
    cfg = BenchConfig(K_max=a.kmax, init_candidates=a.init_m, seed=a.seed, workers=a.workers)
    phantoms = [p for p in a.phantoms.split(",") if p]
    methods = [m for m in a.methods.split(",") if m]
    for p in phantoms:
        if p not in VARIANTS:
            raise ParameterError(f"unknown phantom {p!r}")
    omegas, deltas = _floats(a.omegas), _floats(a.deltas)
    config = {"phantoms": phantoms, "omegas": omegas, "deltas": deltas, "methods": methods,
              "replicates": a.replicates, "bench": vars(cfg), "config_hash": cfg.digest()}

    def progress(row):
        if not a.quiet:
            print(f"{row['phantom']} omega={row['omega']} delta={row['delta']} "
                  f"{row['method']} rep={row['replicate']} J={row['jaccard']:.4f}", flush=True)

    rows = run_study(phantoms, omegas, deltas, methods, a.replicates, cfg, progress)
    pio.write_rows(a.out, rows, config=config)
    pio.write_rows(a.table, summarize(rows), config=config)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "threshold": cmd_threshold,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "bench": cmd_bench,
}


def main(argv=None):
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return COMMANDS[a.command](a)
    except ParameterError as exc:
        print(f"pmixseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"pmixseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"pmixseg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
