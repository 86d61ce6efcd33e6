"""Plain-text file formats: p-value fields, fit results, label maps."""

import csv
import hashlib
import json
import os

import numpy as np

from .errors import DataError
from .model import PValueField

SCHEMA_VERSION = 1
SIDECAR_SUFFIX = ".clamped.csv"

# label -> RGB; 0 is background
COLOR_TABLE = np.array([
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
], dtype=np.uint8)


def config_hash(config):
    return hashlib.sha1(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:12]


def read_field(path):
    """Parse a ``x,y[,z],p`` CSV into a PValueField.

    Lines starting with ``#`` are metadata (``# dims=nx,ny`` is honored).
    Row order is preserved.  If a clamping sidecar written by
    :func:`write_field` sits next to the file, the original values are
    restored into ``raw_p``.
    """
    meta = {}
    coords, pvals = [], []
    header = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not line.strip():
                continue
            row = next(csv.reader([line]))
            if header is None:
                header = [h.strip() for h in row]
                if header not in (["x", "y", "p"], ["x", "y", "z", "p"]):
                    raise DataError(f"{path}:{lineno}: header must be x,y,p or x,y,z,p")
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                c = [int(v) for v in row[:-1]]
                p = float(row[-1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
            if not 0.0 <= p <= 1.0:
                raise DataError(f"{path}:{lineno}: p-value {p} outside [0, 1]")
            if min(c) < 0:
                raise DataError(f"{path}:{lineno}: negative coordinate")
            coords.append(c)
            pvals.append(p)
    if header is None or not pvals:
        raise DataError(f"{path}: no records")
    coords = np.asarray(coords, dtype=np.int64)
    dims = None
    if "dims" in meta:
        dims = tuple(int(d) for d in meta["dims"].split(","))
        if len(dims) != coords.shape[1] or np.any(coords.max(axis=0) >= np.asarray(dims)):
            raise DataError(f"{path}: coordinates exceed dims={dims}")
    fld = PValueField.from_arrays(coords, np.asarray(pvals), dims)
    side = str(path) + SIDECAR_SUFFIX
    if os.path.exists(side):
        raw = fld.p.copy()
        with open(side, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#") or row[0] == "row":
                    continue
                raw[int(row[0])] = float(row[1])
        fld.raw_p = raw
    return fld


def write_field(path, fld: PValueField, config=None):
    """Write a field; clamped entries go to a ``.clamped.csv`` sidecar."""
    names = ["x", "y", "z"][: fld.c_v] + ["p"]
    with open(path, "w", newline="") as fh:
        fh.write("# dims=" + ",".join(str(d) for d in fld.dims) + "\n")
        if config is not None:
            fh.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for c, p in zip(fld.coords.tolist(), fld.p.tolist()):
            w.writerow([*c, repr(p)])
    side = str(path) + SIDECAR_SUFFIX
    if fld.raw_p is not None:
        idx = np.flatnonzero(fld.raw_p != fld.p)
        with open(side, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "p_original"])
            for i in idx:
                w.writerow([int(i), repr(float(fld.raw_p[i]))])
    elif os.path.exists(side):
        os.remove(side)


def _theta_dict(theta):
    return {
        "K": theta.K,
        "delta": theta.delta,
        "eta": theta.eta,
        "pi": theta.pi.tolist(),
        "alpha": theta.alpha.tolist(),
        "beta": theta.beta.tolist(),
        "mu": theta.mu.tolist(),
        "sigma2": theta.sigma2.tolist(),
    }


def fit_document(fit, merge=None, table=None, config=None):
    """Assemble the versioned JSON-serializable record of a fit."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": config or {},
        "config_hash": config_hash(config or {}),
        "theta": _theta_dict(fit.theta),
        "loglik": fit.loglik,
        "n_iter": fit.n_iter,
        "converged": fit.converged,
        "valid": fit.valid,
        "criteria": fit.criteria,
        "selection": [{k: v for k, v in row.items() if k != "fit"} for row in (table or [])],
    }
    if merge is not None:
        doc["merge"] = {
            "method": merge.method,
            "components": merge.components,
            "pairs": merge.pairs,
            "relabel": {str(k): v for k, v in merge.relabel.items()},
            "K_final": merge.K_final,
        }
    return doc


def write_fit(path, fit, merge=None, table=None, config=None):
    doc = fit_document(fit, merge, table, config)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return doc


def read_fit(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema version {doc.get('schema_version')!r}")
    return doc


def label_grid(labels, coords, dims):
    grid = np.zeros(tuple(dims), dtype=np.int64)
    grid[tuple(np.asarray(coords).T)] = labels
    return grid


def write_ppm(path, grid):
    """Binary P6 pixmap; x runs across, y down."""
    grid = np.asarray(grid)
    rgb = COLOR_TABLE[np.where(grid > 0, (grid - 1) % (len(COLOR_TABLE) - 1) + 1, 0)]
    img = np.ascontiguousarray(np.transpose(rgb, (1, 0, 2)))
    with open(path, "wb") as fh:
        fh.write(f"P6\n{grid.shape[0]} {grid.shape[1]}\n255\n".encode())
        fh.write(img.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise DataError(f"{path}: not a P6 pixmap")
    w, h = (int(t) for t in parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
    return img


def write_labelmap(prefix, labels, coords, dims, config=None):
    """Write ``prefix.csv`` (``x,y,label``) and ``prefix.ppm``.

    Only 2D grids get an image.  Returns the paths written.
    """
    coords = np.asarray(coords)
    names = ["x", "y", "z"][: coords.shape[1]] + ["label"]
    csv_path = str(prefix) + ".csv"
    with open(csv_path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for c, lab in zip(coords.tolist(), np.asarray(labels).tolist()):
            w.writerow([*c, int(lab)])
    out = [csv_path]
    if coords.shape[1] == 2:
        ppm = str(prefix) + ".ppm"
        write_ppm(ppm, label_grid(labels, coords, dims))
        out.append(ppm)
    return out


def read_labels(path):
    """Read a ``x,y[,z],label`` CSV; returns (coords, labels)."""
    coords, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].startswith("#"):
                continue
            if header is None:
                header = row
                if header[-1] not in ("label", "active"):
                    raise DataError(f"{path}:{lineno}: last column must be label")
                continue
            try:
                coords.append([int(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
    return np.asarray(coords, dtype=np.int64), np.asarray(labels, dtype=np.int64)


def write_rows(path, rows, columns=None, config=None):
    """Write dict rows as CSV with an optional ``# config=`` line."""
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        if config is not None:
            fh.write("# config=" + json.dumps(config, sort_keys=True) + "\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_rows(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
