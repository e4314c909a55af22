"""Operator model from an ensemble of forward operators via row-wise PCA."""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import CovarianceModel
from .errors import DimensionError
from .io import read_matrix, write_matrix
from .tensor import BilinearTensor

__all__ = [
    "RowGroup",
    "OperatorEnsemble",
    "PcaModel",
    "RepresentationError",
    "ensemble_mean",
    "rowwise_pca",
    "build_gamma2",
    "representation_error",
    "save_ensemble",
    "load_ensemble",
]

log = logging.getLogger(__name__)

DATA_TYPES = ("log_amplitude", "phase")


@dataclass(frozen=True)
class RowGroup:
    data_type: str
    sds_mm: float
    channel: int = -1

    def __post_init__(self):
        if self.data_type not in DATA_TYPES:
            raise ValueError(f"data_type must be one of {DATA_TYPES}, got {self.data_type!r}")


@dataclass
class OperatorEnsemble:
    """``m`` sample operators of shape ``l x n`` with per-row metadata.

    ``mask`` is an optional boolean field-of-view selector over columns.
    """

    samples: np.ndarray
    row_groups: list = None
    mask: np.ndarray = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 3:
            raise DimensionError("ensemble samples", "(m, l, n)", self.samples.shape)
        m, l, n = self.samples.shape
        if m < 1:
            raise ValueError("empty ensemble")
        if self.row_groups is None:
            self.row_groups = [RowGroup("log_amplitude", 0.0, r) for r in range(l)]
        if len(self.row_groups) != l:
            raise DimensionError("row groups", l, len(self.row_groups))
        if self.mask is not None:
            mask = np.asarray(self.mask)
            if mask.dtype != bool:
                idx = mask.astype(np.int64)
                if idx.size and (idx.min() < 0 or idx.max() >= n):
                    raise ValueError("mask index out of range")
                mask = np.zeros(n, dtype=bool)
                mask[idx] = True
            if mask.shape != (n,):
                raise DimensionError("mask", (n,), mask.shape)
            self.mask = mask

    @property
    def m(self):
        return self.samples.shape[0]

    @property
    def shape(self):
        return self.samples.shape[1:]

    def column_mask(self):
        return np.ones(self.shape[1], dtype=bool) if self.mask is None else self.mask

    def kept(self, exclude):
        idx = np.arange(self.m)
        if exclude is None:
            return idx
        if not 0 <= exclude < self.m:
            raise IndexError(f"exclude index {exclude} out of range for m={self.m}")
        return idx[idx != exclude]


@dataclass
class PcaModel:
    mean: np.ndarray
    tensor: BilinearTensor
    variances: np.ndarray
    per_row_budget: int
    row_of_pc: np.ndarray
    row_groups: list
    mask: np.ndarray
    excluded: int = None
    singular_rows: list = field(default_factory=list)

    @property
    def p(self):
        return self.tensor.p

    def pcs_of_row(self, r):
        return np.flatnonzero(self.row_of_pc == r)


def ensemble_mean(ens, exclude=None):
    """Entrywise mean of the samples, zero outside the column mask."""
    A0 = ens.samples[ens.kept(exclude)].mean(axis=0)
    A0[:, ~ens.column_mask()] = 0.0
    return A0


def rowwise_pca(ens, budget=10, *, exclude):
    """PCA of each operator row across the ensemble.

    Parameters
    ----------
    ens : OperatorEnsemble
    budget : int
        Maximum number of principal components kept per row.
    exclude : int or None
        Sample left out of both the mean and the PCs (the reconstruction
        target).  Passing ``None`` explicitly uses every sample.

    Returns
    -------
    PcaModel
        Row-sparse tensor whose basis matrices each hold one unit-norm PC
        in a single row.  Variances use the ``m - 1`` divisor.  Rows where
        all samples agree contribute no PCs.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    idx = ens.kept(exclude)
    if idx.size < 2:
        raise ValueError("row-wise PCA needs at least two samples")
    mask = ens.column_mask()
    cols = np.flatnonzero(mask)
    _, l, n = ens.samples.shape
    mean = ensemble_mean(ens, exclude)
    rows, vals, variances = [], [], []
    singular = []
    for r in range(l):
        X = ens.samples[idx][:, r, cols] - mean[r, cols]
        if not np.any(X):
            singular.append(r)
            continue
        _, s, vt = np.linalg.svd(X, full_matrices=False)
        tol = max(X.shape) * np.finfo(float).eps * s[0]
        k = min(budget, int(np.sum(s > tol)))
        for j in range(k):
            v = vt[j]
            if v[np.argmax(np.abs(v))] < 0:
                v = -v
            full = np.zeros(n)
            full[cols] = v
            rows.append(r)
            vals.append(full)
            variances.append(s[j] ** 2 / (idx.size - 1))
    if singular:
        log.info("row-wise PCA: %d rows without variation get no PCs", len(singular))
    rows = np.asarray(rows, dtype=np.int64)
    vals = np.asarray(vals).reshape(len(rows), n)
    tensor = BilinearTensor(l, len(rows), n, rows=rows, vals=vals)
    return PcaModel(
        mean=mean,
        tensor=tensor,
        variances=np.asarray(variances),
        per_row_budget=budget,
        row_of_pc=rows,
        row_groups=list(ens.row_groups),
        mask=mask,
        excluded=exclude,
        singular_rows=singular,
    )


def build_gamma2(model, inflation=1.0):
    """Diagonal PC-coefficient covariance from the PCA variances."""
    if inflation <= 0:
        raise ValueError("inflation must be positive")
    return CovarianceModel.diagonal(inflation * model.variances)


@dataclass
class RepresentationError:
    per_row: np.ndarray
    undefined: np.ndarray
    summary: list


def representation_error(model, target, bucket_edges=(0, 10, 20, 30, 40)):
    """Relative error ``||a_hat - a|| / ||a||`` of the best PC representation per row.

    ``summary`` lists ``(data_type, lo, hi, mean, sd, count)`` per
    source-detector-separation bucket ``[lo, hi)``.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != model.mean.shape:
        raise DimensionError("target operator", model.mean.shape, target.shape)
    cols = np.flatnonzero(model.mask)
    l = target.shape[0]
    err = np.full(l, np.nan)
    undefined = np.zeros(l, dtype=bool)
    vals = model.tensor.vals
    for r in range(l):
        a = target[r, cols]
        na = np.linalg.norm(a)
        if na == 0:
            undefined[r] = True
            continue
        centered = a - model.mean[r, cols]
        V = vals[model.pcs_of_row(r)][:, cols]
        a_hat = model.mean[r, cols] + V.T @ (V @ centered)
        err[r] = np.linalg.norm(a_hat - a) / na
    summary = []
    edges = list(bucket_edges)
    for dtype in DATA_TYPES:
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = [
                r for r, g in enumerate(model.row_groups)
                if g.data_type == dtype and lo <= g.sds_mm < hi and not undefined[r]
            ]
            if sel:
                e = err[sel]
                summary.append((dtype, lo, hi, float(e.mean()), float(e.std()), len(sel)))
    return RepresentationError(err, undefined, summary)


# -- on-disk ensembles ----------------------------------------------------------

def save_ensemble(directory, ens):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    m, l, n = ens.samples.shape
    files = []
    for i in range(m):
        name = f"sample_{i:04d}.f64"
        write_matrix(d / name, ens.samples[i])
        files.append(name)
    manifest = {"format": "bilinv-ensemble", "version": 1, "l": l, "n": n,
                "samples": files, "mask": None}
    if ens.mask is not None:
        manifest["mask"] = np.flatnonzero(ens.mask).tolist()
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(d / "rows.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_index", "data_type", "sds_mm", "channel"])
        for r, g in enumerate(ens.row_groups):
            w.writerow([r, g.data_type, repr(float(g.sds_mm)), g.channel])


def load_ensemble(directory):
    """Read an ensemble directory: ``manifest.json``, sample matrices, ``rows.csv``."""
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    if man.get("format") != "bilinv-ensemble":
        raise ValueError(f"{d} does not hold an ensemble manifest")
    l, n = man["l"], man["n"]
    samples = np.stack([read_matrix(d / f, (l, n)) for f in man["samples"]])
    groups = [None] * l
    with open(d / "rows.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            r = int(row["row_index"])
            groups[r] = RowGroup(row["data_type"], float(row["sds_mm"]), int(row.get("channel") or -1))
    if any(g is None for g in groups):
        raise ValueError("rows.csv does not describe every operator row")
    mask = man.get("mask")
    return OperatorEnsemble(samples, groups, None if mask is None else np.asarray(mask, dtype=np.int64))
