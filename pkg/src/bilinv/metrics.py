"""Reconstruction quality: contrast-to-noise ratio, RMSE and report files."""

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError

__all__ = [
    "MetricsReport",
    "fov_mask",
    "cnr",
    "rmse",
    "evaluate",
    "REPORT_COLUMNS",
    "write_report_rows",
    "read_report_rows",
    "write_json_report",
]

REPORT_COLUMNS = ("run_id", "solver", "operator_model", "cnr", "rmse", "iterations", "seconds")


@dataclass
class MetricsReport:
    cnr: float
    rmse: float
    mean_pert: float
    mean_unpert: float
    sd_unpert: float
    region_means: list = field(default_factory=list)


def fov_mask(operator, brain_mask, rel=0.01):
    """Voxels whose sensitivity exceeds ``rel`` times the largest brain sensitivity.

    The threshold is taken per row (channel) and a voxel is kept if any row
    exceeds it.  Absolute values are used so signed operators work too.
    """
    A = np.abs(np.asarray(operator, dtype=np.float64))
    brain = np.asarray(brain_mask, dtype=bool)
    if brain.shape != (A.shape[1],):
        raise DimensionError("brain mask", (A.shape[1],), brain.shape)
    if not brain.any():
        raise ValueError("brain mask is empty")
    thresh = rel * A[:, brain].max(axis=1)
    return np.any(A > thresh[:, None], axis=0)


def _as_mask(mask, n):
    m = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (n,):
        raise DimensionError("FOV mask", (n,), m.shape)
    return m


def _split(recon, pattern, fov):
    recon = np.asarray(recon, dtype=np.float64)
    fov = _as_mask(fov, recon.size)
    pert = np.zeros(recon.size, dtype=bool)
    pert[pattern.support] = True
    return recon, pert & fov, fov & ~pert


def cnr(recon, pattern, fov=None):
    """``(mean over perturbed voxels - background mean) / background SD``.

    Means are over the voxel union, so larger regions weigh more.
    """
    recon, pert, back = _split(recon, pattern, fov)
    if not pert.any():
        raise ValueError("no perturbed voxel inside the FOV")
    if back.sum() < 2:
        raise ValueError("background needs at least two FOV voxels")
    sd = float(np.std(recon[back]))
    if sd == 0:
        raise ValueError("background SD is zero: CNR undefined")
    return float((recon[pert].mean() - recon[back].mean()) / sd)


def rmse(recon, target, fov=None):
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise DimensionError("reconstruction", target.shape, recon.shape)
    fov = _as_mask(fov, recon.size)
    if not fov.any():
        raise ValueError("empty FOV")
    d = recon[fov] - target[fov]
    return float(np.sqrt(np.mean(d * d)))


def evaluate(recon, pattern, fov=None):
    """All metrics at once; ``cnr`` is NaN when the background SD vanishes."""
    recon, pert, back = _split(recon, pattern, fov)
    sd = float(np.std(recon[back])) if back.any() else 0.0
    mp = float(recon[pert].mean()) if pert.any() else float("nan")
    mu = float(recon[back].mean()) if back.any() else float("nan")
    fovm = _as_mask(fov, recon.size)
    regions = []
    for r in pattern.regions:
        v = r.voxels[fovm[r.voxels]]
        regions.append(float(recon[v].mean()) if v.size else float("nan"))
    return MetricsReport(
        cnr=(mp - mu) / sd if sd > 0 else float("nan"),
        rmse=rmse(recon, pattern.to_vector(), fovm),
        mean_pert=mp,
        mean_unpert=mu,
        sd_unpert=sd,
        region_means=regions,
    )


def write_report_rows(path, rows):
    """CSV with the fixed report columns; floats are written with ``repr``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                        for c in REPORT_COLUMNS])


def read_report_rows(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["cnr"] = float(row["cnr"])
            row["rmse"] = float(row["rmse"])
            row["iterations"] = int(row["iterations"])
            row["seconds"] = float(row["seconds"])
            out.append(row)
    return out


def write_json_report(path, report, config=None, extra=None):
    doc = {"metrics": asdict(report) if isinstance(report, MetricsReport) else report}
    if config is not None:
        doc["config"] = config
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
