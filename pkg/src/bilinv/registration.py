"""Landmark-based rigid and scale registration of head geometries."""

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PointSet",
    "SimilarityTransform",
    "RegistrationReport",
    "kabsch_rigid",
    "leave_one_out_fit",
    "scale_translate_fit",
    "registration_errors",
    "sre_lre_weights",
    "midpoint_pretranslation",
    "register",
    "read_pointset",
    "write_pointset",
]


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != len(pts):
                raise ValueError("one label per point required")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.points.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        labels = None if self.labels is None else tuple(self.labels[i] for i in idx)
        return PointSet(self.points[idx], labels)

    def index(self, label):
        if self.labels is None:
            raise KeyError(label)
        return self.labels.index(label)

    def transformed(self, T):
        return PointSet(T.apply(self.points), self.labels)


@dataclass(frozen=True)
class SimilarityTransform:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-10 or abs(np.linalg.det(R) - 1) > 1e-10:
            raise ValueError("rotation must be proper orthogonal")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation

    def then(self, other):
        """Composition: apply ``self`` first, then ``other``."""
        return SimilarityTransform(
            other.rotation @ self.rotation,
            other.scale * other.rotation @ self.translation + other.translation,
            other.scale * self.scale,
        )


@dataclass(frozen=True)
class RegistrationReport:
    transform: SimilarityTransform
    sre: float
    lre: float
    excluded_landmark: str = None


def _check_pair(source, target, minimum):
    if len(source) != len(target):
        raise ValueError(f"point counts differ: {len(source)} vs {len(target)}")
    if len(source) < minimum:
        raise ValueError(f"need at least {minimum} correspondences, got {len(source)}")


def kabsch_rigid(source, target):
    """Least-squares rotation and translation mapping ``source`` onto ``target``."""
    _check_pair(source, target, 3)
    P, Q = source.points, target.points
    pc, qc = P.mean(axis=0), Q.mean(axis=0)
    P0, Q0 = P - pc, Q - qc
    sv = np.linalg.svd(P0, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
        rank = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300)))
        raise ValueError(f"degenerate configuration: centred source points have rank {rank} < 2")
    U, _, Vt = np.linalg.svd(P0.T @ Q0)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return SimilarityTransform(R, qc - R @ pc, 1.0)


def _msr(T, source, target):
    return float(np.mean(np.sum((T.apply(source.points) - target.points) ** 2, axis=1)))


def leave_one_out_fit(source, target):
    """Rigid fit that may drop one landmark.

    Returns ``(transform, excluded)`` where ``excluded`` is the dropped
    point's label (or index when unlabeled), or ``None`` if the full fit
    has the smallest mean squared residual.  Ties keep the full fit, then
    the lowest index.
    """
    _check_pair(source, target, 4)
    best_T = kabsch_rigid(source, target)
    best = _msr(best_T, source, target)
    spread = float(np.mean(np.sum((target.points - target.points.mean(0)) ** 2, axis=1)))
    tie = 1e-12 * max(spread, 1e-300)
    excluded = None
    k = len(source)
    for i in range(k):
        keep = np.delete(np.arange(k), i)
        s, t = source.subset(keep), target.subset(keep)
        try:
            T = kabsch_rigid(s, t)
        except ValueError:
            continue
        err = _msr(T, s, t)
        if err < best - tie:
            best, best_T = err, T
            excluded = source.labels[i] if source.labels else i
    return best_T, excluded


def scale_translate_fit(source, target, weights=None):
    """Weighted least-squares isotropic scale and translation (no rotation)."""
    _check_pair(source, target, 1)
    P, Q = source.points, target.points
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(P),) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative, one per point, not all zero")
    w = w / w.sum()
    pc, qc = w @ P, w @ Q
    P0, Q0 = P - pc, Q - qc
    denom = float(w @ np.sum(P0 * P0, axis=1))
    if denom <= 1e-300:
        raise ValueError("all weighted source points coincide; scale is undefined")
    s = float(w @ np.sum(P0 * Q0, axis=1)) / denom
    if s <= 0:
        raise ValueError(f"least-squares scale is non-positive ({s:.3g}); orientation not fixed?")
    return SimilarityTransform(np.eye(3), qc - s * pc, s)


def sre_lre_weights(landmark_mask):
    """Per-point weights making the weighted sum equal ``SRE + LRE``."""
    lm = np.asarray(landmark_mask, dtype=bool)
    w = np.zeros(lm.size)
    if lm.any():
        w[lm] = 1.0 / lm.sum()
    if (~lm).any():
        w[~lm] = 1.0 / (~lm).sum()
    return w


def registration_errors(registered, target, landmark_mask):
    """``(SRE, LRE)``: mean squared distances over reference points and landmarks."""
    if len(registered) != len(target):
        raise ValueError("point counts differ")
    lm = np.asarray(landmark_mask, dtype=bool)
    d2 = np.sum((registered.points - target.points) ** 2, axis=1)
    sre = float(d2[~lm].mean()) if (~lm).any() else float("nan")
    lre = float(d2[lm].mean()) if lm.any() else float("nan")
    return sre, lre


def midpoint_pretranslation(source, target, first="Iz", second="Nz"):
    """Translation matching the midpoints of two named landmarks."""
    ms = 0.5 * (source.points[source.index(first)] + source.points[source.index(second)])
    mt = 0.5 * (target.points[target.index(first)] + target.points[target.index(second)])
    return SimilarityTransform(np.eye(3), mt - ms, 1.0)


def register(source, target, landmark_mask, pretranslate=True, project=None):
    """Full pipeline: midpoint pre-step, robust rigid fit on landmarks, scale+translate.

    ``project`` is an optional callback ``(point) -> point`` onto the
    source surface, used to replace a landmark dropped by the rigid stage
    (the target landmark is pulled back into source space and projected).
    """
    lm = np.asarray(landmark_mask, dtype=bool)
    T = SimilarityTransform.identity()
    if pretranslate and source.labels and {"Iz", "Nz"} <= set(source.labels):
        T = midpoint_pretranslation(source, target)
    moved = source.transformed(T)
    lm_idx = np.flatnonzero(lm)
    R, excluded = leave_one_out_fit(moved.subset(lm_idx), target.subset(lm_idx))
    T = T.then(R)
    pts = source.points.copy()
    if excluded is not None and project is not None:
        i = lm_idx[list(source.subset(lm_idx).labels).index(excluded)] if source.labels \
            else lm_idx[excluded]
        pts[i] = project((target.points[i] - T.translation) @ T.rotation / T.scale)
    rigid = PointSet(T.apply(pts), source.labels)
    S = scale_translate_fit(rigid, target, sre_lre_weights(lm))
    final = T.then(S)
    reg = PointSet(S.apply(rigid.points), source.labels)
    sre, lre = registration_errors(reg, target, lm)
    return RegistrationReport(final, sre, lre, excluded)


def read_pointset(path):
    labels, pts = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels.append(row["label"])
            pts.append([float(row["x_mm"]), float(row["y_mm"]), float(row["z_mm"])])
    return PointSet(np.array(pts).reshape(-1, 3), labels)


def write_pointset(path, ps):
    labels = ps.labels or tuple(str(i) for i in range(len(ps)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "x_mm", "y_mm", "z_mm"])
        for lab, p in zip(labels, ps.points):
            w.writerow([lab] + [repr(float(v)) for v in p])
