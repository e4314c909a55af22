"""Bilinear operator tensor: storage, contractions, norm and Jacobian.

The tensor has shape ``l x p x n``; fixing the middle index gives the
basis matrix ``V_i``.  Two storage layouts are supported:

* dense: a ``(p, l, n)`` stack of full basis matrices;
* row-sparse: each ``V_i`` has a single nonzero row ``rows[i]`` whose
  values are ``vals[i]``.  This is what row-wise PCA produces and the
  contractions then cost ``O(p n)`` instead of ``O(p l n)``.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .errors import ConvergenceError, DimensionError, ZeroOperatorWarning
from .io import read_matrix, write_matrix

__all__ = [
    "BilinearTensor",
    "JointState",
    "check_mean_operator",
    "contract_y",
    "contract_x",
    "contract_yx",
    "tensor_norm",
    "bilinear_jacobian",
    "save_tensor",
    "load_tensor",
]


def _vec(v, size, what):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != size:
        raise DimensionError(what, (size,), v.shape)
    return v


class BilinearTensor:
    """Operator basis ``{V_i}`` of the bilinear forward model.

    Use :meth:`from_matrices`, :meth:`from_row_sparse` or :meth:`zeros`
    rather than the constructor.
    """

    def __init__(self, l, p, n, slabs=None, rows=None, vals=None):
        self.l, self.p, self.n = int(l), int(p), int(n)
        if min(self.l, self.n) < 1 or self.p < 0:
            raise ValueError(f"invalid tensor dims l={l}, p={p}, n={n}")
        self.row_sparse = rows is not None
        if self.row_sparse:
            self.rows = np.ascontiguousarray(rows, dtype=np.int64)
            self.vals = np.ascontiguousarray(vals, dtype=np.float64).reshape(self.p, self.n)
            if self.rows.shape != (self.p,):
                raise DimensionError("row indices", (self.p,), self.rows.shape)
            if self.p and (self.rows.min() < 0 or self.rows.max() >= self.l):
                raise ValueError("row index out of range")
            self.slabs = None
            data = self.vals
        else:
            self.slabs = np.ascontiguousarray(slabs, dtype=np.float64)
            if self.slabs.shape != (self.p, self.l, self.n):
                raise DimensionError("basis stack", (self.p, self.l, self.n), self.slabs.shape)
            self.rows = self.vals = None
            data = self.slabs
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor entries must be finite")
        for arr in (self.rows, self.vals, self.slabs):
            if arr is not None:
                arr.setflags(write=False)

    @classmethod
    def from_matrices(cls, matrices, detect_row_sparse=True):
        mats = [np.asarray(m, dtype=np.float64) for m in matrices]
        if not mats:
            raise ValueError("need at least one basis matrix; use zeros() for p=0")
        l, n = mats[0].shape
        for i, m in enumerate(mats):
            if m.shape != (l, n):
                raise DimensionError(f"basis matrix {i}", (l, n), m.shape)
        stack = np.stack(mats)
        if detect_row_sparse:
            nz = np.any(stack != 0.0, axis=2)
            if np.all(nz.sum(axis=1) <= 1):
                rows = np.argmax(nz, axis=1)
                vals = stack[np.arange(len(mats)), rows]
                return cls(l, len(mats), n, rows=rows, vals=vals)
        return cls(l, len(mats), n, slabs=stack)

    @classmethod
    def from_row_sparse(cls, rows, vals, l):
        vals = np.atleast_2d(np.asarray(vals, dtype=np.float64))
        return cls(l, vals.shape[0], vals.shape[1], rows=rows, vals=vals)

    @classmethod
    def zeros(cls, l, p, n):
        return cls(l, p, n, rows=np.zeros(p, dtype=np.int64), vals=np.zeros((p, n)))

    def basis_matrix(self, i):
        """Return ``V_i`` as a dense ``l x n`` matrix."""
        if self.row_sparse:
            out = np.zeros((self.l, self.n))
            out[self.rows[i]] = self.vals[i]
            return out
        return self.slabs[i].copy()

    def to_dense(self):
        """Full ``(l, p, n)`` array; only sensible for small tensors."""
        out = np.zeros((self.l, self.p, self.n))
        for i in range(self.p):
            out[:, i, :] = self.basis_matrix(i)
        return out

    def scaled(self, c):
        if self.row_sparse:
            return BilinearTensor(self.l, self.p, self.n, rows=self.rows, vals=c * self.vals)
        return BilinearTensor(self.l, self.p, self.n, slabs=c * self.slabs)

    def is_zero(self):
        data = self.vals if self.row_sparse else self.slabs
        return not np.any(data)

    @property
    def shape(self):
        return (self.l, self.p, self.n)

    def __repr__(self):
        kind = "row-sparse" if self.row_sparse else "dense"
        return f"BilinearTensor(l={self.l}, p={self.p}, n={self.n}, {kind})"


@dataclass(frozen=True)
class JointState:
    """PC coefficients ``y`` and voxel-wise absorption change ``x``."""

    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        x = np.array(self.x, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("JointState entries must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    def stacked(self):
        return np.concatenate([self.y, self.x])

    @classmethod
    def from_stacked(cls, v, p):
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:p], v[p:])

    @classmethod
    def zeros(cls, p, n):
        return cls(np.zeros(p), np.zeros(n))

    def check(self, A):
        _vec(self.y, A.p, "y")
        _vec(self.x, A.n, "x")
        return self


def check_mean_operator(A0, A=None):
    """Validate the mean operator and warn when it is identically zero."""
    A0 = np.asarray(A0, dtype=np.float64)
    if A0.ndim != 2:
        raise DimensionError("mean operator", "2-D matrix", A0.shape)
    if A is not None and A0.shape != (A.l, A.n):
        raise DimensionError("mean operator", (A.l, A.n), A0.shape)
    if not np.all(np.isfinite(A0)):
        raise ValueError("mean operator entries must be finite")
    if not np.any(A0):
        warnings.warn(
            "mean operator is zero: (y, x) and (y/a, a x) fit the data equally",
            ZeroOperatorWarning,
            stacklevel=2,
        )
    return A0


def contract_y(A, y):
    """Contract over the coefficient index: ``sum_i y_i V_i`` (``l x n``)."""
    y = _vec(y, A.p, "y")
    if A.row_sparse:
        return _accel.rowsparse_contract_y(A.rows, A.vals, y, A.l)
    return np.tensordot(y, A.slabs, axes=(0, 0))


def contract_x(A, x):
    """Contract over the voxel index: ``[V_1 x, ..., V_p x]`` (``l x p``)."""
    x = _vec(x, A.n, "x")
    if A.row_sparse:
        return _accel.rowsparse_contract_x(A.rows, A.vals, x, A.l)
    return (A.slabs @ x).T


def contract_yx(A, y, x):
    """Tensor-vector-vector product over the last two indices."""
    y = _vec(y, A.p, "y")
    x = _vec(x, A.n, "x")
    if A.row_sparse:
        return _accel.rowsparse_contract_yx(A.rows, A.vals, y, x, A.l)
    return (A.slabs @ x).T @ y


def contract_l(A, u):
    """Contract over the measurement index: ``p x n`` matrix ``sum_r u_r A[r, :, :]``.

    This is the cross-term matrix appearing in the Hessian of the
    Tikhonov functional.
    """
    u = _vec(u, A.l, "u")
    if A.row_sparse:
        return u[A.rows, None] * A.vals
    return np.tensordot(u, A.slabs, axes=(0, 1))


def _top_right_singular(M, rng):
    if not np.any(M):
        v = rng.standard_normal(M.shape[1])
        return 0.0, v / np.linalg.norm(v)
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    return s[0], vt[0]


def tensor_norm(A, tol=1e-10, restarts=10, max_iter=500, seed=0):
    """Estimate ``sup ||A . (u, v)||`` over unit ``u`` (size p), ``v`` (size n).

    Alternating maximisation: for fixed ``v`` the optimal ``u`` is the top
    right singular vector of ``contract_x(A, v)`` and vice versa, so the
    objective never decreases.  The result is a lower bound on the norm;
    restarts from random ``v`` make it tight in practice.

    Raises
    ------
    ConvergenceError
        If no restart reaches relative change ``< tol`` within ``max_iter``
        sweeps.  ``err.best`` holds the best lower bound found.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if A.p == 0 or A.is_zero():
        return 0.0
    rng = np.random.default_rng(seed)
    best = 0.0
    any_converged = False
    for _ in range(restarts):
        v = rng.standard_normal(A.n)
        v /= np.linalg.norm(v)
        value = 0.0
        for _ in range(max_iter):
            _, u = _top_right_singular(contract_x(A, v), rng)
            new, v = _top_right_singular(contract_y(A, u), rng)
            if abs(new - value) <= tol * max(new, np.finfo(float).tiny):
                value = new
                any_converged = True
                break
            value = new
        best = max(best, value)
    if not any_converged:
        raise ConvergenceError(
            f"tensor norm iteration did not converge in {max_iter} sweeps", best=best
        )
    return best


def bilinear_jacobian(A, A0, s):
    """Jacobian ``[A_{x,3} | A0 + A_{y,2}]`` of ``(y, x) -> A0 x + A.(y, x)``."""
    A0 = np.asarray(A0, dtype=np.float64)
    if A0.shape != (A.l, A.n):
        raise DimensionError("mean operator", (A.l, A.n), A0.shape)
    return np.hstack([contract_x(A, s.x), A0 + contract_y(A, s.y)])


# -- serialization ------------------------------------------------------------

MANIFEST = "manifest.json"


def save_tensor(directory, A, A0=None):
    """Write ``A`` (and optionally ``A0``) as a manifest plus raw float64 files.

    Row-sparse slabs store only their nonzero row (shape ``1 x n``).
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    slabs = []
    for i in range(A.p):
        name = f"slab_{i:05d}.f64"
        data = A.vals[i][None, :] if A.row_sparse else A.slabs[i]
        write_matrix(d / name, data)
        slabs.append({"file": name, "shape": list(data.shape)})
    manifest = {
        "format": "bilinv-tensor",
        "version": 1,
        "dtype": "<f8",
        "order": "F",
        "dims": {"l": A.l, "p": A.p, "n": A.n},
        "row_sparse": A.row_sparse,
        "nonzero_rows": A.rows.tolist() if A.row_sparse else None,
        "slabs": slabs,
        "mean": None,
    }
    if A0 is not None:
        write_matrix(d / "mean.f64", np.asarray(A0, dtype=np.float64))
        manifest["mean"] = {"file": "mean.f64", "shape": [A.l, A.n]}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2))


def load_tensor(directory):
    """Inverse of :func:`save_tensor`; returns ``(A, A0 or None)``."""
    d = Path(directory)
    man = json.loads((d / MANIFEST).read_text())
    if man.get("format") != "bilinv-tensor":
        raise ValueError(f"{d / MANIFEST} is not a tensor manifest")
    l, p, n = (man["dims"][k] for k in ("l", "p", "n"))
    mats = [read_matrix(d / s["file"], tuple(s["shape"])) for s in man["slabs"]]
    if man["row_sparse"]:
        vals = np.vstack(mats) if mats else np.zeros((0, n))
        A = BilinearTensor(l, p, n, rows=man["nonzero_rows"], vals=vals)
    else:
        stack = np.stack(mats) if mats else np.zeros((0, l, n))
        A = BilinearTensor(l, p, n, slabs=stack)
    A0 = None
    if man.get("mean"):
        A0 = read_matrix(d / man["mean"]["file"], tuple(man["mean"]["shape"]))
    return A, A0
