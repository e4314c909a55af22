"""Gaussian covariance models, the spatial absorption prior and FD noise formulas."""

import math
import threading
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _accel
from .errors import DimensionError, FactorizationError, RangeWarning

__all__ = [
    "CovarianceModel",
    "SpatialCovarianceSpec",
    "NoiseSpec",
    "build_spatial_covariance",
    "dense_spatial_covariance",
    "noise_std_amplitude",
    "noise_std_phase",
    "noise_std_log_amplitude",
    "difference_noise_std",
    "build_noise_covariance",
    "sample_gaussian",
    "DIFF_FACTOR",
]

#: sqrt(2) for a difference of two independent readings, 1/sqrt(30) for averaging 30 repeats
DIFF_FACTOR = math.sqrt(2.0) / math.sqrt(30.0)

DENSE_EIG_CAP = 2500


class CovarianceModel:
    """Symmetric positive (semi)definite covariance.

    ``kind`` is ``"diagonal"``, ``"dense"`` or ``"truncated_kernel"``
    (sparse).  Factorizations are computed lazily, once, and cached.

    The plain Cholesky factor is used whenever the matrix is positive
    definite.  Otherwise a pivoted Cholesky factor ``P L`` of numerical
    rank ``r`` is used: pivots below ``clamp_tol * max(diag)`` are clamped
    to zero.  A trailing pivot below ``-neg_tol * max(diag)`` means the
    matrix is genuinely indefinite and raises :class:`FactorizationError`.
    """

    def __init__(self, kind, data, clamp_tol=1e-10, neg_tol=1e-3):
        if kind not in ("diagonal", "dense", "truncated_kernel"):
            raise ValueError(f"unknown covariance kind {kind!r}")
        self.kind = kind
        self.clamp_tol = clamp_tol
        self.neg_tol = neg_tol
        if kind == "diagonal":
            d = np.asarray(data, dtype=np.float64).reshape(-1)
            if np.any(~np.isfinite(d)) or np.any(d <= 0):
                raise ValueError("diagonal variances must be finite and > 0")
            self.data = d
            self.dim = d.size
        elif kind == "dense":
            M = np.asarray(data, dtype=np.float64)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise DimensionError("dense covariance", "square matrix", M.shape)
            scale = max(np.max(np.abs(M)), 1.0) if M.size else 1.0
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * scale:
                raise ValueError("covariance must be symmetric")
            if np.any(np.diag(M) <= 0):
                raise ValueError("covariance diagonal must be > 0")
            self.data = 0.5 * (M + M.T)
            self.dim = M.shape[0]
        else:
            S = sp.csr_matrix(data, dtype=np.float64)
            if S.shape[0] != S.shape[1]:
                raise DimensionError("sparse covariance", "square matrix", S.shape)
            if abs(S - S.T).max() > 1e-12 * max(abs(S).max(), 1.0):
                raise ValueError("covariance must be symmetric")
            self.data = S
            self.dim = S.shape[0]
        self._lock = threading.Lock()
        self._chol = None
        self._chol_failed = False
        self._pivoted = None

    # -- constructors ---------------------------------------------------------
    @classmethod
    def diagonal(cls, variances):
        return cls("diagonal", variances)

    @classmethod
    def dense(cls, matrix):
        return cls("dense", matrix)

    @classmethod
    def identity(cls, dim):
        return cls("diagonal", np.ones(dim))

    # -- basic access -----------------------------------------------------------
    def matrix(self):
        if self.kind == "diagonal":
            return np.diag(self.data)
        if self.kind == "dense":
            return self.data.copy()
        return self.data.toarray()

    def diag(self):
        if self.kind == "diagonal":
            return self.data.copy()
        if self.kind == "dense":
            return np.diag(self.data).copy()
        return self.data.diagonal()

    def matmul(self, V):
        """Return ``Gamma @ V`` for a vector or matrix ``V``."""
        V = np.asarray(V, dtype=np.float64)
        if V.shape[0] != self.dim:
            raise DimensionError("covariance product", (self.dim,), V.shape)
        if self.kind == "diagonal":
            return self.data[:, None] * V if V.ndim == 2 else self.data * V
        return self.data @ V

    def sandwich(self, M):
        """Return ``M Gamma M^T`` for an ``k x dim`` matrix ``M``."""
        M = np.asarray(M, dtype=np.float64)
        return M @ self.matmul(M.T)

    def scaled(self, c):
        if c <= 0:
            raise ValueError("scale must be positive")
        return CovarianceModel(self.kind, c * self.data, self.clamp_tol, self.neg_tol)

    def __repr__(self):
        return f"CovarianceModel(kind={self.kind!r}, dim={self.dim})"

    # -- factorizations ---------------------------------------------------------
    def cholesky(self):
        """Lower Cholesky factor, or ``None`` if the matrix is not positive definite."""
        if self.kind == "diagonal":
            return None
        with self._lock:
            if self._chol is None and not self._chol_failed:
                try:
                    self._chol = la.cholesky(self.matrix(), lower=True)
                except la.LinAlgError:
                    self._chol_failed = True
        return self._chol

    @property
    def is_positive_definite(self):
        return self.kind == "diagonal" or self.cholesky() is not None

    def pivoted_factor(self):
        """Return ``(perm, L)`` with ``Gamma ~= B B^T``, ``B = L[inv(perm)]``.

        ``L`` is ``dim x r``; row ``k`` of ``L`` belongs to original index
        ``perm[k]``.
        """
        with self._lock:
            if self._pivoted is None:
                self._pivoted = self._compute_pivoted()
        return self._pivoted

    def _compute_pivoted(self):
        if self.kind == "diagonal":
            return np.arange(self.dim), np.diag(np.sqrt(self.data))
        A = self.matrix()
        d = np.diag(A)
        dmax = float(np.max(d)) if d.size else 0.0
        if dmax <= 0:
            return np.arange(self.dim), np.zeros((self.dim, 0))
        c, piv, rank, info = la.lapack.dpstrf(A, tol=self.clamp_tol * dmax, lower=1)
        if info < 0:
            raise FactorizationError(f"dpstrf argument error {info}")
        perm = piv - 1
        L = np.tril(c)[:, :rank]
        trailing = d[perm[rank:]] - np.sum(L[rank:] ** 2, axis=1)
        if trailing.size:
            k = int(np.argmin(trailing))
            if not np.isfinite(trailing[k]) or trailing[k] < -self.neg_tol * dmax:
                raise FactorizationError(
                    f"covariance is indefinite: pivot at index {perm[rank + k]} "
                    f"has Schur value {trailing[k]:.3e} (max diagonal {dmax:.3e})",
                    pivot=int(perm[rank + k]),
                    value=float(trailing[k]),
                )
        return perm, L

    def _range_basis(self):
        perm, L = self.pivoted_factor()
        B = np.zeros_like(L)
        B[perm] = L
        return B

    def apply_sqrt(self, z):
        """Map standard normal ``z`` (length = factor rank) to a ``N(0, Gamma)`` draw."""
        if self.kind == "diagonal":
            return np.sqrt(self.data) * z
        L = self.cholesky()
        if L is not None:
            return L @ z
        perm, Lp = self.pivoted_factor()
        out = np.zeros(self.dim)
        out[perm] = Lp @ z
        return out

    @property
    def sqrt_rank(self):
        if self.kind == "diagonal" or self.cholesky() is not None:
            return self.dim
        return self.pivoted_factor()[1].shape[1]

    def solve(self, v):
        """``Gamma^{-1} v`` (pseudo-inverse when only semidefinite)."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise DimensionError("covariance solve", (self.dim,), v.shape)
        if self.kind == "diagonal":
            return v / self.data[:, None] if v.ndim == 2 else v / self.data
        L = self.cholesky()
        if L is not None:
            return la.cho_solve((L, True), v)
        B = self._range_basis()
        w = self._lstsq_checked(B, v)
        return B @ np.linalg.solve(B.T @ B, w)

    def _lstsq_checked(self, B, v):
        w, *_ = np.linalg.lstsq(B, v, rcond=None)
        resid = np.linalg.norm(B @ w - v)
        if resid > 1e-8 * max(np.linalg.norm(v), np.finfo(float).tiny):
            warnings.warn(
                "vector has components outside the range of a semidefinite covariance; "
                "they are ignored in the quadratic form",
                RangeWarning,
                stacklevel=3,
            )
        return w

    def whiten(self, v):
        """``L^{-1} v`` so that ``||whiten(v)||^2 = v^T Gamma^{-1} v``."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.dim:
            raise DimensionError("covariance whiten", (self.dim,), v.shape)
        if self.kind == "diagonal":
            s = np.sqrt(self.data)
            return v / s[:, None] if v.ndim == 2 else v / s
        L = self.cholesky()
        if L is not None:
            return la.solve_triangular(L, v, lower=True)
        return self._lstsq_checked(self._range_basis(), v)

    def inv_quad(self, v):
        """``v^T Gamma^{-1} v`` computed through the factor, never an inverse."""
        w = self.whiten(v)
        return float(np.dot(w, w))

    def logdet(self):
        if self.kind == "diagonal":
            return float(np.sum(np.log(self.data)))
        L = self.cholesky()
        if L is None:
            raise FactorizationError("log-determinant needs a positive definite covariance")
        return float(2.0 * np.sum(np.log(np.diag(L))))

    def eig_extremes(self):
        """``(smallest, largest)`` eigenvalue."""
        if self.kind == "diagonal":
            return float(self.data.min()), float(self.data.max())
        if self.kind == "dense" or self.dim <= DENSE_EIG_CAP:
            w = la.eigvalsh(self.matrix())
            return float(w[0]), float(w[-1])
        lo = spla.eigsh(self.data, k=1, which="SA", return_eigenvectors=False)[0]
        hi = spla.eigsh(self.data, k=1, which="LA", return_eigenvectors=False)[0]
        return float(lo), float(hi)


# -- spatial prior -------------------------------------------------------------

@dataclass(frozen=True)
class SpatialCovarianceSpec:
    """Voxel-wise SD ``sigma`` (1/mm), correlation length (mm), relative cut."""

    sigma: float = 0.003
    corr_len: float = 3.0
    rel_cut: float = 0.01

    def __post_init__(self):
        if self.sigma <= 0 or self.corr_len <= 0:
            raise ValueError("sigma and corr_len must be positive")
        if not 0 < self.rel_cut < 1:
            raise ValueError("rel_cut must lie in (0, 1)")


def build_spatial_covariance(spec, centers):
    """Squared-exponential voxel covariance truncated below ``(rel_cut*sigma)^2``.

    Entries ``sigma^2 exp(-|z_i - z_j|^2 / (2 c^2))`` are kept only when
    strictly greater than the cut, so the result is sparse.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != 3 or centers.shape[0] == 0:
        raise DimensionError("voxel centers", "(n, 3) with n >= 1", centers.shape)
    if not np.all(np.isfinite(centers)):
        raise ValueError("voxel centers must be finite")
    sigma2 = spec.sigma**2
    cut = (spec.rel_cut * spec.sigma) ** 2
    rows, cols, vals = _accel.truncated_gaussian(centers, sigma2, spec.corr_len, cut)
    n = centers.shape[0]
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    S.sort_indices()
    return CovarianceModel("truncated_kernel", S)


def dense_spatial_covariance(spec, centers):
    """The same kernel without truncation, as a dense matrix.

    Positive semidefinite in exact arithmetic, so it can be sampled even
    when the truncated version is indefinite.  Memory is ``8 n^2`` bytes.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != 3 or centers.shape[0] == 0:
        raise DimensionError("voxel centers", "(n, 3) with n >= 1", centers.shape)
    sq = np.sum(centers**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * centers @ centers.T, 0.0)
    K = spec.sigma**2 * np.exp(-d2 / (2.0 * spec.corr_len**2))
    return CovarianceModel("dense", K)


# -- noise model ---------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Coefficients of the frequency-domain amplitude/phase noise model."""

    intensity_threshold: float = 1.2e-5
    amp_coeff_low: float = 6.5e-7
    amp_coeff_high: float = 1.9e-4
    phase_coeff_low: float = 1.3e-4  # degrees * sqrt(weight)
    phase_floor: float = 0.038  # degrees
    diff_factor: float = DIFF_FACTOR

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"NoiseSpec.{name} must be positive, got {value}")


def noise_std_amplitude(I, A, spec=NoiseSpec()):
    """SD of the absolute amplitude; shot-noise branch at or below the threshold."""
    if I < 0 or A < 0:
        raise ValueError("total weight and amplitude must be nonnegative")
    if I <= spec.intensity_threshold:
        return spec.amp_coeff_low * math.sqrt(I)
    return spec.amp_coeff_high * A


def noise_std_phase(I, spec=NoiseSpec()):
    """SD of the absolute phase in degrees."""
    if I < 0:
        raise ValueError("total weight must be nonnegative")
    if I == 0:
        raise ValueError("zero detected weight: phase noise is unbounded")
    if I <= spec.intensity_threshold:
        return spec.phase_coeff_low / math.sqrt(I)
    return spec.phase_floor


def noise_std_log_amplitude(I, A, spec=NoiseSpec()):
    """Linearized SD of ``log A``: ``sigma_A / A``."""
    if A <= 0:
        raise ValueError("amplitude must be positive for log-amplitude noise")
    return noise_std_amplitude(I, A, spec) / A


def difference_noise_std(sigma_single, spec=NoiseSpec()):
    if sigma_single < 0:
        raise ValueError("SD must be nonnegative")
    return spec.diff_factor * sigma_single


def build_noise_covariance(per_channel_sds):
    sds = np.asarray(per_channel_sds, dtype=np.float64).reshape(-1)
    if sds.size == 0 or np.any(~(sds > 0)) or np.any(~np.isfinite(sds)):
        raise ValueError("noise SDs must be finite and positive")
    return CovarianceModel.diagonal(sds**2)


def sample_gaussian(mean, cov, rng_seed=None):
    """Draw from ``N(mean, cov)``; ``rng_seed`` is an int, a Generator or None."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (cov.dim,):
        raise DimensionError("mean", (cov.dim,), mean.shape)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    rank = cov.sqrt_rank
    if rank == 0:
        return mean.copy()
    return mean + cov.apply_sqrt(rng.standard_normal(rank))
