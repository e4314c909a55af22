"""Tikhonov functional of the bilinear problem and its derivatives.

    Phi(y, x) = ||b - A0 x - A.(y, x)||^2_{G1^-1} + ||y||^2_{G2^-1} + ||x||^2_{G3^-1}

Quadratic forms go through the covariance factors, so no covariance is
ever inverted explicitly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .covariance import CovarianceModel
from .errors import DimensionError
from .tensor import (
    BilinearTensor,
    JointState,
    check_mean_operator,
    contract_l,
    contract_x,
    contract_y,
    contract_yx,
    tensor_norm,
)

__all__ = [
    "Problem",
    "ConvexityDiagnostics",
    "residual",
    "phi",
    "phi_gradient",
    "phi_hessian",
    "hessian_vector_product",
    "restricted_hessian",
    "convexity_diagnostics",
    "scalar_example_problem",
]

DENSE_HESSIAN_CAP = 2000


@dataclass(frozen=True)
class Problem:
    """Data, operator model and Gaussian covariances of one inverse problem."""

    A0: np.ndarray
    A: BilinearTensor
    b: np.ndarray
    gamma1: CovarianceModel
    gamma2: CovarianceModel
    gamma3: CovarianceModel

    def __post_init__(self):
        A0 = check_mean_operator(self.A0, self.A)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        l, p, n = self.A.shape
        if b.shape != (l,):
            raise DimensionError("data b", (l,), b.shape)
        for name, cov, dim in (("gamma1", self.gamma1, l), ("gamma2", self.gamma2, p),
                               ("gamma3", self.gamma3, n)):
            if cov.dim != dim:
                raise DimensionError(name, dim, cov.dim)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "b", b)

    @property
    def dims(self):
        return self.A.shape

    def with_data(self, b):
        return Problem(self.A0, self.A, b, self.gamma1, self.gamma2, self.gamma3)

    def with_operator(self, A0, A=None, gamma2=None):
        A = self.A if A is None else A
        gamma2 = self.gamma2 if gamma2 is None else gamma2
        return Problem(A0, A, self.b, self.gamma1, gamma2, self.gamma3)


def scalar_example_problem(beta):
    """Scalar problem with ``Phi = (1 - x - y x)^2 + beta (y^2 + x^2)``."""
    A = BilinearTensor.from_matrices([np.ones((1, 1))])
    prior = CovarianceModel.diagonal([1.0 / beta])
    return Problem(
        A0=np.ones((1, 1)),
        A=A,
        b=np.ones(1),
        gamma1=CovarianceModel.identity(1),
        gamma2=prior,
        gamma3=prior,
    )


def _effective_operator(prob, y):
    return prob.A0 + contract_y(prob.A, y)


def residual(prob, s):
    """``b - A0 x - A.(y, x)``."""
    s.check(prob.A)
    return prob.b - prob.A0 @ s.x - contract_yx(prob.A, s.y, s.x)


def phi(prob, s):
    r = residual(prob, s)
    return prob.gamma1.inv_quad(r) + prob.gamma2.inv_quad(s.y) + prob.gamma3.inv_quad(s.x)


def phi_gradient(prob, s):
    """Stacked gradient ``(dPhi/dy, dPhi/dx)``."""
    r = residual(prob, s)
    w = prob.gamma1.solve(r)
    Ax = contract_x(prob.A, s.x)
    M = _effective_operator(prob, s.y)
    gy = -Ax.T @ w + prob.gamma2.solve(s.y)
    gx = -M.T @ w + prob.gamma3.solve(s.x)
    return 2.0 * np.concatenate([gy, gx])


def _inverse_matrix(cov):
    return cov.solve(np.eye(cov.dim))


def phi_hessian(prob, s):
    """Dense ``(p+n) x (p+n)`` Hessian including the residual cross term."""
    r = residual(prob, s)
    W = _inverse_matrix(prob.gamma1)
    Ax = contract_x(prob.A, s.x)
    M = _effective_operator(prob, s.y)
    C = contract_l(prob.A, W @ r)
    Hyy = _inverse_matrix(prob.gamma2) + Ax.T @ W @ Ax
    Hyx = Ax.T @ W @ M - C
    Hxx = _inverse_matrix(prob.gamma3) + M.T @ W @ M
    H = 2.0 * np.block([[Hyy, Hyx], [Hyx.T, Hxx]])
    return 0.5 * (H + H.T)


def hessian_vector_product(prob, s, v):
    """``H(s) v`` without forming the Hessian."""
    p = prob.A.p
    v = np.asarray(v, dtype=np.float64)
    ups, xi = v[:p], v[p:]
    r = residual(prob, s)
    wr = prob.gamma1.solve(r)
    Ax = contract_x(prob.A, s.x)
    M = _effective_operator(prob, s.y)
    q = prob.gamma1.solve(Ax @ ups + M @ xi)
    hy = prob.gamma2.solve(ups) + Ax.T @ q - contract_x(prob.A, xi).T @ wr
    hx = prob.gamma3.solve(xi) + M.T @ q - contract_y(prob.A, ups).T @ wr
    return 2.0 * np.concatenate([hy, hx])


def restricted_hessian(prob, y0, x0, alpha, beta):
    """Hessian of ``f(a, b) = Phi(a y0, b x0)`` at ``(alpha, beta)``."""
    y0 = np.asarray(y0, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    s = JointState(alpha * y0, beta * x0)
    p = prob.A.p
    T = np.zeros((p + prob.A.n, 2))
    T[:p, 0] = y0
    T[p:, 1] = x0
    HT = np.column_stack([hessian_vector_product(prob, s, T[:, k]) for k in range(2)])
    Hf = T.T @ HT
    return 0.5 * (Hf + Hf.T)


def _min_hessian_eig(prob, s):
    dim = prob.A.p + prob.A.n
    if dim <= DENSE_HESSIAN_CAP:
        return float(la.eigvalsh(phi_hessian(prob, s))[0])
    op = spla.LinearOperator((dim, dim), matvec=lambda v: hessian_vector_product(prob, s, v))
    return float(spla.eigsh(op, k=1, which="SA", return_eigenvectors=False)[0])


@dataclass
class ConvexityDiagnostics:
    """Quantities from the strict-convexity ball argument plus an empirical probe.

    ``probe_min_eig`` is the smallest Hessian eigenvalue seen at the probe
    points; ``hessian_pd_at`` is the probe point where it was attained.
    A positive value is evidence, not proof, of convexity in the ball.
    """

    mu: float
    rho: float
    lambda1_min: float
    lambda2_max: float
    lambda3_max: float
    probe_min_eig: float = float("nan")
    hessian_pd_at: JointState = field(default=None)
    probe_count: int = 0
    bound_lhs: float = float("nan")
    bound_rhs: float = float("nan")

    @property
    def sufficient_condition(self):
        """True when the residual bound certifies strict convexity in the ball."""
        return bool(self.bound_lhs < self.bound_rhs)


def convexity_diagnostics(prob, n_probe=100, seed=0):
    l1_min, _ = prob.gamma1.eig_extremes()
    l2_max = prob.gamma2.eig_extremes()[1] if prob.A.p else 0.0
    l3_max = prob.gamma3.eig_extremes()[1]
    mu = max(l2_max, l3_max) / l1_min
    rho = float(np.sqrt(mu) * np.linalg.norm(prob.b))
    diag = ConvexityDiagnostics(mu, rho, l1_min, l2_max, l3_max)
    # 1/2 |||A||| |b|^2 mu^2 + |A0| |b| mu^(3/2) + |b| mu < 1 / |||A|||
    a_norm = tensor_norm(prob.A)
    bn = float(np.linalg.norm(prob.b))
    a0n = float(np.linalg.norm(prob.A0, 2))
    diag.bound_lhs = 0.5 * a_norm * bn**2 * mu**2 + a0n * bn * mu**1.5 + bn * mu
    diag.bound_rhs = 1.0 / a_norm if a_norm > 0 else float("inf")
    if n_probe <= 0:
        return diag
    rng = np.random.default_rng(seed)
    p, n = prob.A.p, prob.A.n
    dim = p + n
    best, best_state = np.inf, None
    for _ in range(n_probe):
        d = rng.standard_normal(dim)
        d *= rho * rng.uniform() ** (1.0 / dim) / np.linalg.norm(d)
        s = JointState.from_stacked(d, p)
        e = _min_hessian_eig(prob, s)
        if e < best:
            best, best_state = e, s
    diag.probe_min_eig = best
    diag.hessian_pd_at = best_state
    diag.probe_count = n_probe
    return diag
