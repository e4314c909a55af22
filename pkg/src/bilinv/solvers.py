"""MAP estimation: fixed-operator MAP, block coordinate descent, Gauss-Newton.

Every update is the posterior mean of a linear Gaussian model
``rhs = M v + e`` with ``v ~ N(0, P)``, ``e ~ N(0, G1)``.  It is computed
in data space::

    v = P M^T (M P M^T + G1)^{-1} rhs

so the only dense factorization is ``l x l``.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .errors import DimensionError, FactorizationError
from .objective import phi, phi_gradient
from .tensor import JointState, contract_x, contract_y, contract_yx

__all__ = [
    "SolverOptions",
    "SolveResult",
    "woodbury_posterior_mean",
    "fixed_operator_map",
    "bcd_x_update",
    "bcd_y_update",
    "bcd_solve",
    "gn_step",
    "gn_solve",
]

#: largest data dimension for which the l x l system is formed densely
MAX_DATA_DIM = 5000


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls.  ``max_iters=None`` picks the solver's own default."""

    max_iters: int = None
    step_kappa: float = 0.2
    tol_state: float = 1e-8
    tol_grad: float = 1e-7
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.step_kappa <= 1:
            raise ValueError("step_kappa must lie in (0, 1]")
        if self.tol_state <= 0 or self.tol_grad <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    state: JointState
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stop_reason: str = "iter_cap"
    grad_norm: float = float("nan")
    seconds: float = 0.0


def _factor_system(S):
    try:
        return la.cho_factor(S, lower=True, check_finite=True)
    except la.LinAlgError as err:
        raise FactorizationError(f"data-space system is not positive definite: {err}") from err


def woodbury_posterior_mean(M, prior_cov, noise_cov, rhs):
    """``P M^T (M P M^T + G1)^{-1} rhs`` via an ``l x l`` Cholesky solve."""
    M = np.asarray(M, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    l, n = M.shape
    if l > MAX_DATA_DIM:
        raise DimensionError("data dimension", f"<= {MAX_DATA_DIM}", l)
    if prior_cov.dim != n:
        raise DimensionError("prior covariance", n, prior_cov.dim)
    if noise_cov.dim != l or rhs.shape != (l,):
        raise DimensionError("noise covariance / rhs", l, (noise_cov.dim, rhs.shape))
    PMt = prior_cov.matmul(M.T)
    S = M @ PMt + noise_cov.matrix()
    return PMt @ la.cho_solve(_factor_system(S), rhs)


def fixed_operator_map(prob, operator):
    """MAP (= conditional mean) of ``x`` for the linear model with a fixed operator."""
    operator = np.asarray(operator, dtype=np.float64)
    if operator.shape != prob.A0.shape:
        raise DimensionError("operator", prob.A0.shape, operator.shape)
    return woodbury_posterior_mean(operator, prob.gamma3, prob.gamma1, prob.b)


def bcd_x_update(prob, y):
    M = prob.A0 + contract_y(prob.A, y)
    return woodbury_posterior_mean(M, prob.gamma3, prob.gamma1, prob.b)


def bcd_y_update(prob, x):
    if prob.A.p == 0:
        return np.zeros(0)
    Ax = contract_x(prob.A, x)
    return woodbury_posterior_mean(Ax, prob.gamma2, prob.gamma1, prob.b - prob.A0 @ x)


def _can_differentiate(prob):
    return prob.gamma3.is_positive_definite and prob.gamma1.is_positive_definite


def _rel_change(old, new):
    return np.linalg.norm(new - old) / max(np.linalg.norm(new), np.finfo(float).tiny)


class _Monitor:
    """Shared stopping logic and objective trace."""

    def __init__(self, prob, opts):
        self.prob = prob
        self.opts = opts
        self.grad_ok = _can_differentiate(prob)
        self.trace = []
        self.grad_norm = float("nan")

    def record(self, s):
        if self.opts.record_trace:
            self.trace.append(phi(self.prob, s) if self.grad_ok else float("nan"))

    def check(self, old_vec, s):
        if self.grad_ok:
            self.grad_norm = float(np.linalg.norm(phi_gradient(self.prob, s)))
            if self.grad_norm < self.opts.tol_grad:
                return "grad_tol"
        if _rel_change(old_vec, s.stacked()) < self.opts.tol_state:
            return "state_tol"
        return None


def bcd_solve(prob, opts=SolverOptions(), y0=None):
    """Alternate exact minimisation over ``x`` then ``y``.

    One iteration is one full sweep.  The objective never increases
    between sweeps.  Default cap: 10000 sweeps.
    """
    t0 = time.perf_counter()
    p, n = prob.A.p, prob.A.n
    y = np.zeros(p) if y0 is None else np.asarray(y0, dtype=np.float64).copy()
    if y.shape != (p,):
        raise DimensionError("y0", (p,), y.shape)
    max_iters = opts.max_iters or 10000
    mon = _Monitor(prob, opts)
    s = JointState(y, np.zeros(n))
    reason = "iter_cap"
    k = 0
    for k in range(1, max_iters + 1):
        old = s.stacked()
        x = bcd_x_update(prob, s.y)
        y = bcd_y_update(prob, x)
        s = JointState(y, x)
        mon.record(s)
        stop = mon.check(old, s)
        if stop:
            reason = stop
            break
    return SolveResult(
        state=s,
        objective_trace=mon.trace,
        iterations=k,
        converged=reason != "iter_cap",
        stop_reason=reason,
        grad_norm=mon.grad_norm,
        seconds=time.perf_counter() - t0,
    )


def gn_step(prob, s):
    """Gauss-Newton direction ``p = s* - s``.

    ``s*`` minimises the problem linearised at ``s``: data
    ``b + A.(y, x)``, operator ``J = [A_{x,3} | A0 + A_{y,2}]`` and the
    block-diagonal prior ``diag(G2, G3)``.
    """
    s.check(prob.A)
    Ax = contract_x(prob.A, s.x)
    M = prob.A0 + contract_y(prob.A, s.y)
    G2Axt = prob.gamma2.matmul(Ax.T) if prob.A.p else np.zeros((0, prob.A.l))
    G3Mt = prob.gamma3.matmul(M.T)
    S = Ax @ G2Axt + M @ G3Mt + prob.gamma1.matrix()
    d = prob.b + contract_yx(prob.A, s.y, s.x)
    w = la.cho_solve(_factor_system(S), d)
    target = np.concatenate([G2Axt @ w, G3Mt @ w])
    return target - s.stacked()


def gn_solve(prob, opts=SolverOptions(), s0=None):
    """Damped Gauss-Newton: ``s <- s + kappa * gn_step(s)``.  Default cap: 100 steps."""
    t0 = time.perf_counter()
    p, n = prob.A.p, prob.A.n
    s = JointState.zeros(p, n) if s0 is None else s0.check(prob.A)
    max_iters = opts.max_iters or 100
    mon = _Monitor(prob, opts)
    reason = "iter_cap"
    k = 0
    for k in range(1, max_iters + 1):
        old = s.stacked()
        s = JointState.from_stacked(old + opts.step_kappa * gn_step(prob, s), p)
        mon.record(s)
        stop = mon.check(old, s)
        if stop:
            reason = stop
            break
    return SolveResult(
        state=s,
        objective_trace=mon.trace,
        iterations=k,
        converged=reason != "iter_cap",
        stop_reason=reason,
        grad_norm=mon.grad_norm,
        seconds=time.perf_counter() - t0,
    )


def with_defaults(opts, **kw):
    """Copy of ``opts`` with selected fields replaced."""
    return replace(opts, **kw)
