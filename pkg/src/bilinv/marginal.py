"""Posterior of ``x`` with the PC coefficients ``y`` integrated out.

Because ``y`` enters the model linearly for fixed ``x``, the integral is
Gaussian and::

    log pi(x | b) = 1/2 log|G_{y|b,x}|
                    - 1/2 (||x||^2_{G3^-1} + ||b - A0 x||^2_{G_{b|x}^-1}) + const

with ``G_{y|b,x} = (G2^-1 + A_x^T G1^-1 A_x)^-1`` and
``G_{b|x} = G1 + A_x G2 A_x^T``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import FactorizationError
from .tensor import contract_x, contract_yx

__all__ = [
    "MarginalEval",
    "gamma_y_given_bx",
    "gamma_b_given_x",
    "log_marginal_posterior",
    "log_joint_posterior",
    "joint_factorization",
]


@dataclass(frozen=True)
class MarginalEval:
    log_density_unnormalized: float
    logdet_term: float
    prior_term: float
    data_term: float


def _precision_y(prob, Ax):
    return prob.gamma2.solve(np.eye(prob.A.p)) + Ax.T @ prob.gamma1.solve(Ax)


def gamma_y_given_bx(prob, x):
    """Covariance of ``y`` given ``b`` and ``x`` (``p x p``)."""
    P = _precision_y(prob, contract_x(prob.A, x))
    try:
        c = la.cho_factor(P, lower=True)
    except la.LinAlgError as err:
        raise FactorizationError(f"y-conditional precision not positive definite: {err}") from err
    G = la.cho_solve(c, np.eye(prob.A.p))
    return 0.5 * (G + G.T)


def gamma_b_given_x(prob, x):
    """Covariance of the data given ``x``: ``G1 + A_x G2 A_x^T``."""
    Ax = contract_x(prob.A, x)
    G = prob.gamma1.matrix() + prob.gamma2.sandwich(Ax)
    return 0.5 * (G + G.T)


def log_marginal_posterior(prob, x):
    """Unnormalised ``log pi(x | b)``; differences between ``x`` values are exact."""
    if not prob.gamma3.is_positive_definite:
        raise FactorizationError(
            "marginal posterior needs a positive definite x-prior; "
            "use a dense or diagonal covariance, or a larger truncation cut"
        )
    x = np.asarray(x, dtype=np.float64)
    Ax = contract_x(prob.A, x)
    P = _precision_y(prob, Ax)
    try:
        Lp = la.cholesky(P, lower=True)
    except la.LinAlgError as err:
        raise FactorizationError(f"y-conditional precision not positive definite: {err}") from err
    # log|G_{y|b,x}| = -log|P|
    logdet_term = -float(np.sum(np.log(np.diag(Lp)))) if prob.A.p else 0.0
    prior_term = prob.gamma3.inv_quad(x)
    xi = prob.b - prob.A0 @ x
    Lb = la.cholesky(gamma_b_given_x(prob, x), lower=True)
    z = la.solve_triangular(Lb, xi, lower=True)
    data_term = float(z @ z)
    return MarginalEval(
        log_density_unnormalized=logdet_term - 0.5 * (prior_term + data_term),
        logdet_term=logdet_term,
        prior_term=prior_term,
        data_term=data_term,
    )


def log_joint_posterior(prob, y, x):
    """``-1/2 Phi(y, x)``: the joint log-posterior up to a constant."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    r = prob.b - prob.A0 @ x - contract_yx(prob.A, y, x)
    return -0.5 * (prob.gamma1.inv_quad(r) + prob.gamma2.inv_quad(y) + prob.gamma3.inv_quad(x))


def joint_factorization(prob, y, x):
    """Split ``log pi(y, x | b)`` into a ``y``-Gaussian part and an ``x``-only part.

    Returns ``(log f, log g)`` where ``f`` is Gaussian in ``y`` with mean
    ``y_hat(x)`` and covariance ``G_{y|b,x}``, and ``g`` collects the rest:
    ``-1/2 (x^T G3^-1 x + xi^T G1^-1 xi - c)`` with ``xi = b - A0 x`` and
    ``c = xi^T G1^-1 A_x G_{y|b,x} A_x^T G1^-1 xi``.  Their sum equals
    :func:`log_joint_posterior` exactly.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    Ax = contract_x(prob.A, x)
    G = gamma_y_given_bx(prob, x)
    xi = prob.b - prob.A0 @ x
    h = Ax.T @ prob.gamma1.solve(xi)
    y_hat = G @ h
    d = y - y_hat
    log_f = -0.5 * float(d @ np.linalg.solve(G, d))
    c = float(h @ G @ h)
    log_g = -0.5 * (prob.gamma3.inv_quad(x) + prob.gamma1.inv_quad(xi) - c)
    return log_f, log_g
