import numpy as np
import pytest

from bilinv.covariance import CovarianceModel
from bilinv.errors import DimensionError, FactorizationError
from bilinv.objective import Problem, phi, phi_gradient, scalar_example_problem
from bilinv.solvers import (
    SolverOptions,
    bcd_solve,
    bcd_x_update,
    bcd_y_update,
    fixed_operator_map,
    gn_solve,
    gn_step,
    woodbury_posterior_mean,
)
from bilinv.tensor import BilinearTensor, JointState, contract_x, contract_y, contract_yx

from conftest import random_problem


def inv(C):
    return np.linalg.inv(C.matrix())


def normal_eq(M, P, G1, rhs):
    """Dense n x n normal equations: (M^T G1^-1 M + P^-1)^-1 M^T G1^-1 rhs."""
    W = inv(G1)
    return np.linalg.solve(M.T @ W @ M + inv(P), M.T @ W @ rhs)


def stacked_lsq_step(prob, s):
    """Gauss-Newton step from the whitened stacked least-squares system."""
    Ax = contract_x(prob.A, s.x)
    M = prob.A0 + contract_y(prob.A, s.y)
    J = np.hstack([Ax, M])
    d = prob.b + contract_yx(prob.A, s.y, s.x)
    W1 = np.linalg.cholesky(inv(prob.gamma1)).T
    p = prob.A.p
    P = np.zeros((J.shape[1],) * 2)
    P[:p, :p] = inv(prob.gamma2)
    P[p:, p:] = inv(prob.gamma3)
    Wp = np.linalg.cholesky(P).T
    K = np.vstack([W1 @ J, Wp])
    r = np.concatenate([W1 @ d, np.zeros(J.shape[1])])
    v, *_ = np.linalg.lstsq(K, r, rcond=None)
    return v - s.stacked()


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("dense_cov", [True, False])
def test_updates_match_dense_oracles(rng, dense_cov):
    for _ in range(20):
        prob = random_problem(rng, dense_cov=dense_cov, row_sparse=bool(rng.integers(2)))
        p, n = prob.A.p, prob.A.n
        y, x = rng.standard_normal(p), rng.standard_normal(n)
        M = prob.A0 + contract_y(prob.A, y)
        assert rel(bcd_x_update(prob, y), normal_eq(M, prob.gamma3, prob.gamma1, prob.b)) < 1e-10
        Ax = contract_x(prob.A, x)
        ref = normal_eq(Ax, prob.gamma2, prob.gamma1, prob.b - prob.A0 @ x)
        assert rel(bcd_y_update(prob, x), ref) < 1e-10
        ref = normal_eq(prob.A0, prob.gamma3, prob.gamma1, prob.b)
        assert rel(fixed_operator_map(prob, prob.A0), ref) < 1e-10
        s = JointState(y, x)
        assert rel(gn_step(prob, s), stacked_lsq_step(prob, s)) < 1e-10


def test_woodbury_validation(rng):
    prob = random_problem(rng, l=3, p=2, n=4)
    with pytest.raises(DimensionError):
        woodbury_posterior_mean(np.ones((3, 5)), prob.gamma3, prob.gamma1, prob.b)
    with pytest.raises(DimensionError):
        woodbury_posterior_mean(prob.A0, prob.gamma3, prob.gamma1, np.ones(2))
    with pytest.raises(DimensionError):
        fixed_operator_map(prob, np.ones((2, 4)))
    # singular noise covariance and a zero operator: the l x l system is singular
    sing = CovarianceModel.dense([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(FactorizationError):
        woodbury_posterior_mean(np.zeros((3, 4)), prob.gamma3, sing, prob.b)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(max_iters=0)
    with pytest.raises(ValueError):
        SolverOptions(step_kappa=0)
    with pytest.raises(ValueError):
        SolverOptions(step_kappa=1.5)
    with pytest.raises(ValueError):
        SolverOptions(tol_grad=0)


def test_bcd_is_monotone(rng):
    for _ in range(10):
        prob = random_problem(rng, scale=2.0)
        res = bcd_solve(prob, SolverOptions(max_iters=50))
        tr = np.array(res.objective_trace)
        assert np.all(np.diff(tr) <= 1e-10 * np.abs(tr[:-1]))
        assert res.iterations == len(tr)


def test_zero_tensor_reduces_to_linear_map(rng):
    prob = random_problem(rng, l=6, p=3, n=9)
    lin = Problem(prob.A0, BilinearTensor.zeros(6, 3, 9), prob.b,
                  prob.gamma1, prob.gamma2, prob.gamma3)
    ref = fixed_operator_map(lin, lin.A0)
    r = bcd_solve(lin)
    assert r.converged
    np.testing.assert_allclose(r.state.x, ref, rtol=1e-12, atol=1e-14)
    assert not np.any(r.state.y)
    g = gn_solve(lin, SolverOptions(step_kappa=1.0))
    assert g.iterations <= 2
    np.testing.assert_allclose(g.state.x, ref, rtol=1e-10, atol=1e-14)


def test_gn_stops_on_gradient(rng):
    prob = random_problem(rng, scale=0.2)
    r = gn_solve(prob, SolverOptions(step_kappa=1.0, tol_grad=1e-8, tol_state=1e-300))
    assert r.stop_reason == "grad_tol" and r.converged
    assert np.linalg.norm(phi_gradient(prob, r.state)) < 1e-8


def test_iteration_cap_reports_not_converged(rng):
    prob = random_problem(rng, scale=2.0)
    r = gn_solve(prob, SolverOptions(max_iters=2, step_kappa=0.1))
    assert r.iterations == 2 and not r.converged and r.stop_reason == "iter_cap"
    with pytest.raises(DimensionError):
        bcd_solve(prob, y0=np.zeros(prob.A.p + 1))


def test_semidefinite_prior_skips_gradient_test(rng):
    prob = random_problem(rng, l=4, p=2, n=5)
    B = rng.standard_normal((5, 3))
    semi = Problem(prob.A0, prob.A, prob.b, prob.gamma1, prob.gamma2,
                   CovarianceModel.dense(B @ B.T))
    r = bcd_solve(semi, SolverOptions(max_iters=500))
    assert np.isnan(r.grad_norm) and r.stop_reason in ("state_tol", "iter_cap")
    # every x update lies in the range of the prior covariance
    P = B @ np.linalg.pinv(B)
    np.testing.assert_allclose(P @ r.state.x, r.state.x, atol=1e-10)


@pytest.mark.parametrize("solver", ["gn", "bcd"])
def test_example_beta1(solver):
    prob = scalar_example_problem(1.0)
    opts = SolverOptions(step_kappa=1.0, max_iters=49, tol_grad=1e-10)
    r = gn_solve(prob, opts) if solver == "gn" else bcd_solve(prob, opts)
    assert abs(r.state.x[0] - 0.492) < 1e-3 and abs(r.state.y[0] - 0.201) < 1e-3
    assert r.iterations < 50


@pytest.mark.parametrize("solver", ["gn", "bcd"])
def test_example_beta01_local_minimum(solver):
    prob = scalar_example_problem(0.1)
    opts = SolverOptions(step_kappa=1.0, max_iters=1000, tol_grad=1e-9, tol_state=1e-300)
    r = gn_solve(prob, opts) if solver == "gn" else bcd_solve(prob, opts)
    assert r.grad_norm < 1e-6
    mins = [(0.698, 0.359), (-1.139, -1.744)]
    assert any(abs(r.state.x[0] - a) < 1e-3 and abs(r.state.y[0] - b) < 1e-3 for a, b in mins)
    assert phi(prob, r.state) <= phi(prob, JointState.zeros(1, 1))
