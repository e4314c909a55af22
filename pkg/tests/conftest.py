import numpy as np
import pytest

from bilinv.covariance import CovarianceModel
from bilinv.objective import Problem
from bilinv.tensor import BilinearTensor


def random_spd(rng, k, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    w = np.exp(rng.uniform(0, np.log(cond), k))
    M = (Q * w) @ Q.T
    return 0.5 * (M + M.T)


def random_tensor(rng, l, p, n, row_sparse=False):
    if row_sparse:
        return BilinearTensor.from_row_sparse(rng.integers(0, l, p), rng.standard_normal((p, n)), l)
    return BilinearTensor.from_matrices(list(rng.standard_normal((p, l, n))),
                                        detect_row_sparse=False)


def random_problem(rng, l=None, p=None, n=None, row_sparse=False, dense_cov=True, scale=0.5):
    l = l or int(rng.integers(2, 11))
    p = p or int(rng.integers(1, 6))
    n = n or int(rng.integers(2, 21))
    A = random_tensor(rng, l, p, n, row_sparse).scaled(scale)
    A0 = rng.standard_normal((l, n))
    b = rng.standard_normal(l)
    if dense_cov:
        g1, g2, g3 = (CovarianceModel.dense(random_spd(rng, k)) for k in (l, p, n))
    else:
        g1, g2, g3 = (CovarianceModel.diagonal(rng.uniform(0.5, 2.0, k)) for k in (l, p, n))
    return Problem(A0, A, b, g1, g2, g3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` records and prints one line per acceptance criterion."""

    def record(k, ok, detail=""):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
