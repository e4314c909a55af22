import os
import subprocess
import sys

import numpy as np
import pytest

from bilinv import _accel
from bilinv.phantom import layered_grid

pytestmark = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")


def _coo_dict(t):
    return dict(zip(zip(t[0].tolist(), t[1].tolist()), t[2].tolist()))


def test_truncated_gaussian_backends_agree():
    c = layered_grid((6, 5, 4), 2.0).centers
    a = _coo_dict(_accel.NUMPY_KERNELS["truncated_gaussian"](c, 9e-6, 3.0, 9e-10))
    b = _coo_dict(_accel.NUMBA_KERNELS["truncated_gaussian"](c, 9e-6, 3.0, 9e-10))
    assert a.keys() == b.keys()
    assert max(abs(a[k] - b[k]) for k in a) < 1e-20
    assert all(a[(i, i)] == 9e-6 for i in range(len(c)))


@pytest.mark.parametrize("name", ["rowsparse_contract_y", "rowsparse_contract_x",
                                  "rowsparse_contract_yx"])
def test_contractions_agree(rng, name):
    l, p, n = 7, 15, 11
    rows = np.sort(rng.integers(0, l, p)).astype(np.int64)
    vals = rng.standard_normal((p, n))
    y, x = rng.standard_normal(p), rng.standard_normal(n)
    args = {"rowsparse_contract_y": (rows, vals, y, l),
            "rowsparse_contract_x": (rows, vals, x, l),
            "rowsparse_contract_yx": (rows, vals, y, x, l)}[name]
    np.testing.assert_allclose(_accel.NUMPY_KERNELS[name](*args),
                               _accel.NUMBA_KERNELS[name](*args), rtol=1e-13, atol=1e-14)


def test_phasor_sums_agree(rng):
    w, t = rng.uniform(0.1, 1, 1000), rng.uniform(0, 5e-9, 1000)
    np.testing.assert_allclose(_accel.NUMPY_KERNELS["phasor_sums"](w, t, 1e8),
                               _accel.NUMBA_KERNELS["phasor_sums"](w, t, 1e8), rtol=1e-12)


def _run(backend, code):
    env = dict(os.environ, BILINV_BACKEND=backend)
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                          text=True, check=False)


def test_env_var_selects_backend():
    code = ("import numpy as np, bilinv\n"
            "from bilinv.objective import scalar_example_problem\n"
            "from bilinv.solvers import gn_solve\n"
            "r = gn_solve(scalar_example_problem(1.0))\n"
            "print(bilinv.BACKEND, repr(float(r.state.x[0])))\n")
    a = _run("numpy", code)
    b = _run("numba", code)
    assert a.returncode == 0 and b.returncode == 0, a.stderr + b.stderr
    (na, xa), (nb, xb) = a.stdout.split(), b.stdout.split()
    assert na == "numpy" and nb == "numba"
    assert abs(float(xa) - float(xb)) < 1e-12
    bad = _run("fortran", "import bilinv")
    assert bad.returncode != 0 and "BILINV_BACKEND" in bad.stderr
