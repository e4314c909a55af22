"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time from ``BILINV_BACKEND``
(``"numba"`` or ``"numpy"``).  If numba is missing, numpy is used
regardless.  Both implementations stay importable under ``NUMBA_KERNELS``
and ``NUMPY_KERNELS`` so tests and benchmarks can compare them directly.
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False


# -- pure numpy ---------------------------------------------------------------

def _np_truncated_gaussian(centers, sigma2, corr_len, cut, chunk=512):
    n = centers.shape[0]
    two_cl2 = 2.0 * corr_len * corr_len
    rows, cols, vals = [], [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = centers[start:stop, None, :] - centers[None, :, :]
        k = sigma2 * np.exp(-np.einsum("ijk,ijk->ij", d, d) / two_cl2)
        i, j = np.nonzero(k > cut)
        rows.append(i + start)
        cols.append(j)
        vals.append(k[i, j])
    rows = np.concatenate(rows).astype(np.int64)
    cols = np.concatenate(cols).astype(np.int64)
    vals = np.concatenate(vals)
    vals[rows == cols] = sigma2
    return rows, cols, vals


def _np_rowsparse_contract_y(rows, vals, y, l):
    out = np.zeros((l, vals.shape[1]))
    np.add.at(out, rows, y[:, None] * vals)
    return out


def _np_rowsparse_contract_x(rows, vals, x, l):
    out = np.zeros((l, vals.shape[0]))
    out[rows, np.arange(vals.shape[0])] = vals @ x
    return out


def _np_rowsparse_contract_yx(rows, vals, y, x, l):
    return np.bincount(rows, weights=y * (vals @ x), minlength=l).astype(float)


def _np_phasor_sums(weights, times, freq):
    arg = 2.0 * np.pi * freq * times
    return (
        float(np.sum(weights)),
        float(np.sum(weights * np.cos(arg))),
        float(np.sum(weights * np.sin(arg))),
    )


NUMPY_KERNELS = {
    "truncated_gaussian": _np_truncated_gaussian,
    "rowsparse_contract_y": _np_rowsparse_contract_y,
    "rowsparse_contract_x": _np_rowsparse_contract_x,
    "rowsparse_contract_yx": _np_rowsparse_contract_yx,
    "phasor_sums": _np_phasor_sums,
}


# -- numba ----------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_truncated_gaussian(centers, sigma2, corr_len, cut):
        n = centers.shape[0]
        two_cl2 = 2.0 * corr_len * corr_len
        # first pass counts, second fills; keeps memory at nnz
        count = 0
        for i in range(n):
            for j in range(n):
                d0 = centers[i, 0] - centers[j, 0]
                d1 = centers[i, 1] - centers[j, 1]
                d2 = centers[i, 2] - centers[j, 2]
                if sigma2 * np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) / two_cl2) > cut:
                    count += 1
        rows = np.empty(count, dtype=np.int64)
        cols = np.empty(count, dtype=np.int64)
        vals = np.empty(count)
        k = 0
        for i in range(n):
            for j in range(n):
                d0 = centers[i, 0] - centers[j, 0]
                d1 = centers[i, 1] - centers[j, 1]
                d2 = centers[i, 2] - centers[j, 2]
                v = sigma2 * np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) / two_cl2)
                if v > cut:
                    rows[k] = i
                    cols[k] = j
                    vals[k] = sigma2 if i == j else v
                    k += 1
        return rows, cols, vals

    @njit(cache=True)
    def _nb_rowsparse_contract_y(rows, vals, y, l):
        p, n = vals.shape
        out = np.zeros((l, n))
        for i in range(p):
            r = rows[i]
            yi = y[i]
            if yi != 0.0:
                for j in range(n):
                    out[r, j] += yi * vals[i, j]
        return out

    @njit(cache=True)
    def _nb_rowsparse_contract_x(rows, vals, x, l):
        p, n = vals.shape
        out = np.zeros((l, p))
        for i in range(p):
            s = 0.0
            for j in range(n):
                s += vals[i, j] * x[j]
            out[rows[i], i] = s
        return out

    @njit(cache=True)
    def _nb_rowsparse_contract_yx(rows, vals, y, x, l):
        p, n = vals.shape
        out = np.zeros(l)
        for i in range(p):
            s = 0.0
            for j in range(n):
                s += vals[i, j] * x[j]
            out[rows[i]] += y[i] * s
        return out

    @njit(cache=True)
    def _nb_phasor_sums(weights, times, freq):
        w_sum = 0.0
        c_sum = 0.0
        s_sum = 0.0
        omega = 2.0 * np.pi * freq
        for k in range(weights.shape[0]):
            a = omega * times[k]
            w_sum += weights[k]
            c_sum += weights[k] * np.cos(a)
            s_sum += weights[k] * np.sin(a)
        return w_sum, c_sum, s_sum

    NUMBA_KERNELS = {
        "truncated_gaussian": _nb_truncated_gaussian,
        "rowsparse_contract_y": _nb_rowsparse_contract_y,
        "rowsparse_contract_x": _nb_rowsparse_contract_x,
        "rowsparse_contract_yx": _nb_rowsparse_contract_yx,
        "phasor_sums": _nb_phasor_sums,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}


def _select_backend():
    requested = os.environ.get("BILINV_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"BILINV_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and HAS_NUMBA:
        return "numba"
    return "numpy"


BACKEND = _select_backend()
KERNELS = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS


def truncated_gaussian(centers, sigma2, corr_len, cut):
    """COO triplets of the truncated squared-exponential kernel matrix."""
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return KERNELS["truncated_gaussian"](centers, float(sigma2), float(corr_len), float(cut))


def rowsparse_contract_y(rows, vals, y, l):
    return KERNELS["rowsparse_contract_y"](rows, vals, np.asarray(y, dtype=np.float64), int(l))


def rowsparse_contract_x(rows, vals, x, l):
    return KERNELS["rowsparse_contract_x"](rows, vals, np.asarray(x, dtype=np.float64), int(l))


def rowsparse_contract_yx(rows, vals, y, x, l):
    return KERNELS["rowsparse_contract_yx"](
        rows, vals, np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64), int(l)
    )


def phasor_sums(weights, times, freq):
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    times = np.ascontiguousarray(times, dtype=np.float64)
    return KERNELS["phasor_sums"](weights, times, float(freq))
