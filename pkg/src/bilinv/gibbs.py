"""Two-block Gibbs sampler for the joint posterior of ``(y, x)``.

Each sweep draws ``x | b, y`` and then ``y | b, x``; both conditionals are
Gaussian.  The ``x`` draw never factorizes the ``n x n`` conditional
covariance: a prior draw is corrected through the ``l x l`` data-space
system, which produces an exact conditional sample.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import FactorizationError
from .solvers import _factor_system
from .tensor import contract_x, contract_y

__all__ = [
    "ChainConfig",
    "ChainSummary",
    "conditional_x_draw",
    "conditional_y_moments",
    "conditional_y_draw",
    "run_gibbs",
    "effective_sample_size",
    "mc_standard_error",
    "merge_summaries",
    "write_y_chain_csv",
]


@dataclass(frozen=True)
class ChainConfig:
    sample_count: int = 100_000
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    store_x: bool = False

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")


@dataclass
class ChainSummary:
    """Running moments of the retained draws.

    ``m2_x`` and ``m2_y`` are centred second-moment sums (Welford), so
    summaries from independent chains can be merged exactly.
    """

    count: int
    mean_x: np.ndarray
    m2_x: np.ndarray
    mean_y: np.ndarray
    m2_y: np.ndarray
    ess_y: np.ndarray = None
    y_chain: np.ndarray = None
    x_chain: np.ndarray = None
    acceptance: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def var_x(self):
        return self.m2_x / max(self.count - 1, 1)

    @property
    def cov_y(self):
        c = self.m2_y / max(self.count - 1, 1)
        return 0.5 * (c + c.T)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def conditional_x_draw(prob, y, rng):
    """Exact draw from ``x | b, y``.

    With ``M = A0 + A_{y,2}`` and ``S = M G3 M^T + G1``::

        x0 ~ N(0, G3),  e ~ N(0, G1)
        x  = x0 + G3 M^T S^{-1} (b - M x0 - e)

    has mean ``G3 M^T S^{-1} b`` and covariance ``G3 - G3 M^T S^{-1} M G3``.
    """
    rng = _rng(rng)
    M = prob.A0 + contract_y(prob.A, y)
    x0 = prob.gamma3.apply_sqrt(rng.standard_normal(prob.gamma3.sqrt_rank))
    e = prob.gamma1.apply_sqrt(rng.standard_normal(prob.gamma1.sqrt_rank))
    G3Mt = prob.gamma3.matmul(M.T)
    S = M @ G3Mt + prob.gamma1.matrix()
    return x0 + G3Mt @ la.cho_solve(_factor_system(S), prob.b - M @ x0 - e)


def _precision_y(prob, Ax):
    G2inv = prob.gamma2.solve(np.eye(prob.A.p))
    return G2inv + Ax.T @ prob.gamma1.solve(Ax)


def conditional_y_moments(prob, x):
    """Mean and covariance of ``y | b, x``, formed densely (``p`` is small)."""
    Ax = contract_x(prob.A, x)
    P = _precision_y(prob, Ax)
    try:
        c = la.cho_factor(P, lower=True)
    except la.LinAlgError as err:
        raise FactorizationError(f"y-conditional precision not positive definite: {err}") from err
    mean = la.cho_solve(c, Ax.T @ prob.gamma1.solve(prob.b - prob.A0 @ x))
    cov = la.cho_solve(c, np.eye(prob.A.p))
    return mean, 0.5 * (cov + cov.T)


def conditional_y_draw(prob, x, rng):
    rng = _rng(rng)
    p = prob.A.p
    if p == 0:
        return np.zeros(0)
    Ax = contract_x(prob.A, x)
    P = _precision_y(prob, Ax)
    try:
        L = la.cholesky(P, lower=True)
    except la.LinAlgError as err:
        raise FactorizationError(f"y-conditional precision not positive definite: {err}") from err
    rhs = Ax.T @ prob.gamma1.solve(prob.b - prob.A0 @ x)
    mean = la.cho_solve((L, True), rhs)
    # P = L L^T  =>  L^{-T} z ~ N(0, P^{-1})
    return mean + la.solve_triangular(L, rng.standard_normal(p), lower=True, trans="T")


def run_gibbs(prob, cfg=ChainConfig(), y0=None):
    """Run the sampler; ``x`` is drawn before ``y`` in every sweep."""
    rng = np.random.default_rng(cfg.seed)
    p, n = prob.A.p, prob.A.n
    y = np.zeros(p) if y0 is None else np.asarray(y0, dtype=np.float64).copy()
    retained = (max(cfg.sample_count - cfg.burn_in, 0) + cfg.thinning - 1) // cfg.thinning
    y_chain = np.empty((retained, p))
    x_chain = np.empty((retained, n)) if cfg.store_x else None
    mean_x = np.zeros(n)
    m2_x = np.zeros(n)
    mean_y = np.zeros(p)
    m2_y = np.zeros((p, p))
    count = 0
    for k in range(cfg.sample_count):
        x = conditional_x_draw(prob, y, rng)
        y = conditional_y_draw(prob, x, rng)
        if k < cfg.burn_in or (k - cfg.burn_in) % cfg.thinning:
            continue
        y_chain[count] = y
        if x_chain is not None:
            x_chain[count] = x
        count += 1
        dx = x - mean_x
        mean_x += dx / count
        m2_x += dx * (x - mean_x)
        dy = y - mean_y
        mean_y += dy / count
        m2_y += np.outer(dy, y - mean_y)
    ess = np.array([effective_sample_size(y_chain[:, i]) for i in range(p)])
    return ChainSummary(
        count=count,
        mean_x=mean_x,
        m2_x=m2_x,
        mean_y=mean_y,
        m2_y=m2_y,
        ess_y=ess,
        y_chain=y_chain,
        x_chain=x_chain,
    )


def _autocorr(x):
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    if acov[0] == 0:
        return np.ones(1)
    return acov / acov[0]


def effective_sample_size(chain):
    """ESS of a 1-D chain by Geyer's initial monotone positive sequence."""
    chain = np.asarray(chain, dtype=np.float64)
    n = chain.size
    if n < 4:
        return float(n)
    rho = _autocorr(chain)
    if rho.size == 1:
        return float(n)
    # sums of adjacent autocorrelation pairs
    m = (n - 1) // 2
    pairs = rho[0 : 2 * m : 2] + rho[1 : 2 * m + 1 : 2]
    positive = np.flatnonzero(pairs <= 0)
    cut = positive[0] if positive.size else pairs.size
    gamma = np.minimum.accumulate(pairs[:cut])
    tau = -1.0 + 2.0 * np.sum(gamma)
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    return float(min(n / tau, n * np.log10(n)))


def mc_standard_error(chain):
    """Monte Carlo SE of the chain mean(s), using the ESS of each column."""
    chain = np.asarray(chain, dtype=np.float64)
    if chain.ndim == 1:
        return float(np.std(chain, ddof=1) / np.sqrt(effective_sample_size(chain)))
    return np.array([mc_standard_error(chain[:, j]) for j in range(chain.shape[1])])


def merge_summaries(a, b):
    """Combine summaries of independent chains (Chan et al. pairwise update)."""
    n = a.count + b.count
    if n == 0:
        return a
    dx = b.mean_x - a.mean_x
    dy = b.mean_y - a.mean_y
    w = a.count * b.count / n
    return ChainSummary(
        count=n,
        mean_x=a.mean_x + dx * b.count / n,
        m2_x=a.m2_x + b.m2_x + dx**2 * w,
        mean_y=a.mean_y + dy * b.count / n,
        m2_y=a.m2_y + b.m2_y + np.outer(dy, dy) * w,
        ess_y=None if a.ess_y is None or b.ess_y is None else a.ess_y + b.ess_y,
    )


def write_y_chain_csv(path, summary):
    if summary.y_chain is None:
        raise ValueError("summary holds no y chain")
    p = summary.y_chain.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"y{i}" for i in range(p)])
        for k, row in enumerate(summary.y_chain):
            w.writerow([k] + [repr(float(v)) for v in row])
