"""Leave-one-out reconstruction experiments on the synthetic phantom.

For each target head the remaining ensemble members give the mean operator
and the PC model; the target operator generates the data.  Three
reconstructions are compared: with the target's own operator, with the
mean operator, and with the selected bilinear solver.
"""

import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import _accel
from .covariance import (
    CovarianceModel,
    NoiseSpec,
    SpatialCovarianceSpec,
    build_noise_covariance,
    build_spatial_covariance,
    dense_spatial_covariance,
)
from .errors import FactorizationError
from .gibbs import ChainConfig, run_gibbs, write_y_chain_csv
from .io import write_vector
from .metrics import evaluate, fov_mask, write_json_report, write_report_rows
from .objective import Problem
from .pca import OperatorEnsemble, build_gamma2, load_ensemble, rowwise_pca
from .phantom import (
    PatternGeometry,
    generate_difference_data,
    layered_grid,
    make_pattern,
    row_noise_sds,
    synthesize_ensemble,
    write_voxel_map,
)
from .solvers import SolverOptions, bcd_solve, fixed_operator_map, gn_solve

__all__ = ["ExperimentConfig", "Lab", "build_lab", "run_target", "run_experiment", "summarize",
           "SOLVERS"]

log = logging.getLogger(__name__)

SOLVERS = ("gn", "bcd", "gibbs", "fixed")

DEFAULT_SITES = [[12.0, 10.0, 24.0], [36.0, 10.0, 24.0], [12.0, 30.0, 24.0], [36.0, 30.0, 24.0]]


@dataclass
class ExperimentConfig:
    # phantom
    grid_dims: list = field(default_factory=lambda: [24, 24, 12])
    voxel_mm: float = 2.0
    scalp_voxels: int = 2
    csf_voxels: int = 1
    seed: int = 1
    # ensemble
    m: int = 30
    variation: float = 0.5
    ensemble_dir: str = None
    # operator model
    budget: int = 10
    gamma2_inflation: float = 1.0
    # solver
    solver: str = "gn"
    kappa: float = 0.5
    iters: int = 10
    tol_state: float = 1e-8
    tol_grad: float = 1e-7
    # sampler
    chain_samples: int = 2000
    chain_burn_in: int = 200
    # pattern
    sites: list = field(default_factory=lambda: [list(s) for s in DEFAULT_SITES])
    geometry: dict = field(default_factory=dict)
    # noise: synthetic channel intensity I = ref * exp(-mu * d) * (10 / d)^2
    ref_intensity: float = 1e-2
    mu_eff: float = 0.2
    modulation: float = 0.9
    # spatial prior
    prior_sigma: float = 0.003
    prior_corr_len: float = 3.0
    prior_rel_cut: float = 0.01
    prior_truncated: bool = True
    fov_operator: str = "target"
    # run control
    out: str = "runs"
    target_index: int = None
    threads: int = 1
    timing: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.iters is not None and self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.variation < 0:
            raise ValueError("variation must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.fov_operator not in ("target", "mean"):
            raise ValueError("fov_operator must be 'target' or 'mean'")
        if self.ensemble_dir is not None and not Path(self.ensemble_dir).is_dir():
            raise FileNotFoundError(f"ensemble directory {self.ensemble_dir} does not exist")
        if self.target_index is not None and not 0 <= self.target_index < self.m:
            raise ValueError(f"target_index must lie in [0, {self.m})")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return asdict(self)


@dataclass
class Lab:
    """Everything shared by the per-target runs."""

    cfg: ExperimentConfig
    grid: object
    ensemble: OperatorEnsemble
    pattern: object
    gamma3_full: CovarianceModel
    channel_intensity: np.ndarray


def build_lab(cfg):
    grid = layered_grid(tuple(cfg.grid_dims), cfg.voxel_mm, cfg.scalp_voxels, cfg.csf_voxels)
    if cfg.ensemble_dir:
        ens = load_ensemble(cfg.ensemble_dir)
        if ens.shape[1] != grid.n:
            raise ValueError(f"ensemble has {ens.shape[1]} columns, grid has {grid.n} voxels")
        if ens.m != cfg.m:
            raise ValueError(f"config m={cfg.m} but ensemble holds {ens.m} samples")
    else:
        ens = synthesize_ensemble(grid, cfg.m, cfg.variation, seed=cfg.seed)
    pattern = make_pattern(grid, cfg.sites, PatternGeometry(**cfg.geometry))
    if len(pattern.nonempty_regions) == 0:
        raise ValueError("the perturbation pattern is empty")
    spec = SpatialCovarianceSpec(cfg.prior_sigma, cfg.prior_corr_len, cfg.prior_rel_cut)
    if cfg.prior_truncated:
        gamma3 = build_spatial_covariance(spec, grid.centers)
    else:
        gamma3 = dense_spatial_covariance(spec, grid.centers)
    n_chan = 1 + max(g.channel for g in ens.row_groups)
    sds_mm = np.zeros(n_chan)
    for g in ens.row_groups:
        sds_mm[g.channel] = g.sds_mm
    if np.any(sds_mm <= 0):
        raise ValueError("every channel needs a positive source-detector separation")
    intensity = cfg.ref_intensity * np.exp(-cfg.mu_eff * sds_mm) * (10.0 / sds_mm) ** 2
    return Lab(cfg, grid, ens, pattern, gamma3, intensity)


def _solve_bilinear(cfg, prob, seed):
    opts = SolverOptions(max_iters=cfg.iters, step_kappa=cfg.kappa, tol_state=cfg.tol_state,
                         tol_grad=cfg.tol_grad)
    if cfg.solver == "gn":
        res = gn_solve(prob, opts)
        return res.state.x, res.iterations, res.objective_trace, None
    if cfg.solver == "bcd":
        res = bcd_solve(prob, opts)
        return res.state.x, res.iterations, res.objective_trace, None
    try:
        prob.gamma3.pivoted_factor()
    except FactorizationError as err:
        raise FactorizationError(
            f"{err}; the Gibbs sampler needs a samplable x-prior, "
            "set prior_truncated=false in the config", err.pivot, err.value) from err
    chain = ChainConfig(sample_count=cfg.chain_samples, burn_in=cfg.chain_burn_in, seed=seed)
    summ = run_gibbs(prob, chain)
    return summ.mean_x, cfg.chain_samples, [], summ


def run_target(lab, t, out_dir=None):
    """Reconstruct target ``t``; returns report rows (one per operator model)."""
    cfg = lab.cfg
    ens, grid, pattern = lab.ensemble, lab.grid, lab.pattern
    brain = grid.flat_labels == 2
    A_true = ens.samples[t]
    rest_mean = ens.samples[ens.kept(t)].mean(axis=0)
    fov = fov_mask(A_true if cfg.fov_operator == "target" else rest_mean, brain)
    cols = np.flatnonzero(fov)
    sub = OperatorEnsemble(ens.samples[:, :, cols], ens.row_groups)
    model = rowwise_pca(sub, cfg.budget, exclude=t)

    x_star = pattern.to_vector()
    sds = row_noise_sds(ens.row_groups, lab.channel_intensity,
                        cfg.modulation * lab.channel_intensity, NoiseSpec())
    noise_seed = np.random.SeedSequence([cfg.seed, t, 1])
    b = generate_difference_data(A_true, x_star, sds, seed=noise_seed)
    G3 = CovarianceModel(lab.gamma3_full.kind, lab.gamma3_full.data[cols][:, cols])
    prob = Problem(model.mean, model.tensor, b, build_noise_covariance(sds),
                   build_gamma2(model, cfg.gamma2_inflation), G3)

    def full(v):
        out = np.zeros(grid.n)
        out[cols] = v
        return out

    runs = []
    t0 = time.perf_counter()
    runs.append(("fixed", "true", full(fixed_operator_map(prob, A_true[:, cols])), 1, [], None,
                 time.perf_counter() - t0))
    t0 = time.perf_counter()
    runs.append(("fixed", "mean", full(fixed_operator_map(prob, model.mean)), 1, [], None,
                 time.perf_counter() - t0))
    if cfg.solver != "fixed":
        t0 = time.perf_counter()
        x, iters, trace, chain = _solve_bilinear(cfg, prob, [cfg.seed, t, 2])
        runs.append((cfg.solver, "pca", full(x), iters, trace, chain, time.perf_counter() - t0))

    rows = []
    for solver, op_model, x, iters, trace, chain, secs in runs:
        rep = evaluate(x, pattern, fov)
        run_id = f"t{t:03d}-{op_model}"
        row = {"run_id": run_id, "solver": solver, "operator_model": op_model,
               "cnr": float(rep.cnr), "rmse": float(rep.rmse), "iterations": int(iters),
               "seconds": float(secs) if cfg.timing else 0.0}
        rows.append(row)
        if out_dir is not None:
            d = Path(out_dir) / f"target_{t:03d}"
            d.mkdir(parents=True, exist_ok=True)
            write_vector(d / f"{op_model}.vec", x)
            write_voxel_map(d / f"{op_model}.vmap", x, grid.dims, grid.voxel_mm)
            write_json_report(d / f"{op_model}.json", rep, config=cfg.to_dict(),
                              extra={"run": row, "fov_voxels": int(fov.sum()), "p": model.p})
            if trace:
                with open(d / f"{op_model}_trace.csv", "w") as fh:
                    fh.write("iteration,phi\n")
                    for k, v in enumerate(trace, 1):
                        fh.write(f"{k},{v!r}\n")
            if chain is not None:
                write_y_chain_csv(d / "y_chain.csv", chain)
    return rows


_WORKER_LAB = None


def _worker_init(cfg_dict):
    global _WORKER_LAB
    _WORKER_LAB = build_lab(ExperimentConfig.from_dict(cfg_dict))


def _worker_run(args):
    t, out_dir = args
    return run_target(_WORKER_LAB, t, out_dir)


def _versions():
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "backend": _accel.BACKEND}


def run_experiment(cfg, lab=None, write=True):
    """Run the leave-one-out sweep (or one target); returns the report rows.

    With ``write`` set, the output directory receives ``report.csv``,
    ``manifest.json`` and one subdirectory per target.
    """
    cfg.validate()
    out = Path(cfg.out) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    targets = range(cfg.m) if cfg.target_index is None else [cfg.target_index]
    if cfg.threads > 1 and len(targets) > 1:
        with ProcessPoolExecutor(cfg.threads, initializer=_worker_init,
                                 initargs=(cfg.to_dict(),)) as pool:
            chunks = list(pool.map(_worker_run, [(t, out) for t in targets]))
    else:
        lab = lab or build_lab(cfg)
        chunks = [run_target(lab, t, out) for t in targets]
    rows = [r for chunk in chunks for r in chunk]
    if out is not None:
        write_report_rows(out / "report.csv", rows)
        manifest = {"config": cfg.to_dict(), "targets": list(targets),
                    "noise_seeds": [[cfg.seed, t, 1] for t in targets],
                    "versions": _versions()}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return rows


def summarize(rows):
    """Median CNR/RMSE per operator model and how often ``true`` beats the solver."""
    by = {}
    for r in rows:
        by.setdefault(r["operator_model"], []).append(r)
    out = {k: {"median_cnr": float(np.median([r["cnr"] for r in v])),
               "median_rmse": float(np.median([r["rmse"] for r in v])), "count": len(v)}
           for k, v in by.items()}
    if "pca" in by and "true" in by:
        true = {r["run_id"].split("-")[0]: r["cnr"] for r in by["true"]}
        wins = [true[r["run_id"].split("-")[0]] >= r["cnr"] for r in by["pca"]]
        out["true_ge_pca_fraction"] = float(np.mean(wins))
    return out
