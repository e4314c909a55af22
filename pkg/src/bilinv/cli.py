"""Command-line entry point: ``bilinv <subcommand> [options]``."""

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from .example32 import example32_verify
from .experiment import SOLVERS, ExperimentConfig, build_lab, run_experiment, summarize
from .io import write_vector
from .metrics import read_report_rows
from .pca import representation_error, rowwise_pca, save_ensemble
from .phantom import write_voxel_map
from .tensor import save_tensor

log = logging.getLogger("bilinv")

# flag name -> config field
_OVERRIDES = {
    "out": "out",
    "seed": "seed",
    "solver": "solver",
    "kappa": "kappa",
    "iters": "iters",
    "budget": "budget",
    "target_index": "target_index",
    "threads": "threads",
}


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--kappa", type=float, help="Gauss-Newton step size in (0, 1]")
    common.add_argument("--iters", type=int, help="iteration cap")
    common.add_argument("--budget", type=int, help="PCs kept per operator row")
    common.add_argument("--target-index", type=int, dest="target_index")
    common.add_argument("--threads", type=int, help="worker processes for target sweeps")
    common.add_argument("--print-config", action="store_true", dest="print_config",
                        help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bilinv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="build phantom, pattern and ensemble")
    sub.add_parser("pca", parents=[common], help="row-wise PCA of the ensemble")
    sub.add_parser("reconstruct", parents=[common], help="leave-one-out reconstructions")
    sub.add_parser("gibbs", parents=[common], help="reconstruct with the Gibbs sampler")
    sub.add_parser("verify-example", parents=[common], help="check the scalar example")
    sub.add_parser("report", parents=[common], help="summarise a report.csv")
    return p


def resolve_config(args):
    base = json.loads(args.config.read_text()) if args.config else {}
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            base[key] = v
    if args.command == "gibbs":
        base["solver"] = "gibbs"
    return ExperimentConfig.from_dict(base)


def _cmd_synth(cfg):
    lab = build_lab(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    g = lab.grid
    write_voxel_map(out / "grid.vmap", g.flat_labels.astype(np.int64), g.dims, g.voxel_mm)
    write_voxel_map(out / "pattern.vmap", lab.pattern.to_vector(), g.dims, g.voxel_mm)
    save_ensemble(out / "ensemble", lab.ensemble)
    info = {"voxels": g.n, "rows": lab.ensemble.shape[0], "samples": lab.ensemble.m,
            "regions": [[r.depth_class, int(r.voxels.size)] for r in lab.pattern.regions],
            "flags": lab.pattern.flags}
    (out / "synth.json").write_text(json.dumps(info, indent=2))
    print(json.dumps(info))
    return 0


def _cmd_pca(cfg):
    lab = build_lab(cfg)
    model = rowwise_pca(lab.ensemble, cfg.budget, exclude=cfg.target_index)
    out = Path(cfg.out) / "pca"
    save_tensor(out, model.tensor, model.mean)
    write_vector(out / "variances.vec", model.variances)
    info = {"p": model.p, "budget": cfg.budget, "excluded": cfg.target_index,
            "rows_without_variation": model.singular_rows}
    if cfg.target_index is not None:
        err = representation_error(model, lab.ensemble.samples[cfg.target_index])
        info["representation_error"] = err.summary
    (out / "pca.json").write_text(json.dumps(info, indent=2))
    print(json.dumps(info))
    return 0


def _cmd_reconstruct(cfg):
    rows = run_experiment(cfg)
    print(json.dumps(summarize(rows), indent=2, sort_keys=True))
    return 0


def _cmd_verify(cfg):
    rep = example32_verify()
    for line in rep.lines:
        print(line)
    print(f"example check: {'PASS' if rep.passed else 'FAIL'} ({rep.seconds:.3f} s)")
    return 0 if rep.passed else 1


def _cmd_report(cfg):
    path = Path(cfg.out) / "report.csv"
    print(json.dumps(summarize(read_report_rows(path)), indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "pca": _cmd_pca,
    "reconstruct": _cmd_reconstruct,
    "gibbs": _cmd_reconstruct,
    "verify-example": _cmd_verify,
    "report": _cmd_report,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.print_config:
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return 0
        return _COMMANDS[args.command](cfg)
    except Exception as err:  # noqa: BLE001 - every failure becomes an error record
        record = {"status": "error", "command": args.command, "type": type(err).__name__,
                  "message": str(err)}
        if args.verbose:
            record["traceback"] = traceback.format_exc()
        print(json.dumps(record), file=sys.stderr)
        out = getattr(args, "out", None)
        if out:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                (Path(out) / "error.json").write_text(json.dumps(record, indent=2))
            except OSError:
                pass
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
