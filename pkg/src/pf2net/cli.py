"""Command-line entry point: simulate, fit, evaluate, falff, experiment.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .cp import FitOptions, FitReport, cp_als_runs, select_best
from .exceptions import ConfigError, ConvergenceError, DegenerateFiberError, TensorFormatError
from .falff import WindowSpec, build_falff_tensor, preprocess_tensor
from .harness.config import config_from_dict, parse_config
from .harness.experiment import run_experiment, score_runs
from .harness.io import (
    export_dataset,
    export_model,
    load_model,
    read_factor_csv,
    read_labels_csv,
    read_stacked_csv,
    write_json,
)
from .metrics import fit_score, uniqueness_check
from .parafac2 import Parafac2Model, pf2_als_runs, pf2_constraint_gap
from .simgen import B_SETUPS, C_SETUPS, SimConfig, gen_dataset
from .tensor import read_tns3, write_tns3

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; 2 is reserved for data errors here.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _fit_flags(p, rank_default=4):
    p.add_argument("--rank", type=_positive_int, default=rank_default)
    p.add_argument("--starts", type=_positive_int, default=10)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iters", type=_positive_int, default=2000)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--nonneg-c", action="store_true", help="non-negative C (PARAFAC2 only)")


def build_parser():
    parser = _Parser(prog="pf2net", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate one simulated dataset")
    p.add_argument("--config", help="JSON file with SimConfig fields")
    p.add_argument("--b-setup", choices=B_SETUPS)
    p.add_argument("--c-setup", choices=C_SETUPS)
    p.add_argument("--noise", type=float)
    p.add_argument("--dims", type=_positive_int, nargs=3, metavar=("I", "J", "K"))
    p.add_argument("--rank", type=_positive_int)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit CP or PARAFAC2 to a TNS3 tensor")
    p.add_argument("tensor")
    p.add_argument("--method", choices=("cp", "parafac2"), default="parafac2")
    _fit_flags(p)
    p.add_argument("--out", required=True, help="output directory for factors and report")

    p = sub.add_parser("evaluate", help="score a fitted model against simulated truth")
    p.add_argument("--truth", required=True, help="directory written by 'simulate'")
    p.add_argument("--model", required=True, help="directory written by 'fit'")
    p.add_argument("--out", help="write the metrics record here (JSON) instead of stdout")

    p = sub.add_parser("falff", help="windowed fALFF tensor from per-subject CSV time series")
    p.add_argument("subjects", nargs="+", help="one CSV per subject, rows = series")
    p.add_argument("--window", type=_positive_int, required=True)
    p.add_argument("--stride", type=_positive_int, required=True)
    p.add_argument("--flo", type=float, default=0.01)
    p.add_argument("--fhi", type=float, default=0.08)
    p.add_argument("--rate", type=float, required=True, help="sampling rate in Hz")
    p.add_argument("--preprocess", action="store_true", help="center and normalize voxel fibers")
    p.add_argument("--centering", choices=("fiber", "global"), default="fiber")
    p.add_argument("--out", required=True, help="output TNS3 file")

    p = sub.add_parser("experiment", help="run the simulation grid")
    p.add_argument("--config", help="JSON experiment config (defaults to the full grid)")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("--out", help="output directory (overrides the config)")
    return parser


def cmd_simulate(args):
    cfg = SimConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = SimConfig.from_dict(json.load(fh))
    overrides = {
        "b_setup": args.b_setup, "c_setup": args.c_setup, "noise": args.noise,
        "rank": args.rank, "seed": args.seed,
        "dims": tuple(args.dims) if args.dims else None,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "dims" in overrides and not args.config:
        I = overrides["dims"][0]
        overrides["cluster_sizes"] = (I - I // 2, I // 2)
    cfg = replace(cfg, **overrides)
    data = gen_dataset(cfg)
    export_dataset(data, args.out)
    print(f"wrote {cfg.b_setup}/{cfg.c_setup} dataset, dims {cfg.dims}, noise {cfg.noise} -> {args.out}")
    return EXIT_OK


def cmd_fit(args):
    T = read_tns3(args.tensor)
    opts = FitOptions(rank=args.rank, max_iterations=args.max_iters, tol=args.tol, seed=args.seed, n_starts=args.starts)
    if args.method == "cp":
        runs = cp_als_runs(T, opts)
    else:
        runs = pf2_als_runs(T, opts, nonneg_C=args.nonneg_c)
    model, report = select_best(list(runs))
    export_model(model, args.out)
    K = T.dims[2]
    out = {"method": args.method, "nonneg_c": bool(args.nonneg_c), **report.to_dict()}
    if len(runs) >= 2:
        def factors(m):
            B = m.Bk.reshape(-1, m.rank) if isinstance(m, Parafac2Model) else np.tile(m.B, (K, 1))
            return [m.A, B, m.C]

        u = uniqueness_check([(r.fit, factors(m)) for m, r in runs])
        out["unique"] = u.unique
        out["uniqueness_min_fms"] = u.min_fms
    if isinstance(model, Parafac2Model):
        out["constraint_gap"] = pf2_constraint_gap(model.Bk)
    write_json(os.path.join(args.out, "report.json"), out)
    print(f"{args.method}: fit {report.fit:.4f}% after {report.iterations} sweeps (start {report.start_index}) -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    model = load_model(args.model)
    T = read_tns3(os.path.join(args.truth, "tensor.tns3"))
    A = read_factor_csv(os.path.join(args.truth, "A.csv"))
    Bk = read_stacked_csv(os.path.join(args.truth, "B.csv"))
    C = read_factor_csv(os.path.join(args.truth, "C.csv"))
    labels = read_labels_csv(os.path.join(args.truth, "labels.csv"))
    K = T.dims[2]
    report = FitReport(fit=fit_score(T, model.to_tensor()), loss_trace=[], converged=True, iterations=0, seed=0)
    _, rec = score_runs([(model, report)], [A, Bk.reshape(-1, Bk.shape[2]), C], labels, len(np.unique(labels)), K)
    rec = {k: rec[k] for k in ("fit", "fms_A", "fms_B", "fms_C", "clustering_acc")}
    rec["unique"] = None
    rep_path = os.path.join(args.model, "report.json")
    if os.path.exists(rep_path):
        with open(rep_path) as fh:
            rec["unique"] = json.load(fh).get("unique")
    if args.out:
        write_json(args.out, rec)
    else:
        print(json.dumps(rec, indent=2))
    return EXIT_OK


def _read_subject_csv(path):
    try:
        vals = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise TensorFormatError(f"{path}: {exc}") from None
    return vals


def cmd_falff(args):
    spec = WindowSpec(args.window, args.stride, args.flo, args.fhi)
    subjects = [_read_subject_csv(p) for p in args.subjects]
    T = build_falff_tensor(subjects, spec, sampling_rate=args.rate)
    if args.preprocess:
        T = preprocess_tensor(T, centering=args.centering)
    write_tns3(T, args.out)
    I, J, K = T.dims
    print(f"wrote {I} x {J} x {K} fALFF tensor -> {args.out}")
    return EXIT_OK


def cmd_experiment(args):
    cfg = parse_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.output_dir = args.out
    table = run_experiment(cfg)
    table.write(cfg.output_dir, cfg)
    for r in table.rows:
        print(
            f"eta={r.noise:<5} C={r.c_setup:<7} B={r.b_setup:<8} {r.method:<9} "
            f"fit={r.fit:7.2f} clust={r.clustering_acc:6.1f} "
            f"FMS A/B/C={r.fms_A:.3f}/{r.fms_B:.3f}/{r.fms_C:.3f} failed={r.n_failed}"
        )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "falff": cmd_falff,
    "experiment": cmd_experiment,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, TensorFormatError, DegenerateFiberError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
