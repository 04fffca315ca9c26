"""Simulation grid: generate datasets, fit CP and PARAFAC2, score against the truth, aggregate."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..cp import FitOptions, cp_als_runs, select_best
from ..metrics import (
    clustering_accuracy,
    concat_evolving,
    fit_score,
    fms,
    match_components,
    uniqueness_check,
)
from ..numerics import derive_seed
from ..parafac2 import Parafac2Model, pf2_als_runs, pf2_constraint_gap
from ..simgen import SimConfig, gen_dataset
from .config import METHODS, ExperimentConfig, MethodOptions, cell_key
from .io import write_json

log = logging.getLogger(__name__)

METRIC_KEYS = ("fit", "clustering_acc", "fms_A", "fms_B", "fms_C")


def cell_id(cell: SimConfig) -> int:
    """Stable integer id of a grid cell, independent of its position in the grid."""
    noise, c, b = cell_key(cell)
    return zlib.crc32(f"{noise!r}|{c}|{b}".encode())


def dataset_seed(master, cell: SimConfig, dataset):
    return derive_seed(master, cell_id(cell), dataset)


def fit_seed(master, cell: SimConfig, dataset, method):
    # Start seeds are derived from this one by FitOptions.start_seed.
    return derive_seed(master, cell_id(cell), dataset, 1 + METHODS.index(method))


def max_trace_increase(trace):
    d = np.diff(np.asarray(trace, dtype=float))
    return float(d.max()) if d.size else 0.0


def _est_factors(model, K):
    if isinstance(model, Parafac2Model):
        return [model.A, concat_evolving(model.Bk), model.C]
    return [model.A, concat_evolving(model.B, K), model.C]


def fit_method(tensor, method, mopts: MethodOptions):
    """All starts of one method; returns ``[(model, report), ...]``."""
    if method == "CP":
        return cp_als_runs(tensor, mopts.fit)
    return pf2_als_runs(tensor, mopts.fit, nonneg_C=mopts.nonneg_c)


def score_runs(runs, truth, labels, n_clusters, K, fit_window=0.1, threshold=0.99, n_init=20):
    """Metric record for the best run plus uniqueness over all runs.

    ``truth`` is ``[A, B_concat, C]`` of the clean model and ``runs`` the
    ``(model, report)`` pairs of every start.
    """
    model, report = select_best(list(runs))
    est = _est_factors(model, K)
    matching = match_components(truth, est)
    rec = {
        "fit": report.fit,
        "fms_A": fms(truth[0], est[0], matching),
        "fms_B": fms(truth[1], est[1], matching),
        "fms_C": fms(truth[2], est[2], matching),
        "clustering_acc": clustering_accuracy(model.A, labels, n_clusters, n_init=n_init),
    }
    if len(runs) >= 2:
        u = uniqueness_check(
            [(r.fit, _est_factors(m, K)) for m, r in runs], fit_window=fit_window, threshold=threshold
        )
        rec["unique"] = u.unique
        rec["uniqueness_min_fms"] = u.min_fms
    else:
        rec["unique"] = None
        rec["uniqueness_min_fms"] = None
    rec["converged"] = report.converged
    rec["iterations"] = report.iterations
    rec["best_start"] = report.start_index
    rec["start_fits"] = report.start_fits
    rec["max_trace_increase"] = max(max_trace_increase(r.loss_trace) for _, r in runs)
    if isinstance(model, Parafac2Model):
        rec["constraint_gap"] = max(pf2_constraint_gap(m.Bk) for m, _ in runs)
    return model, rec


def run_dataset(cfg: ExperimentConfig, cell: SimConfig, dataset: int):
    """Generate one dataset and fit every configured method; failures end up in ``error``."""
    data = gen_dataset(replace(cell, seed=dataset_seed(cfg.seed, cell, dataset)))
    K = data.config.dims[2]
    truth = [data.A, concat_evolving(data.Bk), data.C]
    n_clusters = len(data.config.cluster_sizes)
    records = []
    for method in cfg.methods:
        base = cfg.method_options[method]
        fo = base.fit
        mopts = MethodOptions(
            FitOptions(fo.rank, fo.max_iterations, fo.tol, fit_seed(cfg.seed, cell, dataset, method), fo.n_starts),
            base.nonneg_c,
        )
        rec = {
            "noise": cell.noise,
            "c_setup": cell.c_setup,
            "b_setup": cell.b_setup,
            "dataset": dataset,
            "method": method,
            "seed": mopts.fit.seed,
            "error": None,
        }
        try:
            runs = fit_method(data.noisy, method, mopts)
            _, scores = score_runs(
                runs, truth, data.labels, n_clusters, K,
                fit_window=cfg.fit_window, threshold=cfg.uniqueness_threshold, n_init=cfg.clustering_n_init,
            )
            rec.update(scores)
            rec["wall_time"] = sum(r.wall_time for _, r in runs)
        except Exception as exc:  # recorded, the grid carries on
            log.warning("%s failed on %s dataset %d: %s", method, cell_key(cell), dataset, exc)
            rec["error"] = f"{type(exc).__name__}: {exc}"
            rec.update({k: math.nan for k in METRIC_KEYS})
        records.append(rec)
    return records


def _run_task(args):
    cfg, cell, dataset = args
    return run_dataset(cfg, cell, dataset)


@dataclass
class TableRow:
    noise: float
    c_setup: str
    b_setup: str
    method: str
    n_datasets: int
    n_failed: int
    fit: float
    clustering_acc: float
    fms_A: float
    fms_B: float
    fms_C: float
    unique_fraction: float


@dataclass
class ResultsTable:
    rows: list
    records: list

    def __len__(self):
        return len(self.rows)

    def row(self, noise, c_setup, b_setup, method) -> TableRow:
        for r in self.rows:
            if (r.noise, r.c_setup, r.b_setup, r.method) == (float(noise), c_setup, b_setup, method):
                return r
        raise KeyError((noise, c_setup, b_setup, method))

    def to_dicts(self):
        return [asdict(r) for r in self.rows]

    def write(self, out_dir, config: ExperimentConfig | None = None):
        """``table1.csv`` (one line per cell, methods side by side), ``summary.csv``, ``records.jsonl``."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            fields = list(TableRow.__dataclass_fields__)
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in self.to_dicts():
                w.writerow(r)
        methods = sorted({r.method for r in self.rows}, key=METHODS.index)
        cells = []
        for r in self.rows:
            if (r.noise, r.c_setup, r.b_setup) not in cells:
                cells.append((r.noise, r.c_setup, r.b_setup))
        with open(os.path.join(out_dir, "table1.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["noise", "c_setup", "b_setup"]
            for k in METRIC_KEYS + ("n_failed",):
                header += [f"{k}_{m}" for m in methods]
            w.writerow(header)
            for cell in cells:
                line = list(cell)
                for k in METRIC_KEYS + ("n_failed",):
                    for m in methods:
                        v = getattr(self.row(*cell, m), k)
                        line.append(v if k == "n_failed" else f"{v:.4f}")
                w.writerow(line)
        with open(os.path.join(out_dir, "records.jsonl"), "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, default=float, allow_nan=True) + "\n")
        if config is not None:
            write_json(os.path.join(out_dir, "config.json"), config.to_dict())


def _mean(vals):
    vals = [v for v in vals if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else math.nan


def aggregate(records, cells, methods, n_datasets) -> list:
    """Per (cell, method) means over the datasets that did not fail."""
    rows = []
    for cell in cells:
        noise, c, b = cell_key(cell)
        for m in methods:
            recs = [r for r in records if (float(r["noise"]), r["c_setup"], r["b_setup"], r["method"]) == (noise, c, b, m)]
            ok = [r for r in recs if r["error"] is None]
            uniq = [r["unique"] for r in ok if r.get("unique") is not None]
            rows.append(TableRow(
                noise=noise, c_setup=c, b_setup=b, method=m,
                n_datasets=n_datasets, n_failed=n_datasets - len(ok),
                fit=_mean(r["fit"] for r in ok),
                clustering_acc=_mean(r["clustering_acc"] for r in ok),
                fms_A=_mean(r["fms_A"] for r in ok),
                fms_B=_mean(r["fms_B"] for r in ok),
                fms_C=_mean(r["fms_C"] for r in ok),
                unique_fraction=float(np.mean(uniq)) if uniq else math.nan,
            ))
    return rows


def run_experiment(cfg: ExperimentConfig, workers=None) -> ResultsTable:
    """Run the whole grid.  The result depends only on ``cfg`` (worker count included or not)."""
    workers = cfg.workers if workers is None else workers
    tasks = [(cfg, cell, d) for cell in cfg.cells for d in range(cfg.n_datasets)]
    results = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (_, cell, d), recs in zip(tasks, pool.map(_run_task, tasks)):
                results[(cell_key(cell), d)] = recs
    else:
        for i, task in enumerate(tasks):
            results[(cell_key(task[1]), task[2])] = _run_task(task)
            log.info("dataset %d/%d done", i + 1, len(tasks))
    # Keyed merge in grid order, so the outcome never depends on completion order.
    records = [rec for cell in cfg.cells for d in range(cfg.n_datasets) for rec in results[(cell_key(cell), d)]]
    return ResultsTable(aggregate(records, cfg.cells, cfg.methods, cfg.n_datasets), records)
