"""CSV/JSON persistence for factors, models and simulated datasets."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from ..cp import CpModel
from ..parafac2 import Parafac2Model
from ..simgen import SimDataset
from ..tensor import write_tns3


def _header(R):
    return [f"component_{r + 1}" for r in range(R)]


def write_factor_csv(path, M):
    M = np.asarray(M, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_header(M.shape[1]))
        for row in M:
            w.writerow([f"{v:.17g}" for v in row])


def read_factor_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty factor file")
    header = rows[0]
    if header[0] == "k":
        raise ValueError(f"{path}: stacked factor file, use read_stacked_csv")
    try:
        return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(-1, len(header))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_stacked_csv(path, stack):
    """``(K, J, R)`` stack as K*J rows with a leading ``k`` column."""
    stack = np.asarray(stack, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + _header(stack.shape[2]))
        for k, block in enumerate(stack):
            for row in block:
                w.writerow([k] + [f"{v:.17g}" for v in row])


def read_stacked_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "k":
        raise ValueError(f"{path}: expected a header starting with 'k'")
    ks = np.array([int(r[0]) for r in rows[1:]])
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    K = ks.max() + 1
    if len(vals) % K or np.any(ks != np.repeat(np.arange(K), len(vals) // K)):
        raise ValueError(f"{path}: rows are not grouped as k = 0..{K - 1} with equal counts")
    return vals.reshape(K, len(vals) // K, vals.shape[1])


def write_labels_csv(path, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "cluster"])
        for i, lab in enumerate(labels):
            w.writerow([i, int(lab)])


def read_labels_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([int(r[1]) for r in rows[1:]])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def export_dataset(ds: SimDataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    write_tns3(ds.noisy, os.path.join(out_dir, "tensor.tns3"))
    write_tns3(ds.clean, os.path.join(out_dir, "clean.tns3"))
    write_factor_csv(os.path.join(out_dir, "A.csv"), ds.A)
    write_stacked_csv(os.path.join(out_dir, "B.csv"), ds.Bk)
    write_factor_csv(os.path.join(out_dir, "C.csv"), ds.C)
    write_labels_csv(os.path.join(out_dir, "labels.csv"), ds.labels)
    write_json(os.path.join(out_dir, "config.json"), ds.config.to_dict())


def export_model(model, out_dir):
    """CP: A, B, C.  PARAFAC2: A, H, C, stacked P and stacked B_k."""
    os.makedirs(out_dir, exist_ok=True)
    write_factor_csv(os.path.join(out_dir, "A.csv"), model.A)
    write_factor_csv(os.path.join(out_dir, "C.csv"), model.C)
    if isinstance(model, CpModel):
        write_factor_csv(os.path.join(out_dir, "B.csv"), model.B)
    elif isinstance(model, Parafac2Model):
        write_factor_csv(os.path.join(out_dir, "H.csv"), model.H)
        write_stacked_csv(os.path.join(out_dir, "P.csv"), model.P)
        write_stacked_csv(os.path.join(out_dir, "B.csv"), model.Bk)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")


def load_model(model_dir):
    """Inverse of :func:`export_model`; the kind is told apart by the presence of ``H.csv``."""
    A = read_factor_csv(os.path.join(model_dir, "A.csv"))
    C = read_factor_csv(os.path.join(model_dir, "C.csv"))
    if os.path.exists(os.path.join(model_dir, "H.csv")):
        H = read_factor_csv(os.path.join(model_dir, "H.csv"))
        P = read_stacked_csv(os.path.join(model_dir, "P.csv"))
        return Parafac2Model(A, H, P, C)
    return CpModel(A, read_factor_csv(os.path.join(model_dir, "B.csv")), C)
