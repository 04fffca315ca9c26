"""Experiment configuration: a JSON file describing the simulation grid and fitting options.

Every key is optional; a file holding ``{}`` gives the default grid of
noise {0, 0.33} x C {Random, Trends} x B {Network, Random} with 20 datasets
per cell and both methods.  Unknown keys are rejected by name.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

from ..cp import FitOptions
from ..exceptions import ConfigError
from ..simgen import B_SETUPS, C_SETUPS, NetworkParams, SimConfig

METHODS = ("CP", "PARAFAC2")

_TOP_KEYS = {
    "seed", "n_datasets", "noise_levels", "c_setups", "b_setups", "cells",
    "methods", "fit", "sim", "clustering", "uniqueness", "output_dir", "workers",
}
_FIT_KEYS = {"rank", "n_starts", "max_iterations", "tol", "nonneg_c"}
_SIM_KEYS = {"dims", "cluster_sizes", "cluster_offset", "cluster_jitter", "network"}
_NETWORK_KEYS = {"base_width", "shift_step", "grow_step", "jitter"}
_CELL_KEYS = {"noise", "c_setup", "b_setup"}


@dataclass(frozen=True)
class MethodOptions:
    fit: FitOptions
    nonneg_c: bool = False


def default_method_options():
    return {
        "CP": MethodOptions(FitOptions(rank=4, n_starts=10, max_iterations=2000, tol=1e-8)),
        "PARAFAC2": MethodOptions(
            FitOptions(rank=4, n_starts=10, max_iterations=2000, tol=1e-8), nonneg_c=True
        ),
    }


def default_cells(base: SimConfig = SimConfig()):
    return [
        replace(base, noise=eta, c_setup=c, b_setup=b)
        for eta, c, b in itertools.product((0.0, 0.33), C_SETUPS, ("Network", "Random"))
    ]


@dataclass
class ExperimentConfig:
    cells: list = field(default_factory=default_cells)
    n_datasets: int = 20
    methods: tuple = METHODS
    method_options: dict = field(default_factory=default_method_options)
    seed: int = 0
    output_dir: str = "results"
    workers: int = 1
    clustering_n_init: int = 20
    fit_window: float = 0.1
    uniqueness_threshold: float = 0.99

    def __post_init__(self):
        if self.n_datasets < 1:
            raise ConfigError("n_datasets", f"must be >= 1, got {self.n_datasets}")
        if self.workers < 1:
            raise ConfigError("workers", f"must be >= 1, got {self.workers}")
        keys = [cell_key(c) for c in self.cells]
        if len(set(keys)) != len(keys):
            raise ConfigError("cells", "grid cells must be unique")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError("methods", f"unknown method {m!r}; expected one of {METHODS}")
            if m not in self.method_options:
                raise ConfigError("fit", f"no fit options for method {m}")

    def to_dict(self):
        return {
            "seed": self.seed,
            "n_datasets": self.n_datasets,
            "cells": [c.to_dict() for c in self.cells],
            "methods": list(self.methods),
            "fit": {
                m: {
                    "rank": o.fit.rank,
                    "n_starts": o.fit.n_starts,
                    "max_iterations": o.fit.max_iterations,
                    "tol": o.fit.tol,
                    "nonneg_c": o.nonneg_c,
                }
                for m, o in self.method_options.items()
            },
            "clustering": {"n_init": self.clustering_n_init},
            "uniqueness": {"fit_window": self.fit_window, "threshold": self.uniqueness_threshold},
            "output_dir": self.output_dir,
            "workers": self.workers,
        }


def cell_key(cfg: SimConfig):
    return (float(cfg.noise), cfg.c_setup, cfg.b_setup)


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(where or "<root>", "expected a JSON object")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}" if where else k, "unknown key")


def _get(d, key, kind, default, where=""):
    name = f"{where}.{key}" if where else key
    if key not in d:
        return default
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is int and isinstance(v, bool) or not isinstance(v, kind):
        raise ConfigError(name, f"expected {kind.__name__}, got {type(v).__name__}")
    return v


def _noise(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"noise level must be a number, got {v!r}")
    if not v >= 0:
        raise ConfigError(name, f"noise level must be >= 0, got {v}")
    return float(v)


def _parse_sim_base(d):
    _check_keys(d, _SIM_KEYS, "sim")
    kw = {}
    if "dims" in d:
        dims = d["dims"]
        if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(x, int) and x > 0 for x in dims)):
            raise ConfigError("sim.dims", f"expected three positive integers, got {dims!r}")
        kw["dims"] = tuple(dims)
    if "cluster_sizes" in d:
        cs = d["cluster_sizes"]
        if not (isinstance(cs, list) and cs and all(isinstance(x, int) and x > 0 for x in cs)):
            raise ConfigError("sim.cluster_sizes", f"expected positive integers, got {cs!r}")
        kw["cluster_sizes"] = tuple(cs)
    elif "dims" in d:
        I = kw["dims"][0]
        kw["cluster_sizes"] = (I - I // 2, I // 2)
    for key in ("cluster_offset", "cluster_jitter"):
        if key in d:
            kw[key] = _get(d, key, float, None, "sim")
    if "network" in d:
        net = d["network"]
        _check_keys(net, _NETWORK_KEYS, "sim.network")
        nkw = {}
        for key in ("base_width", "grow_step"):
            if key in net:
                nkw[key] = _get(net, key, int, None, "sim.network")
        if "shift_step" in net and net["shift_step"] is not None:
            nkw["shift_step"] = _get(net, "shift_step", int, None, "sim.network")
        if "jitter" in net:
            nkw["jitter"] = _get(net, "jitter", float, None, "sim.network")
        kw["network"] = NetworkParams(**nkw)
    return kw


def _parse_cells(d, base_kw):
    def make(eta, c, b, name):
        if c not in C_SETUPS:
            raise ConfigError(name, f"unknown C setup {c!r}; expected one of {C_SETUPS}")
        if b not in B_SETUPS:
            raise ConfigError(name, f"unknown B setup {b!r}; expected one of {B_SETUPS}")
        try:
            return SimConfig(noise=eta, c_setup=c, b_setup=b, **base_kw)
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from None

    if "cells" in d:
        if any(k in d for k in ("noise_levels", "c_setups", "b_setups")):
            raise ConfigError("cells", "give either 'cells' or the noise/c/b grid lists, not both")
        cells = d["cells"]
        if not isinstance(cells, list):
            raise ConfigError("cells", "expected a list")
        out = []
        for i, cell in enumerate(cells):
            name = f"cells[{i}]"
            _check_keys(cell, _CELL_KEYS, name)
            for key in _CELL_KEYS:
                if key not in cell:
                    raise ConfigError(f"{name}.{key}", "missing key")
            out.append(make(_noise(cell["noise"], f"{name}.noise"), cell["c_setup"], cell["b_setup"], name))
        return out

    def listed(key, default):
        v = d.get(key, default)
        if not isinstance(v, list):
            raise ConfigError(key, "expected a list")
        return v

    noises = [_noise(v, "noise_levels") for v in listed("noise_levels", [0.0, 0.33])]
    cs = listed("c_setups", list(C_SETUPS))
    bs = listed("b_setups", ["Network", "Random"])
    return [make(eta, c, b, "cells") for eta, c, b in itertools.product(noises, cs, bs)]


def _parse_fit(d, rank_default):
    opts = default_method_options()
    if "fit" not in d:
        return opts
    fit = d["fit"]
    _check_keys(fit, set(METHODS), "fit")
    for method, body in fit.items():
        where = f"fit.{method}"
        _check_keys(body, _FIT_KEYS, where)
        base = opts[method]
        try:
            f = FitOptions(
                rank=_get(body, "rank", int, rank_default, where),
                n_starts=_get(body, "n_starts", int, base.fit.n_starts, where),
                max_iterations=_get(body, "max_iterations", int, base.fit.max_iterations, where),
                tol=_get(body, "tol", float, base.fit.tol, where),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(where, str(exc)) from None
        opts[method] = MethodOptions(f, _get(body, "nonneg_c", bool, base.nonneg_c, where))
    return opts


def config_from_dict(d) -> ExperimentConfig:
    _check_keys(d, _TOP_KEYS, "")
    seed = _get(d, "seed", int, 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {seed}")
    base_kw = _parse_sim_base(d.get("sim", {}))
    cells = _parse_cells(d, base_kw)
    rank = SimConfig(**base_kw).rank
    methods = d.get("methods", list(METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", "expected a non-empty list")
    clustering = d.get("clustering", {})
    _check_keys(clustering, {"n_init"}, "clustering")
    uniq = d.get("uniqueness", {})
    _check_keys(uniq, {"fit_window", "threshold"}, "uniqueness")
    return ExperimentConfig(
        cells=cells,
        n_datasets=_get(d, "n_datasets", int, 20),
        methods=tuple(methods),
        method_options=_parse_fit(d, rank),
        seed=seed,
        output_dir=_get(d, "output_dir", str, "results"),
        workers=_get(d, "workers", int, 1),
        clustering_n_init=_get(clustering, "n_init", int, 20, "clustering"),
        fit_window=_get(uniq, "fit_window", float, 0.1, "uniqueness"),
        uniqueness_threshold=_get(uniq, "threshold", float, 0.99, "uniqueness"),
    )


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file (JSON)."""
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(d)
