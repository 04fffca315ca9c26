"""Simulated time-evolving datasets with known PARAFAC2-style ground truth."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import derive_seed, make_rng
from .tensor import DenseTensor3, frobenius_norm, reconstruct_parafac2

B_SETUPS = ("Random", "Network")
C_SETUPS = ("Random", "Trends")


@dataclass(frozen=True)
class NetworkParams:
    base_width: int = 15
    shift_step: int | None = None  # None -> ceil(J / (2K))
    grow_step: int = 1
    jitter: float = 0.1


@dataclass(frozen=True)
class SimConfig:
    dims: tuple = (50, 100, 25)
    rank: int = 4
    b_setup: str = "Random"
    c_setup: str = "Random"
    noise: float = 0.0
    seed: int = 0
    cluster_sizes: tuple = (25, 25)
    cluster_offset: float = 1.0
    cluster_jitter: float = 0.3
    network: NetworkParams = field(default_factory=NetworkParams)

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.b_setup not in B_SETUPS:
            raise ValueError(f"b_setup must be one of {B_SETUPS}, got {self.b_setup!r}")
        if self.c_setup not in C_SETUPS:
            raise ValueError(f"c_setup must be one of {C_SETUPS}, got {self.c_setup!r}")
        if not self.noise >= 0:
            raise ValueError(f"noise level must be >= 0, got {self.noise}")
        if sum(self.cluster_sizes) != self.dims[0]:
            raise ValueError(
                f"cluster sizes {self.cluster_sizes} do not sum to I={self.dims[0]}"
            )

    def to_dict(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["cluster_sizes"] = list(self.cluster_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "network" in d and isinstance(d["network"], dict):
            d["network"] = NetworkParams(**d["network"])
        for key in ("dims", "cluster_sizes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SimDataset:
    config: SimConfig
    noisy: DenseTensor3
    clean: DenseTensor3
    A: np.ndarray
    Bk: np.ndarray  # K x J x R
    C: np.ndarray
    labels: np.ndarray


def cluster_means(n_clusters, R, offset, seed=0):
    """Cluster mean rows; column r is a length-``offset`` vector over the clusters.

    With two clusters, component r points at angle ``r * pi / R`` in the
    (cluster 0, cluster 1) plane, so components differ in how strongly and in
    which direction they separate the groups while their columns stay far
    from collinear.  With more clusters the directions are random unit vectors.
    """
    if n_clusters == 2:
        theta = np.arange(R) * np.pi / R
        M = np.vstack([np.cos(theta), np.sin(theta)])
    else:
        M = make_rng(seed).standard_normal((n_clusters, R))
        M /= np.linalg.norm(M, axis=0)
    return offset * M


def gen_A_clustered(I, R, clusters, seed, offset=1.0, jitter=0.3):
    """Subjects-mode factor with cluster structure.

    Each row is its cluster's mean row (see :func:`cluster_means`) plus
    Gaussian jitter with standard deviation ``jitter``.  Returns ``(A, labels)``.
    """
    sizes = [int(s) for s in clusters]
    if any(s < 1 for s in sizes):
        raise ValueError(f"empty cluster in sizes {sizes}")
    if sum(sizes) != I:
        raise ValueError(f"cluster sizes {sizes} do not sum to I={I}")
    labels = np.repeat(np.arange(len(sizes)), sizes)
    rng = make_rng(seed)
    means = cluster_means(len(sizes), R, offset, seed=derive_seed(seed, 1))
    A = means[labels] + jitter * rng.standard_normal((I, R))
    return A, labels


def gen_B_random_constrained(J, R, K, seed):
    """``B_k = P_k H`` with P_k the orthonormal Q factor of a Gaussian J x R draw."""
    if R > J:
        raise ValueError(f"rank {R} exceeds J={J}")
    rng = make_rng(seed)
    H = rng.standard_normal((R, R))
    P = np.linalg.qr(rng.standard_normal((K, J, R)))[0]
    return P @ H


def network_blocks(J, K, params: NetworkParams = NetworkParams()):
    """Active ``(start, width)`` per window for the four network kinds.

    Returns an int array of shape ``(K, 4, 2)``; kinds are, in order,
    shifting, growing, shrinking, shifting-and-growing.

    The growing and shrinking blocks sit at the left end of the node axis:
    growing is ``[0, w0 + g*k)`` and shrinking is ``[g*k, w0 + g*(K-1))``, so
    their overlap stays at ``w0`` nodes.  The shifting and the
    shifting-and-growing blocks start at the same node, advancing by the
    shift step, and are aligned so the latter ends at node J in the last
    window; their overlap is also ``w0`` nodes throughout.
    """
    w0 = params.base_width
    step = params.shift_step if params.shift_step is not None else math.ceil(J / (2 * K))
    g = params.grow_step
    if w0 < 1 or step < 0 or g < 0:
        raise ValueError("base_width must be >= 1, shift_step and grow_step >= 0")
    k = np.arange(K)
    span = w0 + g * (K - 1)
    origin = J - (step * (K - 1) + span)
    if origin < 0:
        raise ValueError(
            f"network blocks need {step * (K - 1) + span} nodes but J={J}; "
            "reduce base_width, shift_step or grow_step"
        )
    out = np.empty((K, 4, 2), dtype=int)
    out[:, 0, 0] = origin + step * k
    out[:, 0, 1] = w0
    out[:, 1, 0] = 0
    out[:, 1, 1] = w0 + g * k
    out[:, 2, 0] = g * k
    out[:, 2, 1] = span - g * k
    out[:, 3, 0] = origin + step * k
    out[:, 3, 1] = w0 + g * k
    return out


def gen_B_network(J, R, K, seed, params: NetworkParams = NetworkParams()):
    """Evolving network factors: shifting, growing, shrinking, shifting-and-growing.

    Active nodes are 1 plus N(0, jitter^2); inactive nodes are exactly 0.
    """
    if R != 4:
        raise ValueError(f"network setup needs R=4 (one column per kind), got {R}")
    blocks = network_blocks(J, K, params)
    rng = make_rng(seed)
    Bk = np.zeros((K, J, R))
    for k in range(K):
        for r in range(R):
            start, width = blocks[k, r]
            Bk[k, start:start + width, r] = 1.0 + params.jitter * rng.standard_normal(width)
    return Bk


def trend_curves(K):
    """Sinusoid, exponential and sigmoid sampled at k = 0..K-1, each in [0, 1]."""
    t = np.arange(K) / K
    sinusoid = 0.5 + 0.5 * np.sin(2 * np.pi * t)
    exponential = np.exp(3 * t) / np.exp(3)
    sigmoid = 1.0 / (1.0 + np.exp(-10 * (t - 0.5)))
    return np.column_stack([sinusoid, exponential, sigmoid])


def gen_C(K, R, setup, seed):
    rng = make_rng(seed)
    if setup == "Random":
        return rng.random((K, R))
    if setup == "Trends":
        if R != 4:
            raise ValueError(f"Trends setup needs R=4, got {R}")
        return np.column_stack([rng.random(K), trend_curves(K)])
    raise ValueError(f"unknown C setup {setup!r}")


def add_noise(T: DenseTensor3, eta, seed) -> DenseTensor3:
    """``T + eta * E * ||T|| / ||E||`` with standard normal E."""
    if eta < 0:
        raise ValueError(f"noise level must be >= 0, got {eta}")
    if eta == 0:
        return T
    norm_T = frobenius_norm(T)
    if norm_T == 0.0:
        raise ValueError("cannot scale noise to an all-zero tensor")
    E = make_rng(seed).standard_normal(T.slices.shape)
    return DenseTensor3(T.slices + (eta * norm_T / np.linalg.norm(E.ravel())) * E)


def gen_dataset(cfg: SimConfig) -> SimDataset:
    """Compose the generators; each part draws from its own seed derived from ``cfg.seed``."""
    I, J, K = cfg.dims
    A, labels = gen_A_clustered(
        I, cfg.rank, cfg.cluster_sizes, derive_seed(cfg.seed, 0),
        offset=cfg.cluster_offset, jitter=cfg.cluster_jitter,
    )
    if cfg.b_setup == "Random":
        Bk = gen_B_random_constrained(J, cfg.rank, K, derive_seed(cfg.seed, 1))
    else:
        Bk = gen_B_network(J, cfg.rank, K, derive_seed(cfg.seed, 1), cfg.network)
    C = gen_C(K, cfg.rank, cfg.c_setup, derive_seed(cfg.seed, 2))
    clean = reconstruct_parafac2(A, Bk, C)
    noisy = add_noise(clean, cfg.noise, derive_seed(cfg.seed, 3))
    return SimDataset(cfg, noisy, clean, A, Bk, C, labels)
