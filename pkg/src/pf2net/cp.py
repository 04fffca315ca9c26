"""CP (CANDECOMP/PARAFAC) fitting by alternating least squares."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .numerics import derive_seed, gram_solve, make_rng, solve_lstsq
from .tensor import DenseTensor3, reconstruct_cp


@dataclass(frozen=True)
class FitOptions:
    rank: int
    max_iterations: int = 2000
    tol: float = 1e-8
    seed: int = 0
    n_starts: int = 10

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def start_seed(self, start):
        return derive_seed(self.seed, start)


@dataclass
class FitReport:
    """Outcome of one fit.

    ``loss_trace`` holds the relative loss ``||X - Xhat||^2 / ||X||^2`` after
    every sweep, so ``fit == 100 * (1 - loss_trace[-1])``.
    """

    fit: float
    loss_trace: list
    converged: bool
    iterations: int
    seed: int
    wall_time: float = 0.0
    start_index: int = 0
    start_fits: list = field(default_factory=list)

    def to_dict(self):
        return {
            "fit": self.fit,
            "converged": self.converged,
            "iterations": self.iterations,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "start_index": self.start_index,
            "start_fits": list(self.start_fits),
            "loss_trace": list(self.loss_trace),
        }


@dataclass
class CpModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        ranks = {self.A.shape[1], self.B.shape[1], self.C.shape[1]}
        if len(ranks) != 1:
            raise ValueError(f"factor ranks differ: {sorted(ranks)}")

    @property
    def rank(self):
        return self.A.shape[1]

    @property
    def factors(self):
        return [self.A, self.B, self.C]

    def to_tensor(self):
        return reconstruct_cp(self.A, self.B, self.C)

    def normalized(self):
        """Unit-norm columns in A and B, scale moved into C; C columns get non-negative sums."""
        na = np.linalg.norm(self.A, axis=0)
        nb = np.linalg.norm(self.B, axis=0)
        na[na == 0] = 1.0
        nb[nb == 0] = 1.0
        A = self.A / na
        B = self.B / nb
        C = self.C * (na * nb)
        sign = np.where(C.sum(axis=0) < 0, -1.0, 1.0)
        return CpModel(A * sign, B, C * sign)


def cp_mode_update(unfolding, kr):
    """Exact least-squares block update: argmin_F ||unfolding - F @ kr.T||_F."""
    return solve_lstsq(kr, np.asarray(unfolding).T).T


def _check_tensor(T):
    if not isinstance(T, DenseTensor3):
        T = DenseTensor3(T)
    norm_sq = float(np.dot(T.ravel(), T.ravel()))
    if norm_sq == 0.0:
        raise ValueError("cannot fit an all-zero tensor")
    return T, norm_sq


def has_converged(prev, cur, tol):
    """Relative decrease of the loss below ``tol`` (an exactly-zero loss counts as converged)."""
    if cur == 0.0:
        return True
    return prev - cur < tol * prev


def model_loss(norm_sq, C, rhs, gram):
    """``||X - Xhat||^2`` after a C update, from ``||X||^2``, the C-mode MTTKRP and Gram.

    Expands to ``||X||^2 - 2<C, rhs> + <C'C, gram>``; clipped at 0 against rounding.
    """
    return max(norm_sq - 2.0 * float(np.sum(C * rhs)) + float(np.sum((C.T @ C) * gram)), 0.0)


def select_best(runs):
    """Best (model, report) by fit; ties go to the lowest seed."""
    best = max(runs, key=lambda mr: (mr[1].fit, -mr[1].seed))
    model, report = best
    report.start_fits = [r.fit for _, r in runs]
    return model, report


def _cp_single(T, norm_sq, rank, max_iterations, tol, seed):
    t0 = time.perf_counter()
    I, J, K = T.dims
    rng = make_rng(seed)
    A = rng.standard_normal((I, rank))
    B = rng.standard_normal((J, rank))
    C = rng.standard_normal((K, rank))
    X2 = T.slices.reshape(K * I, J)  # frontal slices stacked vertically
    Xt2 = np.ascontiguousarray(np.swapaxes(T.slices, 1, 2)).reshape(K * J, I)

    trace = []
    converged = False
    for it in range(max_iterations):
        # Slice-wise MTTKRPs: sum_k X_k B diag(c_k), sum_k X_k' A diag(c_k), diag(A' X_k B).
        XB = (X2 @ B).reshape(K, I, rank)
        A = gram_solve((C.T @ C) * (B.T @ B), np.einsum("kir,kr->ir", XB, C))
        XtA = (Xt2 @ A).reshape(K, J, rank)
        B = gram_solve((C.T @ C) * (A.T @ A), np.einsum("kjr,kr->jr", XtA, C))
        gram = (A.T @ A) * (B.T @ B)
        rhs = np.einsum("kir,ir->kr", (X2 @ B).reshape(K, I, rank), A)
        C = gram_solve(gram, rhs)
        loss = model_loss(norm_sq, C, rhs, gram) / norm_sq
        trace.append(loss)
        if it > 0 and has_converged(trace[-2], loss, tol):
            converged = True
            break
        if loss == 0.0:
            converged = True
            break

    model = CpModel(A, B, C).normalized()
    report = FitReport(
        fit=100.0 * (1.0 - trace[-1]),
        loss_trace=trace,
        converged=converged,
        iterations=len(trace),
        seed=seed,
        wall_time=time.perf_counter() - t0,
    )
    return model, report


def cp_als_runs(T, opts: FitOptions):
    """Fit every start in ``opts``; returns a list of ``(CpModel, FitReport)``."""
    T, norm_sq = _check_tensor(T)
    runs = []
    for s in range(opts.n_starts):
        model, report = _cp_single(
            T, norm_sq, opts.rank, opts.max_iterations, opts.tol, opts.start_seed(s)
        )
        report.start_index = s
        runs.append((model, report))
    return runs


def cp_als(T, opts: FitOptions):
    """Multi-start CP-ALS; returns the best-fitting ``(CpModel, FitReport)``.

    Each start draws A, B, C from a standard normal and sweeps A -> B -> C
    until the relative decrease of the loss drops below ``opts.tol`` or
    ``opts.max_iterations`` sweeps are done.  The returned model is
    normalized (see :meth:`CpModel.normalized`).
    """
    return select_best(cp_als_runs(T, opts))
