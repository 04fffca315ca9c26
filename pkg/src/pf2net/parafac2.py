"""PARAFAC2 by direct-fitting ALS.

Each slice is modelled as ``X_k ~ A diag(c_k) H' P_k'`` with column-orthonormal
``P_k`` (J x R), so every ``B_k = P_k H`` shares the cross-product ``H'H``.
A sweep solves the Procrustes problem for all ``P_k``, projects the slices to
``Y_k = X_k P_k`` (I x R) and runs one CP-ALS pass (A, H, C) on the projected
tensor.  Because ``P_k`` has orthonormal columns the loss splits as

    ||X_k - M P_k'||^2 = ||X_k||^2 - ||Y_k||^2 + ||Y_k - M||^2

which is what gets tracked.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cp import FitOptions, FitReport, _check_tensor, has_converged, model_loss, select_best
from .numerics import gram_solve, make_rng, nnls_gram_rows, polar_factor
from .tensor import DenseTensor3, khatri_rao, reconstruct_parafac2


@dataclass
class Parafac2Model:
    A: np.ndarray  # I x R
    H: np.ndarray  # R x R
    P: np.ndarray  # K x J x R, orthonormal columns per slice
    C: np.ndarray  # K x R

    @property
    def rank(self):
        return self.A.shape[1]

    @property
    def Bk(self):
        """Evolving factors ``B_k = P_k H`` as a ``(K, J, R)`` array."""
        return self.P @ self.H

    def to_tensor(self):
        return reconstruct_parafac2(self.A, self.Bk, self.C)

    def normalized(self):
        """Unit-norm columns in A and H (hence in every B_k); scale moved into C.

        If C has a column with negative sum, that column and the matching A
        column are flipped, so a non-negative C is left as is.
        """
        na = np.linalg.norm(self.A, axis=0)
        nh = np.linalg.norm(self.H, axis=0)
        na[na == 0] = 1.0
        nh[nh == 0] = 1.0
        C = self.C * (na * nh)
        sign = np.where(C.sum(axis=0) < 0, -1.0, 1.0)
        return Parafac2Model(self.A / na * sign, self.H / nh, self.P, C * sign)


def _as_slices(slices):
    if isinstance(slices, DenseTensor3):
        return slices.slices
    return np.asarray(slices, dtype=np.float64)


def update_projections(slices, A, H, C):
    """``P_k = argmax trace(P' X_k' A diag(c_k) H')`` over column-orthonormal P, for every k."""
    X = _as_slices(slices)
    K, I, J = X.shape
    return _projections(np.ascontiguousarray(np.swapaxes(X, 1, 2)).reshape(K * J, I), K, A, H, C)


def _projections(Xt2, K, A, H, C):
    # Xt2 stacks the transposed slices X_k' vertically: (K*J) x I.  When c_k has
    # zeros the maximizer is not unique; ties are broken towards X_k' A H', so a
    # switched-off component gets a column aligned with the data.
    R = A.shape[1]
    XtA = (Xt2 @ A).reshape(K, -1, R)
    F = ((XtA * C[:, None, :]).reshape(-1, R) @ H.T).reshape(K, -1, R)
    return polar_factor(F, tie_break=(XtA.reshape(-1, R) @ H.T).reshape(K, -1, R))


def project_slices(slices, P) -> DenseTensor3:
    """Projected tensor (I x R x K) with slices ``X_k @ P_k``."""
    X = _as_slices(slices)
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 3 or P.shape[0] != X.shape[0] or P.shape[1] != X.shape[2]:
        raise ValueError(f"projections of shape {P.shape} do not match slices {X.shape}")
    return DenseTensor3(X @ P)


def pf2_constraint_gap(Bk) -> float:
    """Largest pairwise difference of ``B_k'B_k`` relative to their mean Frobenius norm."""
    Bk = np.asarray(Bk, dtype=np.float64)
    grams = np.swapaxes(Bk, 1, 2) @ Bk
    scale = np.mean(np.linalg.norm(grams, axis=(1, 2)))
    if scale == 0.0:
        return 0.0
    flat = grams.reshape(len(grams), -1)
    gap = 0.0
    for k in range(len(flat) - 1):
        gap = max(gap, float(np.max(np.linalg.norm(flat[k + 1:] - flat[k], axis=1))))
    return gap / scale


def _nonneg_rows(gram, rhs, C_free):
    """Row-wise exact NNLS in normal-equation form; rows already >= 0 are optimal as is."""
    rows = np.any(C_free < 0, axis=1)
    if not rows.any():
        return C_free
    C = C_free.copy()
    C[rows] = nnls_gram_rows(gram, rhs[rows])
    return C


def _pf2_single(T, norm_sq, rank, max_iterations, tol, seed, nonneg_C):
    t0 = time.perf_counter()
    X = T.slices
    I, J, K = T.dims
    rng = make_rng(seed)
    A = rng.standard_normal((I, rank))
    H = rng.standard_normal((rank, rank))
    C = rng.standard_normal((K, rank))
    if nonneg_C:
        C = np.abs(C)

    trace = []
    converged = False
    Xt2 = np.ascontiguousarray(np.swapaxes(X, 1, 2)).reshape(K * J, I)
    for it in range(max_iterations):
        P = _projections(Xt2, K, A, H, C)
        Y = X @ P
        Y1 = Y.transpose(1, 0, 2).reshape(I, K * rank)
        Y2 = Y.transpose(2, 0, 1).reshape(rank, K * I)
        Y3 = Y.reshape(K, I * rank)
        A = gram_solve((C.T @ C) * (H.T @ H), Y1 @ khatri_rao(C, H))
        H = gram_solve((C.T @ C) * (A.T @ A), Y2 @ khatri_rao(C, A))
        gram = (A.T @ A) * (H.T @ H)
        krAH = khatri_rao(A, H)
        rhs = Y3 @ krAH
        C = gram_solve(gram, rhs)
        if nonneg_C:
            C = _nonneg_rows(gram, rhs, C)
        # ||X||^2 - ||Y||^2 + ||Y - Yhat||^2, with the last term expanded around ||Y||^2.
        loss = model_loss(norm_sq, C, rhs, gram) / norm_sq
        trace.append(loss)
        if it > 0 and has_converged(trace[-2], loss, tol):
            converged = True
            break
        if loss == 0.0:
            converged = True
            break

    # Refresh projections for the final A, H, C; this step can only lower the loss.
    P = update_projections(X, A, H, C)
    model = Parafac2Model(A, H, P, C).normalized()
    resid = X - model.to_tensor().slices
    final = float(np.dot(resid.ravel(), resid.ravel())) / norm_sq
    if final < trace[-1]:
        trace.append(final)
    report = FitReport(
        fit=100.0 * (1.0 - trace[-1]),
        loss_trace=trace,
        converged=converged,
        iterations=len(trace),
        seed=seed,
        wall_time=time.perf_counter() - t0,
    )
    return model, report


def pf2_als_runs(T, opts: FitOptions, nonneg_C=False):
    """Fit every start; returns a list of ``(Parafac2Model, FitReport)``."""
    T, norm_sq = _check_tensor(T)
    if opts.rank > T.dims[1]:
        raise ValueError(f"rank {opts.rank} exceeds J={T.dims[1]}")
    runs = []
    for s in range(opts.n_starts):
        model, report = _pf2_single(
            T, norm_sq, opts.rank, opts.max_iterations, opts.tol, opts.start_seed(s), nonneg_C
        )
        report.start_index = s
        runs.append((model, report))
    return runs


def pf2_als(T, opts: FitOptions, nonneg_C=False):
    """Multi-start PARAFAC2-ALS; returns the best-fitting ``(Parafac2Model, FitReport)``.

    With ``nonneg_C`` the time-mode factor is updated by exact row-wise NNLS,
    so ``C >= 0`` holds for the returned model.
    """
    return select_best(pf2_als_runs(T, opts, nonneg_C=nonneg_C))
