"""Dense linear-algebra kernels shared by the CP and PARAFAC2 fitters."""
from __future__ import annotations

import itertools

import numpy as np

from .exceptions import ConvergenceError

_EPS = np.finfo(np.float64).eps


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from a 64-bit seed; a Generator is passed through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or int(seed) < 0 or int(seed) >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master, *keys) -> int:
    """Deterministic 64-bit child seed for ``keys`` (non-negative ints) under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def random_gaussian_matrix(rows, cols, seed) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be positive")
    return make_rng(seed).standard_normal((rows, cols))


def random_uniform_matrix(rows, cols, seed) -> np.ndarray:
    """Entries uniform on [0, 1)."""
    if rows < 1 or cols < 1:
        raise ValueError("matrix dimensions must be positive")
    return make_rng(seed).random((rows, cols))


def thin_svd(M):
    """Economy SVD ``M = U @ diag(S) @ V.T`` with ``S`` descending.

    Stacks of matrices (``M.ndim > 2``) are decomposed independently.
    """
    M = np.asarray(M, dtype=np.float64)
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD of {M.shape} matrix did not converge: {exc}") from exc
    return U, S, np.swapaxes(Vt, -1, -2)


def orthogonal_procrustes(F, return_degenerate=False):
    """Column-orthonormal ``P`` (n x r) maximizing ``trace(P.T @ F)``.

    ``P = U @ V.T`` from the thin SVD of ``F``, computed as ``Q @ Ur @ V.T``
    from ``F = Q R`` and the SVD of the small ``R``.  If ``F`` is rank
    deficient the maximizer is not unique; a valid one is still returned and,
    with ``return_degenerate=True``, flagged.  Works on stacks of matrices.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape[-2] < F.shape[-1]:
        raise ValueError(f"need n >= r, got {F.shape[-2:]}")
    try:
        Q, Rf = np.linalg.qr(F)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"QR of {F.shape} matrix failed: {exc}") from exc
    U, S, V = thin_svd(Rf)
    P = Q @ (U @ np.swapaxes(V, -1, -2))
    if not return_degenerate:
        return P
    tol = S[..., :1] * max(F.shape[-2:]) * _EPS
    return P, bool(np.any(S <= tol))


def polar_factor(F, cond_limit=1e4, tie_break=None):
    """Stacked Procrustes maximizers, fast path for many small well-conditioned ``F``.

    Uses ``P = F (F'F)^(-1/2)`` from a symmetric eigendecomposition plus one
    Newton-Schulz step; slices whose condition number exceeds ``cond_limit``
    go through the SVD instead.  Same result as ``orthogonal_procrustes`` up
    to rounding.

    When a slice of ``F`` is rank deficient every maximizer gives the same
    objective; with ``tie_break`` (same shape as ``F``) the free columns are
    then chosen to maximize ``trace(P' tie_break)`` among them.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 2:
        tb = None if tie_break is None else np.asarray(tie_break)[None]
        return polar_factor(F[None], cond_limit, tb)[0]
    G = np.swapaxes(F, 1, 2) @ F
    w, V = np.linalg.eigh(G)
    bad = w[:, 0] <= w[:, -1] / cond_limit**2
    any_bad = bool(bad.any())
    if any_bad:
        w = np.where(bad[:, None], 1.0, w)
    S = (V * (1.0 / np.sqrt(w))[:, None, :]) @ np.swapaxes(V, 1, 2)  # (F'F)^(-1/2)
    # Newton-Schulz step P <- P (3I - P'P) / 2 folded into the small factor, with P'P = S G S.
    S = S @ (1.5 * np.eye(F.shape[2]) - 0.5 * (S @ G @ S))
    P = F @ S
    if any_bad:
        P[bad] = _svd_polar(F[bad], None if tie_break is None else np.asarray(tie_break)[bad])
    return P


def _svd_polar(F, tie_break=None, rtol=1e-12):
    U, S, V = thin_svd(F)
    P = U @ np.swapaxes(V, 1, 2)
    if tie_break is None:
        return P
    for i in np.flatnonzero(S[:, -1] <= rtol * S[:, 0]):
        r0 = int(np.sum(S[i] > rtol * S[i, 0]))
        U1, V1, V2 = U[i][:, :r0], V[i][:, :r0], V[i][:, r0:]
        # Free part: orthonormal columns outside span(U1), best aligned with tie_break @ V2.
        M = tie_break[i] @ V2
        M -= U1 @ (U1.T @ M)
        Uq, _, Vq = thin_svd(M)
        Q = Uq @ Vq.T
        Q -= U1 @ (U1.T @ Q)
        Q, Rq = np.linalg.qr(Q)
        Q = Q * np.where(np.diag(Rq) < 0, -1.0, 1.0)
        P[i] = U1 @ V1.T + Q @ V2.T
    return P


def solve_lstsq(M, Y):
    """Minimum-norm least-squares solution of ``M @ X = Y``."""
    X, *_ = np.linalg.lstsq(np.asarray(M, dtype=np.float64), np.asarray(Y, dtype=np.float64), rcond=None)
    return X


def gram_solve(gram, rhs):
    """Solve ``X @ gram = rhs`` for symmetric PSD ``gram`` (minimum norm if singular).

    This is the normal-equation form of a least-squares block update:
    with ``gram = K.T @ K`` and ``rhs = Y @ K`` it returns ``argmin ||Y - X K.T||``.
    """
    try:
        # C order: a transposed result makes every later matmul with it much slower.
        return np.ascontiguousarray(np.linalg.solve(gram, rhs.T).T)
    except np.linalg.LinAlgError:
        return rhs @ np.linalg.pinv(gram, hermitian=True)


def nnls(M, y, max_iter=None):
    """Non-negative least squares ``min ||M x - y||_2`` s.t. ``x >= 0`` (Lawson-Hanson)."""
    M = np.asarray(M, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if M.ndim != 2 or M.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: M {M.shape}, y {y.shape}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input to nnls")
    return nnls_gram(M.T @ M, M.T @ y, max_iter=max_iter)


def nnls_gram(G, b, max_iter=None):
    """Active-set NNLS in normal-equation form: ``min x'Gx/2 - b'x`` s.t. ``x >= 0``.

    ``G`` must be symmetric positive semi-definite.  The passive-set systems
    are solved exactly (minimum-norm), so the result is a KKT point up to
    rounding: ``x >= 0``, ``Gx - b >= -tol`` on the zero set and
    ``|Gx - b| <= tol`` on the positive set.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).ravel()
    n = b.shape[0]
    if G.shape != (n, n):
        raise ValueError(f"G must be {n}x{n}, got {G.shape}")
    if max_iter is None:
        max_iter = 3 * n + 10
    tol = 10 * _EPS * max(1.0, np.abs(G).sum(axis=0).max(initial=0.0)) * n

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = b.copy()
    outer = 0
    while np.any(~passive) and np.max(np.where(passive, -np.inf, w)) > tol:
        outer += 1
        if outer > max_iter:
            raise ConvergenceError(
                f"nnls did not converge in {max_iter} iterations "
                f"(max dual residual {np.max(np.where(passive, -np.inf, w)):.3e})"
            )
        passive[np.argmax(np.where(passive, -np.inf, w))] = True
        while True:
            s = np.zeros(n)
            idx = np.flatnonzero(passive)
            Gp = G[np.ix_(idx, idx)]
            try:
                s[idx] = np.linalg.solve(Gp, b[idx])
            except np.linalg.LinAlgError:
                s[idx] = solve_lstsq(Gp, b[idx])
            if np.all(s[idx] > 0):
                break
            bad = passive & (s <= 0)
            alpha = np.min(x[bad] / (x[bad] - s[bad]))
            x = x + alpha * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
        x = s
        w = b - G @ x
    return np.maximum(x, 0.0)


def _support_masks(R):
    return np.array(list(itertools.product((0.0, 1.0), repeat=R))[1:])  # every non-empty support


def nnls_gram_rows(G, Bm, max_enum_rank=8):
    """Row-wise NNLS: ``X[i] = argmin x'Gx/2 - Bm[i]'x`` s.t. ``x >= 0``.

    For small ranks every support set is tried for all rows at once: the
    optimum solves the unconstrained problem on its own support, so the
    cheapest non-negative candidate over all supports is exact.  Larger
    ranks fall back to :func:`nnls_gram` row by row.
    """
    G = np.asarray(G, dtype=np.float64)
    Bm = np.atleast_2d(np.asarray(Bm, dtype=np.float64))
    n, R = Bm.shape
    if G.shape != (R, R):
        raise ValueError(f"G must be {R}x{R}, got {G.shape}")
    if R > max_enum_rank:
        return np.array([nnls_gram(G, b) for b in Bm]).reshape(n, R)
    D = _support_masks(R)  # (S, R)
    # Restricted system per support: identity rows/columns outside it, zero right-hand side there.
    Gs = G * (D[:, :, None] * D[:, None, :]) + np.eye(R) * (1.0 - D)[:, None, :]
    rhs = D[:, :, None] * Bm.T[None]  # (S, R, n)
    try:
        Xs = np.linalg.solve(Gs, rhs)
        obj = -0.5 * np.sum(Xs * rhs, axis=1)  # exact at the restricted optimum
    except np.linalg.LinAlgError:
        Xs = np.linalg.pinv(Gs, hermitian=True) @ rhs
        GX = G @ Xs
        obj = np.sum(Xs * (0.5 * GX - rhs), axis=1)
    feasible = np.all(Xs >= 0, axis=1)  # (S, n)
    obj = np.where(feasible, obj, np.inf)
    pick = np.argmin(obj, axis=0)
    X = Xs[pick, :, np.arange(n)]
    X[obj[pick, np.arange(n)] >= 0] = 0.0  # x = 0 (objective 0) wins
    return X
