"""Dense third-order tensors and the CP / PARAFAC2 reconstructions.

A tensor of shape I x J x K is stored as its K frontal slices, each an
I x J matrix, i.e. a C-ordered ``(K, I, J)`` array.  That layout fixes the
unfolding conventions used throughout the package:

* mode 1: ``I x (J*K)``, column ``k*J + j``  ->  ``A @ khatri_rao(C, B).T``
* mode 2: ``J x (I*K)``, column ``k*I + i``  ->  ``B @ khatri_rao(C, A).T``
* mode 3: ``K x (I*J)``, column ``i*J + j``  ->  ``C @ khatri_rao(A, B).T``
"""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from .exceptions import TensorFormatError


def as_factor(M, name="factor"):
    """Validate a factor matrix: 2-D, at least one column, finite. Returns float64."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite values")
    return M


class DenseTensor3:
    """Immutable dense I x J x K tensor of float64 values.

    Parameters
    ----------
    slices : array_like, shape (K, I, J)
        Frontal slices ``X_k``.  The data is copied and frozen.
    """

    __slots__ = ("_slices",)

    def __init__(self, slices):
        arr = np.array(slices, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"expected a non-empty (K, I, J) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._slices = arr

    @classmethod
    def from_array(cls, X):
        """Build from an ``(I, J, K)`` array indexed as ``X[i, j, k]``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError(f"expected a 3-D array, got {X.ndim}-D")
        return cls(np.moveaxis(X, 2, 0))

    @classmethod
    def zeros(cls, I, J, K):
        return cls(np.zeros((K, I, J)))

    @property
    def dims(self):
        K, I, J = self._slices.shape
        return I, J, K

    @property
    def slices(self):
        """Read-only ``(K, I, J)`` view of the frontal slices."""
        return self._slices

    def to_array(self):
        """Copy as an ``(I, J, K)`` array."""
        return np.ascontiguousarray(np.moveaxis(self._slices, 0, 2))

    def ravel(self):
        """Values in storage order (slice-major, row-major within slices)."""
        return self._slices.ravel()

    def __eq__(self, other):
        if not isinstance(other, DenseTensor3):
            return NotImplemented
        return self._slices.shape == other._slices.shape and bool(
            np.array_equal(self._slices, other._slices)
        )

    __hash__ = None

    def __repr__(self):
        I, J, K = self.dims
        return f"DenseTensor3({I}x{J}x{K}, norm={frobenius_norm(self):.6g})"


def _slices_of(T):
    if isinstance(T, DenseTensor3):
        return T.slices
    arr = np.asarray(T, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a tensor, got array of shape {arr.shape}")
    return arr


def frontal_slice(T: DenseTensor3, k: int) -> np.ndarray:
    """Return ``X_k`` as a read-only view into ``T`` (no copy)."""
    K = T.dims[2]
    if not 0 <= k < K:
        raise IndexError(f"slice index {k} out of range for K={K}")
    return T.slices[k]


def unfold(T: DenseTensor3, mode: int) -> np.ndarray:
    """Mode-``n`` unfolding (``mode`` in 1, 2, 3); see module docstring for column order."""
    X = _slices_of(T)
    K, I, J = X.shape
    if mode == 1:
        return X.transpose(1, 0, 2).reshape(I, K * J)
    if mode == 2:
        return X.transpose(2, 0, 1).reshape(J, K * I)
    if mode == 3:
        return X.reshape(K, I * J).copy()
    raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def khatri_rao(U, V) -> np.ndarray:
    """Column-wise Kronecker product; row ``u*rows(V) + v`` holds ``U[u, r] * V[v, r]``."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if U.shape[1] != V.shape[1]:
        raise ValueError(f"rank mismatch: {U.shape[1]} != {V.shape[1]}")
    R = U.shape[1]
    return (U[:, None, :] * V[None, :, :]).reshape(-1, R)


def _check_ranks(*factors):
    ranks = {F.shape[1] for F in factors}
    if len(ranks) != 1:
        raise ValueError(f"factor ranks differ: {sorted(ranks)}")


def reconstruct_cp(A, B, C) -> DenseTensor3:
    """Tensor with slices ``A @ diag(C[k]) @ B.T``."""
    A, B, C = as_factor(A, "A"), as_factor(B, "B"), as_factor(C, "C")
    _check_ranks(A, B, C)
    return DenseTensor3(np.einsum("ir,kr,jr->kij", A, C, B, optimize=True))


def reconstruct_parafac2(A, Bk: Sequence, C) -> DenseTensor3:
    """Tensor with slices ``A @ diag(C[k]) @ Bk[k].T``; ``Bk`` is K matrices of shape J x R."""
    A, C = as_factor(A, "A"), as_factor(C, "C")
    Bk = np.asarray(Bk, dtype=np.float64)
    if Bk.ndim != 3:
        raise ValueError("Bk must be a sequence of J x R matrices")
    if Bk.shape[0] != C.shape[0]:
        raise ValueError(f"got {Bk.shape[0]} B_k matrices for K={C.shape[0]}")
    if Bk.shape[2] != A.shape[1]:
        raise ValueError(f"B_k rank {Bk.shape[2]} != {A.shape[1]}")
    _check_ranks(A, C)
    if not np.all(np.isfinite(Bk)):
        raise ValueError("Bk contains non-finite values")
    # Same contraction order as reconstruct_cp so constant B_k reproduces it exactly.
    return DenseTensor3(np.einsum("ir,kr,kjr->kij", A, C, Bk, optimize=True))


def frobenius_norm(T) -> float:
    return float(np.linalg.norm(_slices_of(T).ravel()))


# --- TNS3 text format ------------------------------------------------------

def write_tns3(T: DenseTensor3, path) -> None:
    """Write ``TNS3 I J K`` then one line per slice row, 17 significant digits."""
    I, J, K = T.dims
    with open(path, "w") as fh:
        fh.write(f"TNS3 {I} {J} {K}\n")
        for row in T.slices.reshape(K * I, J):
            fh.write(" ".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def read_tns3(path) -> DenseTensor3:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 4 or parts[0] != "TNS3":
            raise TensorFormatError("expected header 'TNS3 I J K'", 1)
        try:
            I, J, K = (int(p) for p in parts[1:])
        except ValueError:
            raise TensorFormatError("dimensions must be integers", 1) from None
        if min(I, J, K) < 1:
            raise TensorFormatError("dimensions must be positive", 1)
        expected = I * J * K
        values = []
        for lineno, line in enumerate(fh, start=2):
            for tok in line.split():
                try:
                    values.append(float(tok))
                except ValueError:
                    raise TensorFormatError(f"not a number: {tok!r}", lineno) from None
                if len(values) > expected:
                    raise TensorFormatError(
                        f"more than the {expected} values declared in the header", lineno
                    )
    if len(values) != expected:
        raise TensorFormatError(f"expected {expected} values, found {len(values)}")
    arr = np.array(values).reshape(K, I, J)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("non-finite value in tensor data")
    return DenseTensor3(arr)
