import numpy as np
import pytest

from pf2net.tensor import DenseTensor3, reconstruct_cp, reconstruct_parafac2

# Filled by test_acceptance.py; printed at the end of every run.
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


def cp_truth(seed, dims=(10, 10, 10), rank=3):
    rng = np.random.default_rng(seed)
    I, J, K = dims
    A = rng.standard_normal((I, rank))
    B = rng.standard_normal((J, rank))
    C = rng.standard_normal((K, rank))
    return A, B, C, reconstruct_cp(A, B, C)


def pf2_truth(seed, dims=(10, 12, 10), rank=3):
    """Constraint-satisfying PARAFAC2 ground truth with C uniform on [0, 1)."""
    rng = np.random.default_rng(seed)
    I, J, K = dims
    A = rng.standard_normal((I, rank))
    H = rng.standard_normal((rank, rank))
    P = np.linalg.qr(rng.standard_normal((K, J, rank)))[0]
    C = rng.random((K, rank))
    Bk = P @ H
    return A, Bk, C, reconstruct_parafac2(A, Bk, C)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_tensor(rng):
    return DenseTensor3(rng.standard_normal((4, 5, 6)))
