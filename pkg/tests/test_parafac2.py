import numpy as np
import pytest

from conftest import pf2_truth
from pf2net.cp import FitOptions
from pf2net.metrics import concat_evolving, fms, match_components
from pf2net.parafac2 import (
    Parafac2Model,
    pf2_als,
    pf2_als_runs,
    pf2_constraint_gap,
    project_slices,
    update_projections,
)
from pf2net.simgen import gen_B_network, gen_B_random_constrained
from pf2net.tensor import DenseTensor3, reconstruct_parafac2


def objective(X, A, H, C, P):
    """sum_k trace(P_k' X_k' A diag(c_k) H'), the quantity each P_k maximizes."""
    return sum(np.trace(P[k].T @ X[k].T @ A @ np.diag(C[k]) @ H.T) for k in range(len(X)))


class TestUpdateProjections:
    def test_exact_model_zero_loss(self):
        A, Bk, C, T = pf2_truth(0, (6, 8, 4), 3)
        # Any H with H'H = B_k'B_k works: B_k = (P_k Q) H for an orthogonal Q.
        H = np.linalg.cholesky(Bk[0].T @ Bk[0]).T
        P = update_projections(T, A, H, C)
        recon = reconstruct_parafac2(A, P @ H, C)
        np.testing.assert_allclose(recon.slices, T.slices, atol=1e-10)

    def test_identity_case(self):
        R, J = 2, 4
        A, H, C = np.eye(R), np.eye(R), np.ones((3, R))
        X = np.stack([np.eye(R, J)] * 3)
        P = update_projections(X, A, H, C)
        np.testing.assert_allclose(P, np.stack([np.eye(J, R)] * 3), atol=1e-14)

    def test_maximizes_objective(self, rng):
        X = rng.standard_normal((5, 6, 7))
        A, H, C = rng.standard_normal((6, 3)), rng.standard_normal((3, 3)), rng.standard_normal((5, 3))
        P = update_projections(X, A, H, C)
        best = objective(X, A, H, C, P)
        for _ in range(50):
            Q = np.linalg.qr(rng.standard_normal((5, 7, 3)))[0]
            assert objective(X, A, H, C, Q) <= best + 1e-10

    def test_zero_c_row_still_orthonormal(self, rng):
        X = rng.standard_normal((3, 6, 7))
        A, H, C = rng.standard_normal((6, 3)), rng.standard_normal((3, 3)), np.abs(rng.standard_normal((3, 3)))
        C[1] = 0.0
        C[2, 0] = 0.0
        P = update_projections(X, A, H, C)
        for k in range(3):
            np.testing.assert_allclose(P[k].T @ P[k], np.eye(3), atol=1e-12)


class TestProjectSlices:
    def test_identity_blocks_truncate(self, rng):
        X = rng.standard_normal((3, 4, 6))
        P = np.stack([np.eye(6, 2)] * 3)
        Y = project_slices(X, P)
        assert Y.dims == (4, 2, 3)
        np.testing.assert_array_equal(Y.slices, X[:, :, :2])

    def test_zero(self):
        Y = project_slices(np.zeros((2, 3, 4)), np.stack([np.eye(4, 2)] * 2))
        assert not Y.slices.any()

    def test_mismatch(self):
        with pytest.raises(ValueError):
            project_slices(np.zeros((2, 3, 4)), np.stack([np.eye(5, 2)] * 2))


class TestConstraintGap:
    def test_identical(self, rng):
        B = rng.standard_normal((6, 3))
        assert pf2_constraint_gap([B] * 4) == 0.0

    def test_orthonormal_times_h(self):
        assert pf2_constraint_gap(gen_B_random_constrained(20, 4, 10, seed=1)) <= 1e-12

    def test_growing_network_positive(self):
        assert pf2_constraint_gap(gen_B_network(100, 4, 25, seed=1)) > 0.01

    def test_zero(self):
        assert pf2_constraint_gap(np.zeros((3, 4, 2))) == 0.0


class TestPf2Als:
    def test_oracle_recovery_nonneg(self):
        A, Bk, C, T = pf2_truth(11)
        model, report = pf2_als(T, FitOptions(rank=3, seed=3, n_starts=5), nonneg_C=True)
        truth = [A, concat_evolving(Bk), C]
        est = [model.A, concat_evolving(model.Bk), model.C]
        m = match_components(truth, est)
        for U, Uh in zip(truth, est):
            assert fms(U, Uh, m) >= 0.99
        assert report.fit > 99.9

    def test_slice_sign_symmetry(self, rng):
        # Without sign constraints (P_k, c_k) -> (-P_k, -c_k) leaves the model unchanged, so the
        # time and evolving modes are identified only up to one sign per slice; non-negative C
        # removes this, which is why the harness fits with it.
        A, H = rng.standard_normal((4, 2)), rng.standard_normal((2, 2))
        P, C = np.linalg.qr(rng.standard_normal((5, 6, 2)))[0], rng.random((5, 2))
        s = np.array([1.0, -1.0, -1.0, 1.0, -1.0])
        m1 = Parafac2Model(A, H, P, C)
        m2 = Parafac2Model(A, H, P * s[:, None, None], C * s[:, None])
        np.testing.assert_allclose(m1.to_tensor().slices, m2.to_tensor().slices, atol=1e-14)
        assert pf2_constraint_gap(m2.Bk) <= 1e-12
        assert fms(C, m2.C) < 0.99

    def test_model_invariants(self, rng):
        T = DenseTensor3(rng.standard_normal((8, 9, 6)))
        model, report = pf2_als(T, FitOptions(rank=3, seed=1, n_starts=2, max_iterations=200), nonneg_C=True)
        assert np.all(model.C >= 0)
        assert pf2_constraint_gap(model.Bk) <= 1e-8
        for P in model.P:
            np.testing.assert_allclose(P.T @ P, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(np.linalg.norm(model.A, axis=0), 1.0)
        np.testing.assert_allclose(np.linalg.norm(model.Bk, axis=1), 1.0)
        assert np.all(np.diff(report.loss_trace) <= 1e-10)

    def test_reported_fit_is_model_fit(self, rng):
        from pf2net.metrics import fit_score

        T = DenseTensor3(rng.standard_normal((7, 8, 5)))
        model, report = pf2_als(T, FitOptions(rank=2, seed=4, n_starts=2, max_iterations=100))
        assert report.fit == pytest.approx(fit_score(T, model.to_tensor()), abs=1e-8)

    def test_beats_cp_on_pf2_data(self):
        from pf2net.cp import cp_als

        *_, T = pf2_truth(5, (10, 15, 8), 3)
        opts = FitOptions(rank=3, seed=2, n_starts=3)
        _, cp_rep = cp_als(T, opts)
        _, pf2_rep = pf2_als(T, opts)
        assert pf2_rep.fit >= cp_rep.fit

    def test_equal_bk_matches_cp(self):
        # noise-free: with noise the extra freedom of PARAFAC2 absorbs part of the noise
        from pf2net.cp import cp_als

        rng = np.random.default_rng(21)
        A, B, C = rng.standard_normal((10, 3)), rng.standard_normal((12, 3)), rng.random((8, 3))
        T = reconstruct_parafac2(A, [B] * 8, C)
        opts = FitOptions(rank=3, seed=5, n_starts=5)
        _, cp_rep = cp_als(T, opts)
        _, pf2_rep = pf2_als(T, opts, nonneg_C=True)
        assert abs(pf2_rep.fit - cp_rep.fit) <= 0.1

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            pf2_als(DenseTensor3.zeros(3, 3, 3), FitOptions(rank=1))
        with pytest.raises(ValueError):
            pf2_als_runs(DenseTensor3(rng.standard_normal((3, 3, 2))), FitOptions(rank=3))

    def test_normalized_keeps_tensor(self, rng):
        m = Parafac2Model(
            rng.standard_normal((4, 2)), rng.standard_normal((2, 2)),
            np.linalg.qr(rng.standard_normal((3, 5, 2)))[0], rng.standard_normal((3, 2)),
        )
        np.testing.assert_allclose(m.normalized().to_tensor().slices, m.to_tensor().slices, atol=1e-12)
