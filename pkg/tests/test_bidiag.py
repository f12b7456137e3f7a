"""Generalized bidiagonalization: hand-derived steps, invariants, and the
reduction to the classical process.

The strongest oracle: with square-root factor C of the adaptive kernel's
pseudoinverse (K^+ = C C^T), the generalized process on (A, K^+) produces
exactly the couplings and data-space directions of classical Golub-Kahan
on the composed operator A C, with solution directions related by z = C w.
A hand-rolled classical recurrence inside the test checks this with no
shared code.
"""

import numpy as np
import pytest

from idarr import (
    BidiagProcess,
    DenseMap,
    NumericalBreakdownError,
    RkhsGeometry,
    StateError,
    TrivialDataError,
    add_noise,
    clean_problem,
    generalized_eig,
    run_bidiag,
    true_solution,
)

TOY_A = np.diag([2.0, 1.0])
TOY_RHO = np.array([2.0 / 3.0, 1.0 / 3.0])


def toy_geom():
    return RkhsGeometry(DenseMap(TOY_A), TOY_RHO)


def classical_gkb(mat, b, steps):
    """Textbook Golub-Kahan lower bidiagonalization of mat starting from b."""
    beta = [float(np.linalg.norm(b))]
    u = [b / beta[0]]
    w = []
    alpha = []
    r = mat.T @ u[0]
    alpha.append(float(np.linalg.norm(r)))
    w.append(r / alpha[0])
    for i in range(steps):
        q = mat @ w[i] - alpha[i] * u[i]
        bnext = float(np.linalg.norm(q))
        if bnext <= 1e-13 * alpha[0]:
            break
        beta.append(bnext)
        u.append(q / bnext)
        r = mat.T @ u[i + 1] - bnext * w[i]
        anext = float(np.linalg.norm(r))
        if anext <= 1e-13 * alpha[0]:
            break
        alpha.append(anext)
        w.append(r / anext)
    return alpha, beta, u, w


class TestFirstStepByHand:
    def test_adaptive_toy(self):
        # b=(1,0): p = A^T u1 = (2,0); K^+ = diag(9,9) so s = (18,0);
        # alpha1 = sqrt(36) = 6, z1 = (3,0), zbar1 = (1/3,0)
        geom = toy_geom()
        proc = BidiagProcess(geom.linmap, np.array([1.0, 0.0]),
                             pinv_apply=geom.apply_crkhs_pinv)
        assert proc.beta1 == 1.0
        np.testing.assert_allclose(proc.U[0], [1.0, 0.0])
        assert proc.alphas[0] == pytest.approx(6.0, rel=1e-14)
        np.testing.assert_allclose(proc.z, [3.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(proc.zbar, [1.0 / 3.0, 0.0], atol=1e-14)

    def test_adaptive_toy_unit_weights(self):
        # with unit weights K^+ = A^T A = diag(4,1): s = (8,0), alpha1 = 4
        geom = RkhsGeometry(DenseMap(TOY_A), np.ones(2))
        proc = BidiagProcess(geom.linmap, np.array([1.0, 0.0]),
                             pinv_apply=geom.apply_crkhs_pinv)
        assert proc.alphas[0] == pytest.approx(4.0, rel=1e-14)
        np.testing.assert_allclose(proc.z, [2.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(proc.zbar, [0.5, 0.0], atol=1e-14)

    def test_identity_metric_reduces_to_classical(self):
        # no kernel: s = p = (2,0), alpha1 = 2, z1 = zbar1 = (1,0)
        proc = BidiagProcess(DenseMap(TOY_A), np.array([1.0, 0.0]))
        assert proc.alphas[0] == pytest.approx(2.0, rel=1e-14)
        np.testing.assert_allclose(proc.z, [1.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(proc.zbar, [1.0, 0.0], atol=1e-14)

    def test_zero_data_rejected(self):
        with pytest.raises(TrivialDataError):
            BidiagProcess(DenseMap(TOY_A), np.zeros(2))


class TestTermination:
    def test_aligned_data_exhausts_in_one_step(self):
        # b along the first eigen-direction: the subspace closes immediately
        geom = toy_geom()
        factors = run_bidiag(geom, np.array([1.0, 0.0]), 10)
        assert factors.terminated and factors.k_t == 1
        assert factors.alphas == [pytest.approx(6.0)]
        np.testing.assert_allclose(factors.betas, [1.0, 0.0], atol=1e-14)

    def test_generic_data_exhausts_at_full_dimension(self):
        geom = toy_geom()
        factors = run_bidiag(geom, np.array([1.0, 1.0]), 10)
        assert factors.terminated and factors.k_t == 2
        assert len(factors.alphas) == 2

    def test_exhaustion_counts_distinct_components(self):
        # A = Sigma W^T with unit weights: the generalized process equals the
        # classical one on U Sigma^2, so the exhaustion step counts distinct
        # squared singular values carrying data. Reorthogonalization is
        # essential: bare three-term recurrences let roundoff reintroduce
        # exhausted components and the process runs past the true dimension.
        rng = np.random.default_rng(5)
        w, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        a = np.diag([3.0, 2.0, 2.0, 1.0, 1.0, 1.0]) @ w.T
        geom = RkhsGeometry(DenseMap(a), np.ones(6))
        e = np.eye(6)
        for b, expected in [(e[0], 1), (e[0] + e[1], 2), (e[0] + e[1] + e[3], 3)]:
            factors = run_bidiag(geom, b, 10, reorthogonalize=True)
            assert factors.terminated
            assert factors.k_t == expected
            assert len(factors.alphas) == expected

    def test_data_outside_range_terminates_with_closing_beta(self):
        # A = [[1,1],[0,0]], b=(1,1): after one step the pulled-back
        # direction vanishes (alpha-type exit) while the data residual
        # does not, so the closing coupling sqrt(2) is recorded
        a = np.array([[1.0, 1.0], [0.0, 0.0]])
        geom = RkhsGeometry(DenseMap(a), np.ones(2))
        proc = BidiagProcess(geom.linmap, np.array([1.0, 1.0]),
                             pinv_apply=geom.apply_crkhs_pinv, keep_vectors=True)
        step = proc.advance()
        assert step.terminated and step.reason == "alpha"
        assert step.beta == pytest.approx(np.sqrt(2.0), rel=1e-14)
        assert proc.k_t == 1
        np.testing.assert_allclose(proc.betas, [np.sqrt(2.0), np.sqrt(2.0)], rtol=1e-14)

    def test_data_orthogonal_to_range_terminates_at_zero(self):
        a = np.array([[1.0, 1.0], [0.0, 0.0]])
        geom = RkhsGeometry(DenseMap(a), np.ones(2))
        proc = BidiagProcess(geom.linmap, np.array([0.0, 1.0]),
                             pinv_apply=geom.apply_crkhs_pinv)
        assert proc.terminated and proc.k_t == 0
        assert proc.alphas == []

    def test_advance_after_termination_rejected(self):
        geom = toy_geom()
        proc = BidiagProcess(geom.linmap, np.array([1.0, 0.0]),
                             pinv_apply=geom.apply_crkhs_pinv)
        proc.advance()
        assert proc.terminated
        with pytest.raises(StateError):
            proc.advance()

    def test_negative_pairing_raises_breakdown(self):
        with pytest.raises(NumericalBreakdownError):
            BidiagProcess(DenseMap(TOY_A), np.array([1.0, 0.0]),
                          pinv_apply=lambda p: -p)


class TestRecurrenceIdentities:
    def test_coupling_matrix_identity(self, rng):
        # stacking the recurrences: A Z_k = U_{k+1} B_k with B_k lower bidiagonal
        a = rng.standard_normal((14, 9))
        geom = RkhsGeometry(DenseMap(a), rng.uniform(0.5, 1.5, 9))
        b = rng.standard_normal(14)
        factors = run_bidiag(geom, b, 5)
        k = 5
        z = np.column_stack(factors.Z[:k])
        u = np.column_stack(factors.U[: k + 1])
        bk = factors.bidiagonal_matrix(k)
        assert bk.shape == (k + 1, k)
        np.testing.assert_allclose(a @ z, u @ bk, atol=1e-12 * np.abs(a @ z).max())

    def test_adjoint_recurrence(self, rng):
        # A^T u_{i+1} = beta_{i+1} zbar_i + alpha_{i+1} zbar_{i+1}
        a = rng.standard_normal((14, 9))
        geom = RkhsGeometry(DenseMap(a), rng.uniform(0.5, 1.5, 9))
        factors = run_bidiag(geom, rng.standard_normal(14), 5)
        for i in range(4):
            lhs = a.T @ factors.U[i + 1]
            rhs = factors.betas[i + 1] * factors.Zbar[i] + factors.alphas[i + 1] * factors.Zbar[i + 1]
            np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(lhs).max())

    def test_shadow_vectors_track_kernel_action(self, rng):
        # zbar_i must equal K z_i, i.e. C^+ zbar = ...: check via the dense
        # kernel K = B (A^T A)^-1 B on a full-rank operator
        a = rng.standard_normal((12, 6))
        rho = rng.uniform(0.5, 1.5, 6)
        geom = RkhsGeometry(DenseMap(a), rho)
        factors = run_bidiag(geom, rng.standard_normal(12), 4)
        kmat = np.diag(rho) @ np.linalg.inv(a.T @ a) @ np.diag(rho)
        for z, zbar in zip(factors.Z, factors.Zbar):
            np.testing.assert_allclose(kmat @ z, zbar, atol=1e-10 * np.abs(zbar).max())

    def test_couplings_positive(self, rng):
        a = rng.standard_normal((14, 9))
        geom = RkhsGeometry(DenseMap(a), rng.uniform(0.5, 1.5, 9))
        factors = run_bidiag(geom, rng.standard_normal(14), 6)
        assert all(al > 0 for al in factors.alphas)
        assert all(be > 0 for be in factors.betas)


class TestOrthogonality:
    def test_reorthogonalized_directions_on_ill_posed_problem(self, exp_setup):
        xt = true_solution(exp_setup, "in-range")
        problem = add_noise(clean_problem(exp_setup, xt), 0.25, 1)
        factors = run_bidiag(exp_setup.geom, problem.b, 20, reorthogonalize=True)
        u = np.column_stack(factors.U)
        z = np.column_stack(factors.Z)
        zbar = np.column_stack(factors.Zbar)
        k = z.shape[1]
        assert np.abs(u.T @ u - np.eye(u.shape[1])).max() <= 1e-12
        # the kernel inner product z_i^T K z_j is the plain pairing z_i^T zbar_j
        assert np.abs(z.T @ zbar - np.eye(k)).max() <= 1e-8

    def test_bare_recurrence_loses_orthogonality(self, exp_setup):
        # documents why reorthogonalization is offered at all
        xt = true_solution(exp_setup, "in-range")
        problem = add_noise(clean_problem(exp_setup, xt), 0.25, 1)
        factors = run_bidiag(exp_setup.geom, problem.b, 10, reorthogonalize=False)
        u = np.column_stack(factors.U)
        dev = np.abs(u.T @ u - np.eye(u.shape[1])).max()
        assert dev > 1e-4


class TestKrylovSubspace:
    def test_solution_directions_span_kernel_krylov_space(self, rng):
        # z_1..z_k spans K_k(K^+ A^T A, K^+ A^T b)
        a = rng.standard_normal((10, 6))
        rho = rng.uniform(0.5, 1.5, 6)
        geom = RkhsGeometry(DenseMap(a), rho)
        b = rng.standard_normal(10)
        k = 4
        factors = run_bidiag(geom, b, k - 1)
        z = np.column_stack(factors.Z[:k])

        def kp(v):
            return (a.T @ (a @ (v / rho))) / rho

        vecs = [kp(a.T @ b)]
        for _ in range(k - 1):
            vecs.append(kp(a.T @ (a @ vecs[-1])))
        kry = np.column_stack(vecs)
        qz, _ = np.linalg.qr(z)
        qk, _ = np.linalg.qr(kry)
        sv = np.linalg.svd(qz.T @ qk, compute_uv=False)
        assert sv.min() > 1.0 - 1e-8


class TestClassicalReduction:
    def test_matches_hand_rolled_golub_kahan_on_composed_operator(self, rng):
        a = rng.standard_normal((20, 12))
        geom = RkhsGeometry(DenseMap(a), rng.uniform(0.5, 2.0, 12))
        b = rng.standard_normal(20)
        decomp = generalized_eig(a.T @ a, geom.rho)
        r = decomp.rank
        assert r == 12
        cfac = decomp.V[:, :r] * np.sqrt(decomp.lambdas[:r])[None, :]
        # sanity: C C^T reproduces the kernel pseudoinverse action
        probe = rng.standard_normal(12)
        np.testing.assert_allclose(
            cfac @ (cfac.T @ probe), geom.apply_crkhs_pinv(probe),
            atol=1e-8 * np.abs(probe).max() * decomp.lambdas[0],
        )
        k = 6
        alpha, beta, u_ref, w_ref = classical_gkb(a @ cfac, b, k)
        factors = run_bidiag(geom, b, k)
        np.testing.assert_allclose(factors.alphas[: k + 1], alpha[: k + 1], rtol=1e-9)
        np.testing.assert_allclose(factors.betas[: k + 1], beta[: k + 1], rtol=1e-9)
        for i in range(k):
            np.testing.assert_allclose(factors.U[i], u_ref[i], atol=1e-8)
            np.testing.assert_allclose(
                factors.Z[i], cfac @ w_ref[i], atol=1e-7 * np.abs(factors.Z[i]).max()
            )

    def test_identity_metric_matches_classical_on_operator_itself(self, rng):
        a = rng.standard_normal((15, 8))
        b = rng.standard_normal(15)
        k = 5
        alpha, beta, u_ref, w_ref = classical_gkb(a, b, k)
        proc = BidiagProcess(DenseMap(a), b, keep_vectors=True)
        for _ in range(k):
            proc.advance()
        factors = proc.factors()
        np.testing.assert_allclose(factors.alphas[:k], alpha[:k], rtol=1e-11)
        np.testing.assert_allclose(factors.betas[:k], beta[:k], rtol=1e-11)
        for i in range(k):
            np.testing.assert_allclose(factors.Z[i], w_ref[i], atol=1e-10)


class TestStateManagement:
    def test_default_process_keeps_no_history(self):
        geom = toy_geom()
        proc = BidiagProcess(geom.linmap, np.array([1.0, 1.0]),
                             pinv_apply=geom.apply_crkhs_pinv)
        assert proc.keep_vectors is False
        proc.advance()
        assert len(proc.Z) == 0 and len(proc.U) == 1
        assert len(proc.alphas) == 2  # scalars always accumulate

    def test_reorthogonalize_implies_keeping_vectors(self):
        geom = toy_geom()
        proc = BidiagProcess(geom.linmap, np.array([1.0, 1.0]),
                             pinv_apply=geom.apply_crkhs_pinv, reorthogonalize=True)
        assert proc.keep_vectors is True

    def test_coupling_matrix_frozen_toy(self):
        geom = toy_geom()
        factors = run_bidiag(geom, np.array([1.0, 0.0]), 10)
        np.testing.assert_allclose(factors.bidiagonal_matrix(1), [[6.0], [0.0]], atol=1e-12)
