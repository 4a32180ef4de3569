"""Tests for spectral embedding, ridge basis learning and lasso coding."""

import itertools

import numpy as np
import pytest

from tetrolet_scc.coder import (
    AFFINITY_FLOOR,
    CoderConfig,
    ConceptBasis,
    ConvergenceError,
    encode_matrix,
    factorization_error,
    lasso_encode,
    learn_basis,
    project_test,
    spectral_embedding,
)


def _oracle_embedding(X, k, p):
    """Dense reference construction written independently of the library:
    double loops for the kNN affinity, explicit Laplacian, full eigh."""
    m = X.shape[1]
    d = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            d[i, j] = np.linalg.norm(X[:, i] - X[:, j])
    w = np.zeros((m, m))
    for i in range(m):
        order = [j for j in sorted(range(m), key=lambda j: (d[i, j], j)) if j != i]
        for j in order[:p]:
            w[i, j] = 1.0
            w[j, i] = 1.0
    for i in range(m):
        for j in range(m):
            if i != j:
                w[i, j] += AFFINITY_FLOOR
    deg = w.sum(axis=1)
    lap = np.eye(m) - w / np.sqrt(np.outer(deg, deg))
    vals, vecs = np.linalg.eigh(lap)
    return vals, vecs[:, 1 : 1 + k]


class TestSpectralEmbedding:
    def test_identical_columns_do_not_crash(self):
        X = np.ones((6, 8))
        y = spectral_embedding(X, CoderConfig(k=2))
        assert y.shape == (8, 2)
        assert np.all(np.isfinite(y))

    def test_two_clusters_separate_and_match_oracle(self):
        rng = np.random.default_rng(42)
        a = rng.normal(0.0, 0.1, size=(5, 50))
        b = rng.normal(8.0, 0.1, size=(5, 50))
        X = np.concatenate([a, b], axis=1)
        y = spectral_embedding(X, CoderConfig(k=1, graph_p=5))

        signs = np.sign(y[:, 0])
        assert np.all(signs[:50] == signs[0])
        assert np.all(signs[50:] == -signs[0])

        _, oracle = _oracle_embedding(X, 1, 5)
        assert np.allclose(np.abs(y[:, 0]), np.abs(oracle[:, 0]), atol=1e-8)

    def test_columns_orthonormal(self):
        rng = np.random.default_rng(1)
        X = rng.random((10, 40))
        y = spectral_embedding(X, CoderConfig(k=5))
        assert np.allclose(y.T @ y, np.eye(5), atol=1e-8)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        X = rng.random((8, 30))
        y1 = spectral_embedding(X, CoderConfig(k=3))
        perm = rng.permutation(30)
        y2 = spectral_embedding(X[:, perm], CoderConfig(k=3))
        assert np.allclose(y2, y1[perm], atol=1e-8)

    def test_k_too_large(self):
        X = np.random.default_rng(3).random((4, 10))
        with pytest.raises(ValueError):
            spectral_embedding(X, CoderConfig(k=10))

    def test_non_finite_rejected(self):
        X = np.ones((4, 10))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            spectral_embedding(X, CoderConfig(k=2))


def _ridge_objective_grad(X, Y, tau, U):
    return 2.0 * (X @ (X.T @ U) + tau * U - X @ Y)


class TestLearnBasis:
    def test_identity_design(self):
        rng = np.random.default_rng(4)
        Y = rng.random((6, 3))
        basis = learn_basis(np.eye(6), Y, tau=0.5)
        assert np.allclose(basis.U, Y / 1.5, atol=1e-12)

    def test_matches_gradient_descent_oracle(self):
        rng = np.random.default_rng(5)
        X = rng.random((20, 8))
        Y = rng.random((8, 3))
        tau = 0.1

        U = np.zeros((20, 3))
        lipschitz = 2.0 * (np.linalg.norm(X, 2) ** 2 + tau)
        step = 1.0 / lipschitz
        for _ in range(200_000):
            g = _ridge_objective_grad(X, Y, tau, U)
            U -= step * g
            if np.linalg.norm(g) < 1e-10:
                break

        basis = learn_basis(X, Y, tau)
        assert np.abs(basis.U - U).max() <= 1e-6

    def test_gradient_zero_at_solution(self):
        rng = np.random.default_rng(6)
        X = rng.random((15, 10))
        Y = rng.random((10, 4))
        basis = learn_basis(X, Y, tau=0.2)
        g = _ridge_objective_grad(X, Y, 0.2, basis.U)
        assert np.abs(g).max() <= 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            learn_basis(np.ones((5, 4)), np.ones((3, 2)), tau=0.1)

    def test_tau_positive_required(self):
        with pytest.raises(ValueError):
            learn_basis(np.ones((4, 4)), np.ones((4, 2)), tau=0.0)


def _orthant_oracle(U, x, rho):
    """Exhaustive lasso minimiser for small k: solve the smooth problem on
    every sign pattern and keep the best sign-feasible candidate."""
    k = U.shape[1]
    best_obj, best_a = 0.5 * float(x @ x), np.zeros(k)  # a = 0 candidate
    for signs in itertools.product((-1.0, 1.0), repeat=k):
        for active in itertools.chain.from_iterable(
            itertools.combinations(range(k), r) for r in range(1, k + 1)
        ):
            s = np.array([signs[j] for j in active])
            Us = U[:, active]
            try:
                a_s = np.linalg.solve(Us.T @ Us, Us.T @ x - rho * s)
            except np.linalg.LinAlgError:
                continue
            if np.any(np.sign(a_s) != s):
                continue
            a = np.zeros(k)
            a[list(active)] = a_s
            obj = 0.5 * np.sum((x - U @ a) ** 2) + rho * np.abs(a).sum()
            if obj < best_obj:
                best_obj, best_a = obj, a
    return best_a, best_obj


def _kkt_violation(U, x, a, rho):
    grad = U.T @ (x - U @ a)
    v = 0.0
    for j in range(a.size):
        if a[j] != 0.0:
            v = max(v, abs(grad[j] - rho * np.sign(a[j])))
        else:
            v = max(v, max(0.0, abs(grad[j]) - rho))
    return v


class TestLassoEncode:
    def test_rho_zero_is_least_squares(self):
        rng = np.random.default_rng(7)
        U = rng.random((10, 3))
        x = rng.random(10)
        a = lasso_encode(x, ConceptBasis(U, 0.1), rho=0.0, tol=1e-9)
        residual = x - U @ a
        assert np.abs(U.T @ residual).max() <= 1e-8

    def test_full_shrinkage_gives_zero(self):
        rng = np.random.default_rng(8)
        U = rng.random((10, 4))
        x = rng.random(10)
        rho = np.abs(U.T @ x).max()
        a = lasso_encode(x, ConceptBasis(U, 0.1), rho=rho)
        assert np.all(a == 0.0)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_matches_orthant_oracle_k3(self, seed):
        rng = np.random.default_rng(seed)
        U = rng.normal(size=(6, 3))
        x = rng.normal(size=6)
        rho = 0.3
        a = lasso_encode(x, ConceptBasis(U, 0.1), rho=rho, tol=1e-10)
        oracle_a, oracle_obj = _orthant_oracle(U, x, rho)
        obj = 0.5 * np.sum((x - U @ a) ** 2) + rho * np.abs(a).sum()
        assert obj <= oracle_obj + 1e-9
        assert np.abs(a - oracle_a).max() <= 1e-6

    def test_matches_orthant_oracle_k4(self):
        rng = np.random.default_rng(12)
        U = rng.normal(size=(8, 4))
        x = rng.normal(size=8)
        a = lasso_encode(x, ConceptBasis(U, 0.1), rho=0.15, tol=1e-10)
        oracle_a, _ = _orthant_oracle(U, x, 0.15)
        assert np.abs(a - oracle_a).max() <= 1e-6

    @pytest.mark.parametrize("seed", range(8))
    def test_kkt_conditions(self, seed):
        rng = np.random.default_rng(100 + seed)
        U = rng.normal(size=(12, 5))
        x = rng.normal(size=12)
        rho = rng.uniform(0.01, 0.5)
        tol = 1e-8
        a = lasso_encode(x, ConceptBasis(U, 0.1), rho=rho, tol=tol)
        assert _kkt_violation(U, x, a, rho) <= tol

    def test_nonconvergence_raises_with_diagnostics(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=10)
        U = np.stack([base + 1e-4 * rng.normal(size=10) for _ in range(4)], axis=1)
        x = rng.normal(size=10)
        with pytest.raises(ConvergenceError) as err:
            lasso_encode(x, ConceptBasis(U, 0.1), rho=1e-6, tol=1e-14, max_iter=2)
        assert err.value.kkt_violation > 0
        assert err.value.iterations == 2

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lasso_encode(np.ones(5), ConceptBasis(np.ones((4, 2)), 0.1), rho=0.1)


class TestEncodeMatrix:
    def test_representable_columns(self):
        rng = np.random.default_rng(10)
        U, _ = np.linalg.qr(rng.normal(size=(12, 3)))
        basis = ConceptBasis(U, 0.1)
        X = U * np.array([2.0, 3.0, 4.0])  # columns are scaled basis vectors
        errors = []
        for rho in (0.1, 0.01, 0.001):
            codes = encode_matrix(X, basis, CoderConfig(k=3, rho=rho))
            errors.append(factorization_error(X, basis, codes))
        assert errors == sorted(errors, reverse=True)
        assert errors[-1] <= 1e-2
        codes = encode_matrix(X, basis, CoderConfig(k=3, rho=1e-9))
        assert np.allclose(codes.A, np.diag([2.0, 3.0, 4.0]), atol=1e-6)

    def test_columns_encoded_independently(self):
        rng = np.random.default_rng(11)
        U = rng.normal(size=(9, 4))
        X = rng.normal(size=(9, 10))
        basis = ConceptBasis(U, 0.1)
        config = CoderConfig(k=4, rho=0.2)
        codes = encode_matrix(X, basis, config)
        for i in range(10):
            single = lasso_encode(X[:, i], basis, rho=0.2, tol=config.tol)
            assert np.allclose(codes.A[:, i], single, atol=1e-12)

    def test_sparsity_monotone_in_rho(self):
        rng = np.random.default_rng(13)
        U = rng.normal(size=(20, 6))
        X = rng.normal(size=(20, 15))
        basis = ConceptBasis(U, 0.1)
        fractions = []
        for rho in (0.01, 0.05, 0.2, 0.8, 2.0):
            codes = encode_matrix(X, basis, CoderConfig(k=6, rho=rho))
            fractions.append((np.abs(codes.A) < 1e-10).mean())
        assert fractions == sorted(fractions)

    def test_convergence_error_names_column(self):
        rng = np.random.default_rng(14)
        base = rng.normal(size=10)
        U = np.stack([base + 1e-5 * rng.normal(size=10) for _ in range(3)], axis=1)
        X = rng.normal(size=(10, 2))
        with pytest.raises(ConvergenceError, match="column"):
            encode_matrix(
                X, ConceptBasis(U, 0.1), CoderConfig(k=3, rho=1e-7, tol=1e-15, max_iter=1)
            )


class TestProjectTest:
    def test_zero_vector(self):
        basis = ConceptBasis(np.random.default_rng(15).random((6, 3)), 0.1)
        assert np.all(project_test(np.zeros(6), basis) == 0.0)

    def test_extracts_basis_rows(self):
        rng = np.random.default_rng(16)
        U = rng.random((5, 3))
        basis = ConceptBasis(U, 0.1)
        for d in range(5):
            e = np.zeros(5)
            e[d] = 1.0
            assert np.allclose(project_test(e, basis), U[d], atol=1e-15)

    def test_additive(self):
        rng = np.random.default_rng(17)
        U = rng.random((8, 4))
        basis = ConceptBasis(U, 0.1)
        x, y = rng.random(8), rng.random(8)
        lhs = project_test(x + y, basis)
        rhs = project_test(x, basis) + project_test(y, basis)
        assert np.abs(lhs - rhs).max() <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            project_test(np.ones(7), ConceptBasis(np.ones((6, 2)), 0.1))
