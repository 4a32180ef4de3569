"""Sparse concept coding of transform-coefficient feature vectors.

Training samples (columns of X) are embedded with the eigenvectors of a
nearest-neighbour graph Laplacian, a basis U is ridge-fit to reproduce that
embedding, and each sample is re-expressed as a sparse code by solving a
lasso against U.  Test vectors are projected linearly with U^T.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# Weak all-pairs affinity added to the neighbourhood graph so the Laplacian
# is defined even when the p-NN graph is disconnected or degenerate.
AFFINITY_FLOOR = 1e-6

# Dense eigendecomposition bound; past this the M x M Laplacian no longer
# fits comfortably in memory.
_MAX_DENSE_SAMPLES = 8192


class ConvergenceError(RuntimeError):
    """Lasso coordinate descent failed to reach the requested tolerance."""

    def __init__(self, message: str, *, kkt_violation: float, iterations: int):
        super().__init__(message)
        self.kkt_violation = kkt_violation
        self.iterations = iterations


@dataclass(frozen=True)
class CoderConfig:
    """Knobs for the embedding, ridge fit and lasso encoding."""

    k: int = 64
    tau: float = 0.1
    rho: float = 0.05
    graph_p: int = 5
    eig_threshold: float = 1.0 - 1e-9
    max_iter: int = 10_000
    tol: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"concept dimension k must be >= 1, got {self.k}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"ridge parameter tau must be > 0, got {self.tau}")
        if not (math.isfinite(self.rho) and self.rho >= 0):
            raise ValueError(f"lasso parameter rho must be >= 0, got {self.rho}")
        if self.graph_p < 1:
            raise ValueError(f"graph_p must be >= 1, got {self.graph_p}")
        if not (0 < self.eig_threshold <= 1):
            raise ValueError(
                f"eig_threshold must lie in (0, 1], got {self.eig_threshold}"
            )
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")


@dataclass
class ConceptBasis:
    """Ridge-learned basis mapping D-dim feature vectors to k concepts."""

    U: np.ndarray  # (D, k)
    tau: float

    @property
    def k(self) -> int:
        return self.U.shape[1]

    @property
    def dim(self) -> int:
        return self.U.shape[0]


@dataclass
class SparseCodes:
    A: np.ndarray  # (k, M)
    rho: float


def _as_feature_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D (D, M), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    return X


def _fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    # Largest-magnitude entry positive; first occurrence wins on ties.
    idx = np.abs(vectors).argmax(axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def spectral_embedding(X: np.ndarray, config: CoderConfig) -> np.ndarray:
    """Graph-Laplacian coordinates of the training samples.

    Builds a symmetric binary ``graph_p``-nearest-neighbour graph over the
    columns of X (plus the uniform affinity floor), and returns the
    eigenvectors of the symmetric-normalised Laplacian at the k smallest
    nontrivial eigenvalues as an (M, k) matrix.
    """
    X = _as_feature_matrix(X)
    m = X.shape[1]
    if m < config.k + 1:
        raise ValueError(
            f"need at least k+1 = {config.k + 1} samples for a k={config.k} "
            f"embedding, got {m}"
        )
    if m > _MAX_DENSE_SAMPLES:
        raise ValueError(
            f"{m} samples exceed the dense eigensolver limit of "
            f"{_MAX_DENSE_SAMPLES}; subsample the training set"
        )

    sq = np.einsum("dm,dm->m", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X.T @ X)
    np.fill_diagonal(d2, np.inf)

    p = min(config.graph_p, m - 1)
    w = np.zeros((m, m))
    # Stable argsort so distance ties resolve to the lowest sample index.
    order = np.argsort(d2, axis=1, kind="stable")[:, :p]
    rows = np.repeat(np.arange(m), p)
    w[rows, order.ravel()] = 1.0
    w = np.maximum(w, w.T)

    w += AFFINITY_FLOOR
    np.fill_diagonal(w, 0.0)

    deg = w.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(m) - (inv_sqrt[:, None] * w) * inv_sqrt[None, :]

    eigvals, eigvecs = np.linalg.eigh(lap)
    # Drop the trivial near-zero eigenvector, then cut the degenerate top
    # of the spectrum (eigenvalues of the normalised Laplacian lie in [0, 2]).
    eigvals, eigvecs = eigvals[1:], eigvecs[:, 1:]
    keep = eigvals <= config.eig_threshold * 2.0
    eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
    if eigvecs.shape[1] < config.k:
        raise ValueError(
            f"only {eigvecs.shape[1]} eigenvectors pass the spectrum cutoff, "
            f"need k={config.k}"
        )
    return _fix_eigenvector_signs(eigvecs[:, : config.k])


def learn_basis(X: np.ndarray, Y: np.ndarray, tau: float) -> ConceptBasis:
    """Closed-form ridge fit of the concept basis: (X X^T + tau I)^{-1} X Y."""
    X = _as_feature_matrix(X)
    Y = np.asarray(Y, dtype=float)
    if not (math.isfinite(tau) and tau > 0):
        raise ValueError(f"ridge parameter tau must be > 0, got {tau}")
    if Y.ndim != 2 or Y.shape[0] != X.shape[1]:
        raise ValueError(
            f"embedding shape {Y.shape} does not match {X.shape[1]} samples"
        )
    d = X.shape[0]
    gram = X @ X.T
    gram[np.diag_indices(d)] += tau
    u = np.linalg.solve(gram, X @ Y)
    return ConceptBasis(U=u, tau=float(tau))


def _cd_kernel(gram, target, rho, tol, max_iter):
    """Cyclic coordinate descent for 0.5*||x - U a||^2 + rho*|a|_1.

    Works on gram = U^T U and target = U^T x; returns (a, kkt_violation,
    sweeps, converged).  Convergence is measured directly as the largest
    KKT violation, so a returned solution is optimal to within tol.
    """
    k = target.shape[0]
    a = np.zeros(k)
    grad = target.copy()  # holds U^T (x - U a)
    viol = np.inf
    for sweep in range(max_iter):
        for j in range(k):
            gjj = gram[j, j]
            if gjj == 0.0:
                continue
            z = grad[j] + gjj * a[j]
            if z > rho:
                new = (z - rho) / gjj
            elif z < -rho:
                new = (z + rho) / gjj
            else:
                new = 0.0
            delta = new - a[j]
            if delta != 0.0:
                grad -= gram[j] * delta  # symmetric, so row j == column j
                a[j] = new
        viol = 0.0
        for j in range(k):
            if a[j] != 0.0:
                v = abs(grad[j] - rho * (1.0 if a[j] > 0 else -1.0))
            else:
                v = abs(grad[j]) - rho
                if v < 0.0:
                    v = 0.0
            if v > viol:
                viol = v
        if viol <= tol:
            return a, viol, sweep + 1, True
    return a, viol, max_iter, False


try:  # optional acceleration; the pure-numpy kernel is the fallback
    import numba

    _cd_kernel_fast = numba.njit(cache=False)(_cd_kernel)
except ImportError:  # pragma: no cover
    _cd_kernel_fast = _cd_kernel


def _encode_against_gram(gram, target, rho, tol, max_iter):
    a, viol, iters, converged = _cd_kernel_fast(
        np.ascontiguousarray(gram), np.ascontiguousarray(target),
        float(rho), float(tol), int(max_iter),
    )
    if not converged:
        raise ConvergenceError(
            f"lasso did not converge in {iters} sweeps "
            f"(KKT violation {viol:.3e} > tol {tol:.1e})",
            kkt_violation=float(viol),
            iterations=int(iters),
        )
    return a


def lasso_encode(
    x: np.ndarray,
    basis: ConceptBasis,
    rho: float = 0.05,
    tol: float = 1e-7,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Sparse code of one feature vector against the concept basis."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != basis.dim:
        raise ValueError(f"vector has dim {x.shape[0]}, basis expects {basis.dim}")
    if not (math.isfinite(rho) and rho >= 0):
        raise ValueError(f"lasso parameter rho must be >= 0, got {rho}")
    gram = basis.U.T @ basis.U
    target = basis.U.T @ x
    return _encode_against_gram(gram, target, rho, tol, max_iter)


def encode_matrix(
    X: np.ndarray, basis: ConceptBasis, config: CoderConfig
) -> SparseCodes:
    """Column-by-column lasso encoding of a feature matrix."""
    X = _as_feature_matrix(X)
    if X.shape[0] != basis.dim:
        raise ValueError(
            f"feature matrix has dim {X.shape[0]}, basis expects {basis.dim}"
        )
    gram = basis.U.T @ basis.U
    targets = basis.U.T @ X
    m = X.shape[1]
    codes = np.empty((basis.k, m))
    for i in range(m):
        try:
            codes[:, i] = _encode_against_gram(
                gram, targets[:, i], config.rho, config.tol, config.max_iter
            )
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"column {i}: {exc}",
                kkt_violation=exc.kkt_violation,
                iterations=exc.iterations,
            ) from exc
    result = SparseCodes(A=codes, rho=config.rho)
    logger.info(
        "encoded %d columns; factorization error ||X - UA||_F = %.6g",
        m,
        factorization_error(X, basis, result),
    )
    return result


def factorization_error(
    X: np.ndarray, basis: ConceptBasis, codes: SparseCodes
) -> float:
    return float(np.linalg.norm(X - basis.U @ codes.A))


def project_test(x: np.ndarray, basis: ConceptBasis) -> np.ndarray:
    """Linear projection of a test vector into concept space: U^T x."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != basis.dim:
        raise ValueError(f"vector has dim {x.shape[0]}, basis expects {basis.dim}")
    return basis.U.T @ x
