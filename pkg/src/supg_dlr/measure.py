"""Discrete probability measure on collocation points and weighted linear
algebra in the stochastic direction.

A random variable is stored as its vector of values at the collocation
points; a family of R random variables is an ``(n_points, R)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionError, NumericalError, RankDegeneracy


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).ravel()
        weights = np.asarray(self.weights, dtype=float).ravel()
        if points.shape != weights.shape:
            raise DimensionError(
                f"{points.size} points but {weights.size} weights")
        if points.size == 0:
            raise DimensionError("measure needs at least one point")
        if np.any(weights <= 0):
            raise ValueError("collocation weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-14:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        if np.unique(points).size != points.size:
            raise ValueError("collocation points must be pairwise distinct")
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform_grid(cls, n):
        """Points ``i/n`` for ``i = 1..n`` with equal weights."""
        return cls(np.arange(1, n + 1) / n, np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.points.size

    def __len__(self):
        return self.points.size


@dataclass(frozen=True, eq=False)
class StochasticModes:
    """Stochastic modes Y_1..Y_R sampled on the collocation points."""

    values: np.ndarray
    measure: DiscreteMeasure

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != self.measure.size:
            raise DimensionError(
                f"modes have {values.shape[0]} rows, measure has "
                f"{self.measure.size} points")
        object.__setattr__(self, "values", values)

    @property
    def rank(self):
        return self.values.shape[1]

    def gram(self):
        return weighted_gram(self.values, self.measure)

    def is_orthonormal(self, tol=1e-12):
        return np.max(np.abs(self.gram() - np.eye(self.rank)), initial=0.0) <= tol


def _check_length(vec, measure, name):
    if vec.shape[0] != measure.size:
        raise DimensionError(
            f"{name} has length {vec.shape[0]}, expected {measure.size}")


def expectation(y, z, measure):
    """E[YZ] = sum_i m_i Y_i Z_i."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    _check_length(y, measure, "Y")
    _check_length(z, measure, "Z")
    return float(np.dot(measure.weights * y, z))


def weighted_gram(Y, measure):
    """Matrix of pairwise expectations E[Y_i Y_j] for the columns of Y."""
    Y = np.asarray(Y, dtype=float)
    _check_length(Y, measure, "Y")
    return Y.T @ (measure.weights[:, None] * Y)


def project_onto_span(Z, Y, measure):
    """P_Y Z = sum_i E[Z Y_i] Y_i, columnwise; Y must be orthonormal."""
    return Y @ (Y.T @ (measure.weights[:, None] * Z))


def project_complement(Z, Y, measure):
    """P_Y^perp Z = Z - P_Y Z, columnwise."""
    return Z - project_onto_span(Z, Y, measure)


def orthogonal_complement(Y, measure):
    """Weighted-orthonormal basis of span(Y)^perp.

    Returns an ``(n_points, n_points - R)`` matrix Q with ``Q^T diag(m) Q = I``
    and ``Y^T diag(m) Q = 0``. Y must already be orthonormal.
    """
    sqrt_m = np.sqrt(measure.weights)
    n, r = Y.shape
    if r >= n:
        return np.zeros((n, 0))
    q_full, _ = la.qr(sqrt_m[:, None] * Y, mode="full")
    return q_full[:, r:] / sqrt_m[:, None]


def weighted_orthonormalize(Y_tilde, measure, max_condition=1e12):
    """Weighted QR: ``Y_tilde = Y @ T`` with Y orthonormal under the measure.

    T is upper triangular with positive diagonal. Raises RankDegeneracy when
    the weighted Gram matrix of ``Y_tilde`` has condition number above
    ``max_condition``.
    """
    Y_tilde = np.atleast_2d(np.asarray(Y_tilde, dtype=float))
    _check_length(Y_tilde, measure, "Y_tilde")
    sqrt_m = np.sqrt(measure.weights)
    Q, T = la.qr(sqrt_m[:, None] * Y_tilde, mode="economic")
    signs = np.where(np.diag(T) < 0, -1.0, 1.0)
    Q = Q * signs
    T = signs[:, None] * T
    diag = np.diag(T)
    if np.any(diag == 0) or not np.all(np.isfinite(T)):
        bad = int(np.argmin(np.abs(diag)))
        raise RankDegeneracy(f"stochastic mode {bad} is linearly dependent")
    # Gram = T^T T, so its condition number is cond(T)^2
    sv = la.svdvals(T)
    cond_T = sv[0] / sv[-1]
    if cond_T > np.sqrt(max_condition):
        cond = cond_T ** 2 if cond_T < 1e150 else np.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(diag) / np.linalg.norm(T, axis=0)
        bad = int(np.argmin(rel))
        raise RankDegeneracy(
            f"weighted Gram condition number {cond:.3e} exceeds "
            f"{max_condition:.1e}; column {bad} is nearly dependent")
    Y = Q / sqrt_m[:, None]
    return StochasticModes(Y, measure), T


def weighted_truncated_svd(C, M_space, measure, rank):
    """Best rank-R approximation of C in the (M_space x diag(m)) norm.

    C has shape ``(n_space, n_points)``. Returns ``(U, modes, error)`` with
    ``C ~ U @ modes.values.T``, orthonormal stochastic modes, and the norm of
    the discarded tail.
    """
    C = np.asarray(C, dtype=float)
    _check_length(C.T, measure, "C columns")
    M_dense = M_space.toarray() if hasattr(M_space, "toarray") else np.asarray(M_space)
    if M_dense.shape != (C.shape[0], C.shape[0]):
        raise DimensionError("spatial Gram matrix does not match C")
    if not 0 < rank <= min(C.shape):
        raise DimensionError(f"rank {rank} outside 1..{min(C.shape)}")
    try:
        L = la.cholesky(M_dense, lower=True)
    except la.LinAlgError as exc:
        raise NumericalError(f"spatial Gram matrix is not SPD: {exc}") from exc
    sqrt_m = np.sqrt(measure.weights)
    C_hat = L.T @ C * sqrt_m[None, :]
    P, sigma, Qt = la.svd(C_hat, full_matrices=False)
    U = la.solve_triangular(L.T, P[:, :rank] * sigma[:rank], lower=False)
    Y = Qt[:rank].T / sqrt_m[:, None]
    error = float(np.sqrt(np.sum(sigma[rank:] ** 2)))
    return U, StochasticModes(Y, measure), error
