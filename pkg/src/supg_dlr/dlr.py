"""Low-rank state U Y^T, its tangent space in Dual-DO coordinates, the
orthogonal and oblique tangent projectors, and the diagnostics built on
them (local basis inverse constant, model-error estimate).

Full tensors have shape ``(n_interior, n_points)``: column l holds the FEM
coefficients of the field at collocation point l.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from .errors import DimensionError, RankDegeneracy
from .measure import StochasticModes, weighted_truncated_svd


@dataclass(frozen=True, eq=False)
class LowRankField:
    U: np.ndarray
    Y: StochasticModes

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        if U.ndim != 2 or U.shape[1] != self.Y.rank:
            raise DimensionError(
                f"U has shape {U.shape}, stochastic modes have rank {self.Y.rank}")
        object.__setattr__(self, "U", U)

    @classmethod
    def from_arrays(cls, U, Y, measure):
        return cls(U, StochasticModes(Y, measure))

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def measure(self):
        return self.Y.measure

    @property
    def weights(self):
        return self.Y.measure.weights

    def expand(self):
        return self.U @ self.Y.values.T


def expand(field):
    return field.expand()


@dataclass(frozen=True, eq=False)
class TangentVector:
    """dU Y^T + U dY^T with the Dual-DO constraint E[Y_i dY_j] = 0."""

    dU: np.ndarray
    dY: np.ndarray

    def full(self, field):
        return self.dU @ field.Y.values.T + field.U @ self.dY.T

    def constraint_residual(self, field):
        return float(np.max(np.abs(field.Y.values.T @ (field.weights[:, None] * self.dY)),
                            initial=0.0))


def truncate(tensor, rank, mass, measure):
    """Best rank-R LowRankField of a full tensor in the L2_mu(L2) norm."""
    U, Y, _ = weighted_truncated_svd(tensor, mass, measure, rank)
    return LowRankField(U, Y)


def _solve_small(W, rhs, what):
    try:
        cond = np.linalg.cond(W)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        raise RankDegeneracy(f"{what} is singular (condition number {cond:.3e})")
    return la.solve(W, rhs)


def _check_tensor(field, V):
    V = np.asarray(V, dtype=float)
    if V.shape != (field.U.shape[0], field.Y.values.shape[0]):
        raise DimensionError(
            f"tensor shape {V.shape} != {(field.U.shape[0], field.Y.values.shape[0])}")
    return V


def _project(field, V, gram_left):
    # dU from testing against v_h Y_j, dY from testing against U_j z then P_Y^perp
    V = _check_tensor(field, V)
    Y, m, U = field.Y.values, field.weights, field.U
    dU = V @ (m[:, None] * Y)
    GU = gram_left @ U
    W = U.T @ GU
    Z = _solve_small(W.T, (V.T @ GU).T, "physical mode Gram matrix W").T
    dY = Z - Y @ (Y.T @ (m[:, None] * Z))
    return TangentVector(dU, dY)


def project_tangent_orthogonal(field, V, mass):
    """L2_mu(L2)-orthogonal projection of V onto the tangent space at field."""
    return _project(field, V, mass)


def project_tangent_oblique(field, V, skew_mass):
    """Oblique projection P with (P V - V, H* w) = 0 for all tangent w.

    ``skew_mass`` is the matrix of (u, v + delta b v'); with delta = 0 it is
    the mass matrix and the projector is orthogonal.
    """
    return _project(field, V, skew_mass)


def oblique_adjoint(field, rho, ops):
    """L2_mu(L2)-adjoint of the oblique projector applied to rho."""
    Y, m, U = field.Y.values, field.weights, field.U
    MH = ops.skew_mass
    # W_H^{-1} U^T M rho with W_H = U^T M_H U
    coeff = _solve_small(U.T @ (MH @ U), (ops.mass @ U).T @ rho, "skewed mode Gram matrix")
    tail = coeff - (coeff @ (m[:, None] * Y)) @ Y.T
    return rho @ (m[:, None] * Y) @ Y.T + ops.spatial.solve_mass(MH @ (U @ tail))


def check_projector_bound(field, ops, n_samples=500, seed=0):
    """Largest ||P_{H*} v|| / ||v|| over random full tensors v."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        V = rng.standard_normal(field.expand().shape)
        PV = project_tangent_oblique(field, V, ops.skew_mass).full(field)
        worst = max(worst, ops.norm(PV) / ops.norm(V))
    return worst


class CLbi(NamedTuple):
    """Local basis inverse constant in both scalings.

    ``quotient`` bounds the Rayleigh quotient x^T S x / x^T M x;
    ``norm_scale`` = sqrt(quotient) bounds ||grad U Z^T|| / ||U Z^T||.
    """

    norm_scale: float
    quotient: float


def compute_c_lbi(U, spatial):
    """Largest generalized eigenvalue of the physical-mode stiffness/mass pair."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    S = U.T @ (spatial.stiffness @ U)
    Mn = U.T @ (spatial.mass @ U)
    try:
        lam = la.eigh(S, Mn, eigvals_only=True)
    except la.LinAlgError as exc:
        raise RankDegeneracy(f"physical-mode mass matrix is singular: {exc}") from exc
    lam_max = float(lam[-1])
    return CLbi(np.sqrt(lam_max), lam_max)


def estimate_model_error(u_hat, forcing, ops):
    """nu-hat = sup_v |a(u_hat, P_perp v) - (f, H P_perp v)| / ||v||.

    ``u_hat`` is the intermediate LowRankField U~^{n+1} (Y^n)^T and
    ``forcing`` the (N, N_C) load tensor (f, phi_i + delta b phi_i').
    """
    g = ops.apply(u_hat.expand()) - forcing
    rho = ops.spatial.solve_mass(g)  # Riesz representative in L2_mu(L2)
    return ops.norm(rho - oblique_adjoint(u_hat, rho, ops))
