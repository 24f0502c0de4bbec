"""Implicit splitting integrator for the SUPG-DLR system.

One step updates the physical modes (coupled block system of size N*R),
then the stochastic modes inside span(Y^n)^perp, then re-orthonormalizes
the stochastic modes. With ``coupling="implicit"`` (default) the two solves
are repeated until the physical solve sees the updated stochastic modes, so
that the step satisfies the discrete variational identity on the whole
tangent space at U~^{n+1} (Y^n)^T. ``coupling="splitting"`` performs a
single sweep in which the physical solve uses (Y^n) only.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dlr import LowRankField, compute_c_lbi, estimate_model_error
from .errors import ConfigurationError, DivergenceError, NumericalError, RankDegeneracy, \
    StabilityViolation
from .measure import orthogonal_complement, weighted_orthonormalize

log = logging.getLogger(__name__)

COUPLINGS = ("implicit", "splitting")


@dataclass(frozen=True)
class TimeGrid:
    t_final: float
    n_steps: int

    def __post_init__(self):
        if not self.t_final > 0:
            raise ConfigurationError("t_final must be positive")
        if self.n_steps < 1:
            raise ConfigurationError("need at least one time step")

    @classmethod
    def from_target_step(cls, t_final, dt_target):
        """Smallest number of uniform steps with dt <= dt_target."""
        return cls(t_final, max(1, math.ceil(t_final / dt_target - 1e-9)))

    @property
    def dt(self):
        return self.t_final / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.t_final, self.n_steps + 1)


@dataclass
class StepDiagnostics:
    lemma3_residual: float = 0.0
    prop1_residual: float = 0.0
    udY_norm: float = 0.0
    supg_norm_step: float = 0.0
    nu_hat: float = float("nan")
    reorth_T_condition: float = 1.0
    c_lbi: float = float("nan")
    c_lbi_quotient: float = float("nan")
    sweeps: int = 1


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite values in {what}")


def step_physical(field, ops, forcing, Y_trial=None, rtol=1e-10):
    """Solve for U~^{n+1}, the physical-mode update.

    For every j and interior basis function v:
        (U~_j - U_j^n, H v)/dt + a(U~ Y_trial^T, v Y_j^n) = (f^{n+1}, H v Y_j^n).
    ``Y_trial`` defaults to Y^n (plain splitting).
    """
    Y = field.Y.values
    Yt = Y if Y_trial is None else Y_trial
    m = field.weights
    R = field.rank
    dt = ops.params.dt
    MH = ops.skew_mass
    blocks = [[None] * R for _ in range(R)]
    for j in range(R):
        for k in range(R):
            blk = ops.combined(m * Y[:, j] * Yt[:, k])
            if j == k:
                blk = blk + MH / dt
            blocks[j][k] = blk
    system = sp.bmat(blocks, format="csc")
    rhs = (MH @ field.U) / dt + forcing @ (m[:, None] * Y)
    rhs_vec = rhs.T.ravel()
    try:
        sol = spla.splu(system).solve(rhs_vec)
    except RuntimeError as exc:
        raise NumericalError(f"physical-mode system is singular: {exc}") from exc
    _check_finite(sol, "physical-mode solve")
    res = np.linalg.norm(system @ sol - rhs_vec)
    scale = max(np.linalg.norm(rhs_vec), abs(system).max() * np.linalg.norm(sol))
    if scale > 0 and res > rtol * scale:
        raise NumericalError(f"physical-mode residual {res / scale:.2e} above {rtol}")
    return sol.reshape(R, -1).T


def mode_couplings(U_tilde, ops):
    """K[l, j, k] = U~_j^T A_l U~_k for every collocation point."""
    n_pts = ops.n_points
    AU = ops.apply(np.repeat(U_tilde[:, :, None], n_pts, axis=2))
    return np.einsum("ij,ikl->ljk", U_tilde, AU)


def step_stochastic(U_tilde, Y, ops, forcing, rtol=1e-10, return_workspace=False):
    """Solve for Y~^{n+1} = Y^n + dY with dY in span(Y^n)^perp.

    Enforces P_Y^perp [ dY W~ / dt + G(Y^n + dY) ] = 0 with
    G_{lj} = U~_j^T (A_l U~ (Y^n + dY)_l - F_l) and
    W~_{ij} = (U~_i, U~_j + delta b U~_j'). The constraint is imposed by
    substituting dY = Q alpha with Q a weighted-orthonormal basis of the
    complement, and testing with the same basis.
    """
    measure = ops.measure
    m = measure.weights
    n_pts, R = Y.shape
    dt = ops.params.dt
    W = U_tilde.T @ (ops.skew_mass.T @ U_tilde)  # W[i, j] = (U~_i, H U~_j)
    if np.linalg.cond(W) > 1e14:
        raise RankDegeneracy("W~ is singular: physical modes are linearly dependent")
    K = mode_couplings(U_tilde, ops)
    Fp = forcing.T @ U_tilde  # Fp[l, j] = U~_j^T F_l
    Q = orthogonal_complement(Y, measure)
    n_perp = Q.shape[1]
    if n_perp == 0:
        dY = np.zeros_like(Y)
    else:
        blocks = W.T[None, :, :] / dt + K  # (n_pts, R, R), acts on rows of dY
        b = np.einsum("ljk,lk->lj", K, Y) - Fp
        # reduced operator: alpha -> Q^T D [ block_l (Q alpha)_l ]
        QD = Q.T * m[None, :]
        # A_red[(p, j), (q, k)] = sum_l QD[p, l] blocks[l, j, k] Q[l, q]
        A_red = np.einsum("pl,ljk,lq->pjqk", QD, blocks, Q).reshape(n_perp * R, n_perp * R)
        rhs = -(QD @ b).ravel()
        try:
            alpha = la.solve(A_red, rhs)
        except la.LinAlgError as exc:
            raise RankDegeneracy(f"stochastic-mode system is singular: {exc}") from exc
        _check_finite(alpha, "stochastic-mode solve")
        res = np.linalg.norm(A_red @ alpha - rhs)
        scale = max(np.linalg.norm(rhs), np.abs(A_red).max() * np.linalg.norm(alpha))
        if scale > 0 and res > rtol * scale:
            raise NumericalError(f"stochastic-mode residual {res / scale:.2e} above {rtol}")
        dY = Q @ alpha.reshape(n_perp, R)
    Y_tilde = Y + dY
    if return_workspace:
        return Y_tilde, W
    return Y_tilde


def _tangent_test(g, U, Y, m, Q):
    """Residual functional sum_l m_l v_l^T g_l tested on the tangent basis at U Y^T."""
    r1 = g @ (m[:, None] * Y)
    r2 = (Q.T * m[None, :]) @ g.T @ U
    return np.concatenate([r1.ravel(), r2.ravel()])


def variational_residual(u_prev, u_next, U_tilde, Y, ops, forcing):
    """Relative residual of the discrete variational identity
    (u^{n+1} - u^n, H v)/dt + a(u^{n+1}, v) = (f^{n+1}, H v)
    over a basis of the tangent space at U~ Y^T."""
    m = ops.measure.weights
    dt = ops.params.dt
    Q = orthogonal_complement(Y, ops.measure)
    terms = [ops.skew_mass @ (u_next - u_prev) / dt, ops.apply(u_next), -forcing]
    tested = [_tangent_test(t, U_tilde, Y, m, Q) for t in terms]
    total = np.abs(sum(tested)).max(initial=0.0)
    scale = max(np.abs(t).max(initial=0.0) for t in tested)
    return total / scale if scale > 0 else total


def lemma3_residual(U_tilde, dY, u_star, ops, forcing):
    """|dt^-1 ||U~ dY^T||^2 + a(u*, U~ dY^T) - (f, H U~ dY^T)|, relative.

    Returns (relative residual, ||U~ dY^T||).
    """
    w = U_tilde @ dY.T
    m = ops.measure.weights
    t1 = ops.inner(w, w) / ops.params.dt
    t2 = ops.bilinear(u_star, w)
    t3 = float(np.einsum("il,il,l->", w, forcing, m))
    scale = max(abs(t1), abs(t2), abs(t3))
    res = abs(t1 + t2 - t3)
    return (res / scale if scale > 0 else res), np.sqrt(max(t1 * ops.params.dt, 0.0))


def step(field, ops, t_next, forcing=None, coupling="implicit", tol=1e-13,
         max_sweeps=100, diagnostics=True):
    """Advance one time step; returns (new LowRankField, StepDiagnostics)."""
    if coupling not in COUPLINGS:
        raise ConfigurationError(f"coupling must be one of {COUPLINGS}")
    F = ops.forcing(t_next) if forcing is None else forcing
    Y = field.Y.values
    Y_trial = Y
    prev = None
    last_change = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        U_tilde = step_physical(field, ops, F, Y_trial)
        Y_tilde = step_stochastic(U_tilde, Y, ops, F)
        if coupling == "splitting":
            break
        u_star = U_tilde @ Y_tilde.T
        if prev is not None:
            size = max(np.linalg.norm(u_star), np.finfo(float).tiny)
            change = np.linalg.norm(u_star - prev) / size
            # stop at tolerance, or once round-off stalls the contraction
            if change <= tol or (change >= 0.5 * last_change and change <= 1e-9):
                break
            last_change = change
        prev = u_star
        Y_trial = Y_tilde
    else:
        log.warning("coupled step stopped after %d sweeps without reaching tol %g",
                    max_sweeps, tol)
    new_modes, T = weighted_orthonormalize(Y_tilde, ops.measure)
    new = LowRankField(U_tilde @ T.T, new_modes)
    diag = StepDiagnostics(sweeps=sweeps)
    if diagnostics:
        u_star = U_tilde @ Y_tilde.T
        dY = Y_tilde - Y
        diag.lemma3_residual, diag.udY_norm = lemma3_residual(U_tilde, dY, u_star, ops, F)
        diag.prop1_residual = variational_residual(field.expand(), u_star, U_tilde, Y, ops, F)
        diag.supg_norm_step = ops.supg_norm(new.expand())
        diag.nu_hat = estimate_model_error(LowRankField.from_arrays(U_tilde, Y, ops.measure),
                                           F, ops)
        diag.reorth_T_condition = float(np.linalg.cond(T))
        c = compute_c_lbi(U_tilde, ops.spatial)
        diag.c_lbi, diag.c_lbi_quotient = c.norm_scale, c.quotient
    return new, diag


@dataclass
class RunResult:
    """Trajectory and per-step ledger of one run.

    ``stability_lhs[n]`` / ``stability_rhs[n]`` are both sides of the
    stability estimate for the prefix of n steps (index 0 is the initial
    state, where both sides equal ||u^0||^2).
    """

    times: np.ndarray
    states: list
    diagnostics: list
    stability_lhs: np.ndarray
    stability_rhs: np.ndarray
    coupling: str = "implicit"

    @property
    def stable(self):
        return bool(np.all(self.stability_lhs <= self.stability_rhs * (1 + 1e-12)))

    @property
    def final(self):
        return self.states[-1]

    def max_diagnostic(self, name):
        vals = [getattr(d, name) for d in self.diagnostics]
        return float(np.nanmax(vals)) if vals else float("nan")


def run(field0, grid, ops, coupling="implicit", strict=False, diagnostics=True,
        callback=None):
    """Iterate :func:`step` over ``grid`` and keep the stability ledger."""
    params = ops.params
    if abs(params.dt - grid.dt) > 1e-12 * grid.dt:
        raise ConfigurationError(f"operators built for dt={params.dt}, grid has dt={grid.dt}")
    if params.delta > params.dt / 4 * (1 + 1e-14):
        raise ConfigurationError(f"delta = {params.delta} exceeds dt/4 = {params.dt / 4}")
    c0 = ops.coeffs.c0
    if c0 is None or c0 <= 0:
        raise ConfigurationError("stability ledger needs c0 > 0 in the coefficients")
    dt = grid.dt
    times = grid.times
    states = [field0]
    diags = []
    norm0 = ops.norm(field0.expand()) ** 2
    lhs = [norm0]
    rhs = [norm0]
    supg_sum = 0.0
    f_sum = 0.0
    factor = dt * (4.0 / c0 + 4.0 * params.delta)
    u = field0
    for n in range(1, grid.n_steps + 1):
        u, d = step(u, ops, times[n], coupling=coupling, diagnostics=diagnostics)
        X = u.expand()
        supg_sum += dt * ops.supg_norm(X) ** 2
        f_sum += ops.forcing_norm_sq(times[n])
        lhs.append(ops.norm(X) ** 2 + supg_sum)
        rhs.append(norm0 + factor * f_sum)
        states.append(u)
        diags.append(d)
        if callback is not None:
            callback(n, u, d)
    result = RunResult(times=times, states=states, diagnostics=diags,
                       stability_lhs=np.array(lhs), stability_rhs=np.array(rhs),
                       coupling=coupling)
    if not result.stable:
        bad = int(np.argmax(result.stability_lhs > result.stability_rhs))
        msg = (f"stability estimate violated at step {bad}: "
               f"{result.stability_lhs[bad]:.6e} > {result.stability_rhs[bad]:.6e}")
        if strict:
            raise StabilityViolation(msg)
        log.warning(msg)
    return result
