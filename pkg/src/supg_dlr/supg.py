"""SUPG stabilization: coefficients, choice of delta, per-collocation-point
system matrices, the SUPG norm and the coefficient-assumption checks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError, StabilizationError, ValidationError
from .fem1d import assemble


@dataclass(frozen=True)
class ProblemCoefficients:
    """Data of u_t - eps u'' + b u' + c u = f with homogeneous Dirichlet BCs.

    ``c(x, w)``, ``f(t, x, w)`` and ``u0(x, w)`` must broadcast over numpy
    arrays. ``c0`` / ``c_sup`` are the lower bound and sup of c; leave them as
    None to have them sampled by :meth:`with_sampled_bounds`.
    """

    epsilon: float
    b: float
    c: Callable
    f: Callable
    u0: Callable
    c0: Optional[float] = None
    c_sup: Optional[float] = None

    def sample_c(self, space, measure):
        x = space.quadrature().x[..., None]
        return np.broadcast_to(
            np.asarray(self.c(x, measure.points[None, None, :]), dtype=float),
            x.shape[:2] + (measure.size,))

    def with_sampled_bounds(self, space, measure):
        vals = self.sample_c(space, measure)
        return replace(
            self,
            c0=float(vals.min()) if self.c0 is None else self.c0,
            c_sup=float(np.abs(vals).max()) if self.c_sup is None else self.c_sup)


@dataclass(frozen=True)
class StabilizationParams:
    delta: float
    dt: float
    bound_reaction: float = np.inf
    bound_diffusion: float = np.inf
    bound_advection: float = np.inf
    bound_time: float = np.inf
    safety: float = 1.0

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigurationError("delta must be non-negative")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")

    @property
    def admissible(self):
        bounds = (self.bound_reaction, self.bound_diffusion,
                  self.bound_advection, self.bound_time)
        return all(self.delta <= bnd * (1 + 1e-14) for bnd in bounds)


def check_advection_dominated(h, coeffs):
    if not abs(coeffs.b) * h > 2 * coeffs.epsilon:
        raise ConfigurationError(
            f"advection-dominated check fails: |b| h = {abs(coeffs.b) * h:.3g} "
            f"is not > 2 eps = {2 * coeffs.epsilon:.3g}")


def select_delta(h, dt, coeffs, inverse_constant, safety=1.0):
    """Largest uniform delta allowed by coercivity and the stability bound,
    times a safety factor in (0, 1]."""
    check_advection_dominated(h, coeffs)
    if not 0 < safety <= 1:
        raise ConfigurationError(f"safety factor {safety} not in (0, 1]")
    if coeffs.c_sup is None:
        raise ConfigurationError("coefficients lack c_sup; call with_sampled_bounds")
    with np.errstate(divide="ignore"):
        reaction = 1.0 / (2.0 * coeffs.c_sup) if coeffs.c_sup > 0 else np.inf
        diffusion = (h * h / (2.0 * coeffs.epsilon * inverse_constant ** 2)
                     if coeffs.epsilon > 0 else np.inf)
        advection = h / (abs(coeffs.b) * inverse_constant)
    time = dt / 4.0
    delta = safety * min(reaction, diffusion, advection, time)
    return StabilizationParams(delta=delta, dt=dt, bound_reaction=reaction,
                               bound_diffusion=diffusion, bound_advection=advection,
                               bound_time=time, safety=safety)


@dataclass
class SupgOperators:
    """Per-collocation-point SUPG matrices sharing one sparsity pattern.

    The system matrix at point l is ``base + csr(reaction_data[l])`` where
    base = eps A + B + delta (S_bb - eps S_lap) and the reaction part is
    C_l + delta R_l. ``reaction_mass_data`` holds C_l alone (for the norm).
    """

    space: object
    spatial: object
    coeffs: ProblemCoefficients
    params: StabilizationParams
    measure: object
    base: sp.csr_matrix
    reaction_data: np.ndarray
    reaction_mass_data: np.ndarray
    skew_mass: sp.csr_matrix
    _row_sum: sp.csr_matrix = field(default=None, repr=False)

    def __post_init__(self):
        indptr, indices = self.space._pattern
        n = self.space.n_interior
        rows = np.repeat(np.arange(n), np.diff(indptr))
        self._cols = indices
        self._row_sum = sp.csr_matrix(
            (np.ones(rows.size), (rows, np.arange(rows.size))), shape=(n, rows.size))

    @property
    def n_interior(self):
        return self.space.n_interior

    @property
    def n_points(self):
        return self.measure.size

    @property
    def delta(self):
        return self.params.delta

    @property
    def mass(self):
        return self.spatial.mass

    def system(self, l):
        return self.base + self.space.csr(self.reaction_data[l])

    def reaction_mass(self, l):
        return self.space.csr(self.reaction_mass_data[l])

    def combined(self, weights):
        """sum_l weights[l] * A_l as one sparse matrix."""
        weights = np.asarray(weights, dtype=float)
        return weights.sum() * self.base + self.space.csr(weights @ self.reaction_data)

    def _pointwise(self, data, X):
        # column l of the result is csr(data[l]) @ X[:, l]; X may carry a middle axis
        X = np.asarray(X, dtype=float)
        gathered = X[self._cols]  # (nnz, ..., N_C)
        prod = gathered * data.T.reshape((data.shape[1],) + (1,) * (X.ndim - 2) + (data.shape[0],))
        flat = prod.reshape(prod.shape[0], -1)
        return (self._row_sum @ flat).reshape(X.shape)

    def apply(self, X):
        """Column-wise A_l X[:, l]; also accepts shape (N, R, N_C)."""
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n_interior or X.shape[-1] != self.n_points:
            raise DimensionError(f"tensor shape {X.shape} does not match operators")
        base = (self.base @ X.reshape(X.shape[0], -1)).reshape(X.shape)
        return base + self._pointwise(self.reaction_data, X)

    def apply_reaction_mass(self, X):
        return self._pointwise(self.reaction_mass_data, X)

    def bilinear(self, X, Z):
        """a_SUPG(X, Z) with trial X and test Z (full tensors)."""
        return float(np.einsum("il,il,l->", Z, self.apply(X), self.measure.weights))

    def inner(self, X, Z):
        """L2_mu(L2) inner product."""
        return float(np.einsum("il,il,l->", X, self.mass @ Z, self.measure.weights))

    def skew_pairing(self, X, Z):
        """(X, H Z) = (X, Z + delta b Z')."""
        return float(np.einsum("il,il,l->", Z, self.skew_mass @ X, self.measure.weights))

    def norm(self, X):
        return np.sqrt(max(self.inner(X, X), 0.0))

    def supg_norm_sq_per_point(self, X):
        sp_ops = self.spatial
        eps, delta = self.coeffs.epsilon, self.params.delta
        quad = (eps * np.einsum("il,il->l", X, sp_ops.stiffness @ X)
                + delta * np.einsum("il,il->l", X, sp_ops.streamline @ X)
                + np.einsum("il,il->l", X, self.apply_reaction_mass(X)))
        return quad

    def supg_norm(self, X):
        return float(np.sqrt(max(self.supg_norm_sq_per_point(X) @ self.measure.weights, 0.0)))

    def forcing(self, t):
        """Load vectors (f(t, ., w_l), phi_i + delta b phi_i'), shape (N, N_C)."""
        table = self.space.error_quadrature()
        fvals = self._sample_f(t, table)
        load = self.space.load_vector(fvals, table)
        if self.params.delta:
            load = load + self.params.delta * self.coeffs.b * \
                self.space.load_vector(fvals, table, test_deriv=1)
        return load

    def forcing_norm_sq(self, t):
        """||f(t)||^2 in L2_mu(L2), by quadrature of the closed form."""
        table = self.space.error_quadrature()
        fvals = self._sample_f(t, table)
        per_point = np.einsum("q,eql->l", table.weights, fvals ** 2)
        return float(per_point @ self.measure.weights)

    def _sample_f(self, t, table):
        x = table.x[..., None]
        return np.broadcast_to(
            np.asarray(self.coeffs.f(t, x, self.measure.points[None, None, :]), dtype=float),
            x.shape[:2] + (self.measure.size,))


def assemble_supg(space, coeffs, params, measure, spatial=None, n_check=20, seed=0,
                  check=True):
    """Build all per-collocation SUPG matrices and verify coercivity on
    random vectors (``n_check`` per collocation point)."""
    spatial = spatial or assemble(space, coeffs)
    eps, b, delta = coeffs.epsilon, coeffs.b, params.delta
    base = (eps * spatial.stiffness + spatial.convection
            + delta * (spatial.streamline - eps * spatial.laplace_streamline)).tocsr()
    table = space.quadrature()
    cvals = coeffs.sample_c(space, measure)  # (n_el, q, N_C)
    mass_local = np.einsum("q,eql,qa,qb->leab", table.weights, cvals, table.phi, table.phi)
    stream_local = b * np.einsum("q,eql,qa,qb->leab", table.weights, cvals,
                                 table.dphi, table.phi)
    reaction_mass_data = space.scatter(mass_local)
    reaction_data = reaction_mass_data + delta * space.scatter(stream_local)
    ops = SupgOperators(space=space, spatial=spatial, coeffs=coeffs, params=params,
                        measure=measure, base=base, reaction_data=reaction_data,
                        reaction_mass_data=reaction_mass_data,
                        skew_mass=spatial.skew_mass(delta))
    if check:
        check_coercivity(ops, n_check, seed)
    return ops


def check_coercivity(ops, n_samples=20, seed=0, rtol=1e-10):
    """Raise StabilizationError if v^T A_l v < 1/2 ||v||^2_SUPG,l for a sample."""
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((ops.n_interior, n_samples, ops.n_points))
    aVV = np.einsum("isl,isl->sl", V, ops.apply(V))
    norms = np.stack([ops.supg_norm_sq_per_point(V[:, s, :]) for s in range(n_samples)])
    bad = aVV < 0.5 * norms - rtol * norms
    if np.any(bad):
        l = int(np.nonzero(bad.any(axis=0))[0][0])
        raise StabilizationError(
            f"coercivity fails at collocation index {l}: "
            f"a(v,v) = {aVV[:, l].min():.3e} < 1/2 ||v||^2_SUPG")
    return float(np.min(aVV / norms))


def supg_norm(field, ops):
    """SUPG norm of a LowRankField or a full (N, N_C) tensor."""
    X = field.expand() if hasattr(field, "expand") else np.asarray(field, dtype=float)
    if X.shape != (ops.n_interior, ops.n_points):
        raise DimensionError(f"field shape {X.shape} does not match operators")
    return ops.supg_norm(X)


@dataclass
class CoefAReport:
    c0: float
    c_sup: float
    advection_ratio: float  # |b| h / (2 eps)
    div_b: float
    violations: list

    @property
    def passed(self):
        return not self.violations

    @property
    def c0_margin(self):
        return self.c0


def validate_coefa(coeffs, space, measure, raise_on_failure=True):
    """Sample c on every (quadrature point, collocation point) pair and check
    eps > 0, c >= c0 > 0, c bounded, advection dominance and div b = 0."""
    vals = coeffs.sample_c(space, measure)
    c0 = float(vals.min())
    c_sup = float(np.abs(vals).max())
    violations = []
    if not coeffs.epsilon > 0:
        violations.append(f"epsilon = {coeffs.epsilon} is not > 0")
    if not c0 > 0:
        violations.append(f"c0 > 0 fails: min c = {c0:.6g}")
    if coeffs.c0 is not None and c0 < coeffs.c0:
        violations.append(f"c >= c0 fails: min c = {c0:.6g} < declared {coeffs.c0}")
    if coeffs.c_sup is not None and c_sup > coeffs.c_sup:
        violations.append(f"c <= c_sup fails: max |c| = {c_sup:.6g} > declared {coeffs.c_sup}")
    if not np.isfinite(c_sup):
        violations.append("c is not bounded")
    with np.errstate(divide="ignore"):
        ratio = abs(coeffs.b) * space.h / (2 * coeffs.epsilon) if coeffs.epsilon > 0 else np.inf
    if not abs(coeffs.b) * space.h > 2 * coeffs.epsilon:
        violations.append(
            f"advection-dominated check fails: |b| h = {abs(coeffs.b) * space.h:.3g} "
            f"<= 2 eps = {2 * coeffs.epsilon:.3g}")
    report = CoefAReport(c0=c0, c_sup=c_sup, advection_ratio=ratio, div_b=0.0,
                         violations=violations)
    if violations and raise_on_failure:
        raise ValidationError(violations)
    return report
