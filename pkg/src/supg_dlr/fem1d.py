"""Continuous Lagrange finite elements of degree 1 or 2 on a uniform 1D mesh.

Dirichlet conditions are imposed by elimination: every matrix and
coefficient vector lives on the interior degrees of freedom only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DimensionError, NumericalError


def gauss_legendre(n_points):
    """Gauss-Legendre nodes and weights on the reference interval [0, 1]."""
    xi, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (xi + 1.0), 0.5 * w


@dataclass(frozen=True)
class Mesh1D:
    left: float = 0.0
    right: float = 1.0
    n_elements: int = 16

    def __post_init__(self):
        if self.n_elements < 1:
            raise ConfigurationError("mesh needs at least one element")
        if not self.right > self.left:
            raise ConfigurationError("interval must have positive length")

    @property
    def h(self):
        return (self.right - self.left) / self.n_elements

    @cached_property
    def nodes(self):
        return np.linspace(self.left, self.right, self.n_elements + 1)


@dataclass(frozen=True)
class QuadratureTable:
    """Basis data at the quadrature points of every element.

    ``x`` has shape ``(n_elements, q)``; ``weights`` already include the
    Jacobian ``h``; ``phi``, ``dphi``, ``d2phi`` have shape ``(q, k + 1)`` and
    are derivatives with respect to the physical coordinate.
    """

    x: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray


def _reference_basis(degree, xi, deriv=0):
    nodes = np.linspace(0.0, 1.0, degree + 1)
    vander = np.vander(nodes, degree + 1, increasing=True)
    coeffs = np.linalg.inv(vander)  # column a: monomial coefficients of basis a
    out = np.empty((xi.size, degree + 1))
    for a in range(degree + 1):
        poly = np.polynomial.Polynomial(coeffs[:, a]).deriv(deriv) if deriv else \
            np.polynomial.Polynomial(coeffs[:, a])
        out[:, a] = poly(xi)
    return out


class LagrangeSpace:
    """Degree-k continuous Lagrange space with homogeneous Dirichlet data."""

    def __init__(self, mesh, degree=1):
        if degree not in (1, 2):
            raise ConfigurationError(f"unsupported degree {degree}; use 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.n_dofs_total = degree * mesh.n_elements + 1
        self.interior_dofs = np.arange(1, self.n_dofs_total - 1)
        self.dof_coordinates = np.linspace(mesh.left, mesh.right, self.n_dofs_total)
        self.cell_dofs = (degree * np.arange(mesh.n_elements)[:, None]
                          + np.arange(degree + 1)[None, :])
        self._tables = {}
        self._build_pattern()

    @property
    def h(self):
        return self.mesh.h

    @property
    def n_interior(self):
        return self.n_dofs_total - 2

    @property
    def interior_coordinates(self):
        return self.dof_coordinates[1:-1]

    def quadrature(self, n_points=None):
        """Quadrature table; defaults to k + 2 Gauss points per element."""
        q = self.degree + 2 if n_points is None else n_points
        if q not in self._tables:
            xi, w = gauss_legendre(q)
            h = self.h
            x = self.mesh.nodes[:-1, None] + h * xi[None, :]
            self._tables[q] = QuadratureTable(
                x=x, weights=h * w,
                phi=_reference_basis(self.degree, xi),
                dphi=_reference_basis(self.degree, xi, 1) / h,
                d2phi=_reference_basis(self.degree, xi, 2) / h ** 2)
        return self._tables[q]

    def error_quadrature(self):
        """Quadrature exact to order 2k + 5, used for norms against closed forms."""
        return self.quadrature(self.degree + 3)

    def _build_pattern(self):
        nloc = self.degree + 1
        rows = np.repeat(self.cell_dofs, nloc, axis=1).ravel() - 1
        cols = np.tile(self.cell_dofs, (1, nloc)).ravel() - 1
        keep = (rows >= 0) & (rows < self.n_interior) & (cols >= 0) & (cols < self.n_interior)
        n = self.n_interior
        template = sp.csr_matrix(
            (np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n))
        template.sum_duplicates()
        template.sort_indices()
        lookup = template.copy()
        lookup.data = np.arange(lookup.nnz, dtype=float)
        lookup_dense = lookup.toarray().astype(np.int64)
        positions = lookup_dense[rows[keep], cols[keep]]
        self._keep = keep
        self._pattern = (template.indptr.copy(), template.indices.copy())
        # maps element-local entries to csr data slots
        self._scatter = sp.csr_matrix(
            (np.ones(positions.size), (positions, np.arange(positions.size))),
            shape=(template.nnz, positions.size))

    @property
    def nnz(self):
        return self._scatter.shape[0]

    def scatter(self, local):
        """Sum element matrices into csr data arrays sharing one pattern.

        ``local`` has shape ``(..., n_elements, k+1, k+1)`` with the first
        local index the test function. Returns data of shape ``(..., nnz)``.
        """
        lead = local.shape[:-3]
        flat = local.reshape(lead + (-1,))[..., self._keep]
        return (self._scatter @ flat.reshape(-1, flat.shape[-1]).T).T.reshape(lead + (self.nnz,))

    def csr(self, data):
        indptr, indices = self._pattern
        n = self.n_interior
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))

    def assemble_local(self, local):
        return self.csr(self.scatter(local))

    def full_vector(self, coeffs):
        """Pad interior coefficients with zero boundary values (leading axis)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.n_interior:
            raise DimensionError(
                f"expected {self.n_interior} interior coefficients, got {coeffs.shape[0]}")
        pad = np.zeros((1,) + coeffs.shape[1:])
        return np.concatenate([pad, coeffs, pad], axis=0)

    def evaluate(self, coeffs, table=None, deriv=0):
        """Values at quadrature points, shape ``(n_elements, q) + coeffs.shape[1:]``."""
        table = table or self.error_quadrature()
        basis = (table.phi, table.dphi, table.d2phi)[deriv]
        local = self.full_vector(coeffs)[self.cell_dofs]  # (n_el, nloc, ...)
        return np.einsum("qa,ea...->eq...", basis, local)

    def load_vector(self, values, table, test_deriv=0):
        """Integrals of ``values`` against interior basis functions.

        ``values`` has shape ``(n_elements, q, ...)``; returns ``(n_interior, ...)``.
        """
        basis = table.phi if test_deriv == 0 else table.dphi
        local = np.einsum("q,qa,eq...->ea...", table.weights, basis, values)
        out = np.zeros((self.n_dofs_total,) + values.shape[2:])
        np.add.at(out, self.cell_dofs, local)
        return out[1:-1]

    def interpolate(self, fn):
        """Nodal interpolant of ``fn(x)`` at interior dofs."""
        return np.asarray(fn(self.interior_coordinates), dtype=float)


@dataclass
class SpatialOperators:
    """Deterministic matrices on interior dofs (row index = test function).

    mass (u, v); stiffness (u', v'); convection (b u', v);
    streamline (b u', b v'); mass_streamline (u, b v');
    laplace_streamline sum_K (u'', b v')_K.
    """

    space: LagrangeSpace
    b: float
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    convection: sp.csr_matrix
    streamline: sp.csr_matrix
    mass_streamline: sp.csr_matrix
    laplace_streamline: sp.csr_matrix
    _mass_lu: object = field(default=None, repr=False)

    def skew_mass(self, delta):
        """Matrix of the pairing (u, v + delta b v')."""
        return (self.mass + delta * self.mass_streamline).tocsr()

    def solve_mass(self, rhs):
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass.tocsc())
        return self._mass_lu.solve(np.asarray(rhs, dtype=float))


def assemble(space, coeffs):
    """Assemble the deterministic SUPG building blocks for constant advection."""
    if space.degree not in (1, 2):
        raise ConfigurationError(f"unsupported degree {space.degree}")
    b = float(coeffs.b)
    t = space.quadrature()
    w = t.weights

    def block(test, trial):
        loc = np.einsum("q,qa,qb->ab", w, test, trial)
        return np.broadcast_to(loc, (space.mesh.n_elements,) + loc.shape)

    return SpatialOperators(
        space=space, b=b,
        mass=space.assemble_local(block(t.phi, t.phi)),
        stiffness=space.assemble_local(block(t.dphi, t.dphi)),
        convection=space.assemble_local(b * block(t.phi, t.dphi)),
        streamline=space.assemble_local(b * b * block(t.dphi, t.dphi)),
        mass_streamline=space.assemble_local(b * block(t.dphi, t.phi)),
        laplace_streamline=space.assemble_local(b * block(t.dphi, t.d2phi)),
    )


def estimate_inverse_constant(space, operators=None, rtol=1e-10, max_iter=200_000, seed=0):
    """C_I = h sqrt(lambda_max) for the pencil (stiffness, mass), by power iteration."""
    ops = operators or assemble(space, _UnitAdvection)
    A = ops.stiffness
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(space.n_interior)
    v /= np.sqrt(v @ (ops.mass @ v))
    lam = 0.0
    for _ in range(max_iter):
        w = ops.solve_mass(A @ v)
        lam_new = v @ (A @ v)  # Rayleigh quotient, v is M-normalized
        v = w / np.sqrt(w @ (ops.mass @ w))
        if lam_new > 0 and abs(lam_new - lam) <= rtol * lam_new:
            return space.h * np.sqrt(lam_new)
        lam = lam_new
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


class _UnitAdvection:
    b = 1.0


def weighted_norm(v, gram):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != gram.shape[0]:
        raise DimensionError(f"vector length {v.shape[0]} != {gram.shape[0]}")
    return float(np.sqrt(max(v @ (gram @ v), 0.0)))


def l2_norm(operators, v):
    return weighted_norm(v, operators.mass)


def h1_seminorm(operators, v):
    return weighted_norm(v, operators.stiffness)


def evaluate_against_analytic(space, coeffs, fn=None, deriv=0):
    """L2(D) norm of the deriv-th derivative of the FEM function minus ``fn``.

    ``fn`` takes an array of points; ``None`` means the zero function.
    """
    table = space.error_quadrature()
    vals = space.evaluate(coeffs, table, deriv)
    if fn is not None:
        vals = vals - np.asarray(fn(table.x), dtype=float)
    return float(np.sqrt(np.einsum("q,eq->", table.weights, vals ** 2)))


def l2_projection(space, operators, fn):
    """L2 projection of ``fn(x)`` onto the interior space."""
    table = space.error_quadrature()
    rhs = space.load_vector(np.asarray(fn(table.x), dtype=float), table)
    return operators.solve_mass(rhs)


def dense(mat):
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)


def generalized_eigvals(A, M):
    """Dense generalized eigenvalues of a symmetric pencil, ascending."""
    return la.eigh(dense(A), dense(M), eigvals_only=True)
