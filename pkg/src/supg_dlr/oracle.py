"""Reference machinery: the manufactured solution, a full-tensor implicit
SUPG solver, the elliptic (Ritz) projection and best rank-R truncation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .dlr import LowRankField
from .errors import DerivationError, NumericalError
from .fem1d import l2_projection
from .measure import weighted_truncated_svd
from .supg import ProblemCoefficients

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ManufacturedProblem:
    """u(t, x, w) = exp(x sin(2 pi w (t + 1))) sin(2 pi x) on D = [0, 1].

    The reaction is c = 1 + w; f is chosen so that u solves the equation.
    """

    epsilon: float = 1e-8
    b: float = 1.0

    @staticmethod
    def _s(t, w):
        return np.sin(TWO_PI * w * (t + 1.0))

    @staticmethod
    def _s_t(t, w):
        return TWO_PI * w * np.cos(TWO_PI * w * (t + 1.0))

    def u(self, t, x, w):
        return np.exp(x * self._s(t, w)) * np.sin(TWO_PI * x)

    def u_t(self, t, x, w):
        return x * self._s_t(t, w) * self.u(t, x, w)

    def u_x(self, t, x, w):
        s = self._s(t, w)
        return np.exp(x * s) * (s * np.sin(TWO_PI * x) + TWO_PI * np.cos(TWO_PI * x))

    def u_xx(self, t, x, w):
        s = self._s(t, w)
        return np.exp(x * s) * ((s * s - TWO_PI ** 2) * np.sin(TWO_PI * x)
                                + 2.0 * TWO_PI * s * np.cos(TWO_PI * x))

    @staticmethod
    def c(x, w):
        return 1.0 + w + 0.0 * x

    def f(self, t, x, w):
        return (self.u_t(t, x, w) - self.epsilon * self.u_xx(t, x, w)
                + self.b * self.u_x(t, x, w) + self.c(x, w) * self.u(t, x, w))

    def u0(self, x, w):
        return self.u(0.0, x, w)

    def coefficients(self):
        return ProblemCoefficients(epsilon=self.epsilon, b=self.b, c=self.c,
                                   f=self.f, u0=self.u0)

    def cross_validate(self, n_t=20, n_x=20, n_w=5, step=1e-6, rtol=1e-6):
        """Compare the closed-form derivatives with central differences.

        Each derivative is differenced from the next lower closed form (u_xx
        from u_x), so the comparison is not swamped by cancellation. The
        tolerance is relative to the largest magnitude of that quantity on
        the grid. Raises DerivationError on mismatch.
        """
        t, x, w = np.meshgrid(np.linspace(0.0, 1.0, n_t), np.linspace(0.0, 1.0, n_x),
                              np.linspace(0.0, 1.0, n_w), indexing="ij")
        fd_t = (self.u(t + step, x, w) - self.u(t - step, x, w)) / (2 * step)
        fd_x = (self.u(t, x + step, w) - self.u(t, x - step, w)) / (2 * step)
        fd_xx = (self.u_x(t, x + step, w) - self.u_x(t, x - step, w)) / (2 * step)
        fd_f = (fd_t - self.epsilon * fd_xx + self.b * fd_x + self.c(x, w) * self.u(t, x, w))
        checks = {"u_t": (self.u_t(t, x, w), fd_t), "u_x": (self.u_x(t, x, w), fd_x),
                  "u_xx": (self.u_xx(t, x, w), fd_xx), "f": (self.f(t, x, w), fd_f)}
        worst = {}
        for name, (exact, approx) in checks.items():
            err = np.max(np.abs(exact - approx)) / np.max(np.abs(exact))
            worst[name] = float(err)
            if not err <= rtol:
                raise DerivationError(f"{name} disagrees with finite differences: {err:.2e}")
        return worst


def manufactured_rhs(t, x, w, problem=None):
    return (problem or ManufacturedProblem()).f(t, x, w)


def project_field(fn, space, spatial, measure):
    """Per-collocation-point L2 projection of fn(x, w) onto the FEM space."""
    table = space.error_quadrature()
    vals = np.broadcast_to(np.asarray(fn(table.x[..., None], measure.points[None, None, :]),
                                      dtype=float), table.x.shape + (measure.size,))
    return spatial.solve_mass(space.load_vector(vals, table))


def interpolate_field(fn, space, measure):
    """Nodal interpolation of fn(x, w) at the interior dofs, per point."""
    return np.asarray(fn(space.interior_coordinates[:, None], measure.points[None, :]),
                      dtype=float) + np.zeros((space.n_interior, measure.size))


def initial_field(coeffs, space, spatial, measure, rank, mode="svd"):
    """Rank-R initial state from u0: per-point projection (or nodal
    interpolation for ``mode="interp"``) followed by the weighted SVD."""
    if mode == "svd":
        C = project_field(coeffs.u0, space, spatial, measure)
    elif mode in ("interp", "interpolation"):
        C = interpolate_field(coeffs.u0, space, measure)
    else:
        raise ValueError(f"unknown initial-condition mode {mode!r}")
    U, Y, err = weighted_truncated_svd(C, spatial.mass, measure, rank)
    return LowRankField(U, Y), err


def full_tensor_solve(ops, grid, u0, rtol=1e-11):
    """Backward-Euler SUPG solve, independently at every collocation point.

    ``u0`` is the (N, N_C) initial tensor; returns the list of tensors at all
    grid times (including t = 0).
    """
    dt = grid.dt
    MH = ops.skew_mass
    lus = []
    systems = []
    for l in range(ops.n_points):
        S = (MH / dt + ops.system(l)).tocsc()
        systems.append(S)
        lus.append(spla.splu(S))
    u = np.array(u0, dtype=float)
    traj = [u.copy()]
    for t in grid.times[1:]:
        F = ops.forcing(t)
        rhs = MH @ u / dt + F
        new = np.empty_like(u)
        for l in range(ops.n_points):
            new[:, l] = lus[l].solve(rhs[:, l])
            res = np.linalg.norm(systems[l] @ new[:, l] - rhs[:, l])
            scale = max(np.linalg.norm(rhs[:, l]),
                        abs(systems[l]).max() * np.linalg.norm(new[:, l]))
            if scale > 0 and res > rtol * scale:
                raise NumericalError(f"full-tensor residual {res / scale:.2e} at point {l}")
        u = new
        traj.append(u.copy())
    return traj


def elliptic_projection(space, spatial, u, measure=None, rtol=1e-11):
    """Ritz projection: (grad(u - pi u), grad v) = 0 for all FEM v.

    ``u`` is either an interior coefficient array (returned unchanged up to
    round-off) or the callable derivative ``du/dx(x)`` -- or ``du/dx(x, w)``
    when ``measure`` is given, in which case one column per point is returned.
    """
    A = spatial.stiffness
    if callable(u):
        table = space.error_quadrature()
        if measure is None:
            vals = np.asarray(u(table.x), dtype=float)
        else:
            vals = np.broadcast_to(
                np.asarray(u(table.x[..., None], measure.points[None, None, :]), dtype=float),
                table.x.shape + (measure.size,))
        rhs = space.load_vector(vals, table, test_deriv=1)
    else:
        rhs = A @ np.asarray(u, dtype=float)
    proj = spla.splu(A.tocsc()).solve(rhs)
    res = np.linalg.norm(A @ proj - rhs)
    if res > rtol * max(np.linalg.norm(rhs), 1e-300):
        raise NumericalError(f"elliptic projection residual {res:.2e}")
    return proj


def best_truncation_error(problem, space, spatial, measure, rank, times):
    """Error of the best rank-R approximation of the projected exact solution.

    Returns ``(per_snapshot, accumulated)`` where accumulated is
    sqrt(sum_i dt_i e_i^2) over ``times[1:]``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    errs = []
    for t in times:
        C = project_field(lambda x, w: problem.u(t, x, w), space, spatial, measure)
        r = min(rank, *C.shape)
        _, _, err = weighted_truncated_svd(C, spatial.mass, measure, r)
        errs.append(err)
    errs = np.array(errs)
    if times.size > 1:
        accumulated = float(np.sqrt(np.sum(np.diff(times) * errs[1:] ** 2)))
    else:
        accumulated = float(errs[0])
    return errs, accumulated
