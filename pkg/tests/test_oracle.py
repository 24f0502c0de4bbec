import numpy as np
import pytest
import scipy.integrate as si
import sympy as sy

from conftest import build
from supg_dlr.fem1d import dense
from supg_dlr.measure import DiscreteMeasure
from supg_dlr.oracle import (ManufacturedProblem, best_truncation_error, elliptic_projection,
                             full_tensor_solve, initial_field, interpolate_field, manufactured_rhs,
                             project_field)
from supg_dlr.stepper import TimeGrid


def symbolic_rhs(eps, b):
    t, x, w = sy.symbols("t x w")
    u = sy.exp(x * sy.sin(2 * sy.pi * w * (t + 1))) * sy.sin(2 * sy.pi * x)
    f = sy.diff(u, t) - eps * sy.diff(u, x, 2) + b * sy.diff(u, x) + (1 + w) * u
    return sy.lambdify((t, x, w), f, "numpy"), sy.lambdify((t, x, w), u, "numpy")


@pytest.mark.parametrize("eps, b", [(1e-8, 1.0), (0.3, -2.0)])
def test_rhs_matches_symbolic_differentiation(eps, b):
    prob = ManufacturedProblem(epsilon=eps, b=b)
    f_sym, u_sym = symbolic_rhs(eps, b)
    t, x, w = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 1, 11), np.linspace(0, 1, 5))
    np.testing.assert_allclose(prob.f(t, x, w), f_sym(t, x, w), rtol=1e-12, atol=1e-11)
    np.testing.assert_allclose(prob.u(t, x, w), u_sym(t, x, w), rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(manufactured_rhs(t, x, w, prob), prob.f(t, x, w))


def test_finite_difference_cross_check():
    worst = ManufacturedProblem().cross_validate(n_t=20, n_x=20, n_w=5)
    assert max(worst.values()) <= 1e-6


def test_boundary_values_vanish():
    prob = ManufacturedProblem()
    t, w = np.meshgrid(np.linspace(0, 2, 30), np.linspace(0, 1, 15))
    assert np.abs(prob.u(t, 0.0, w)).max() == 0
    assert np.abs(prob.u(t, 1.0, w)).max() < 1e-14


def test_reaction_is_one_plus_w():
    assert ManufacturedProblem.c(0.3, 0.4) == pytest.approx(1.4)


def test_full_tensor_solver_single_point_dense_oracle(rng):
    ops = build(1, 8, 3, dt=0.1)
    grid = TimeGrid(0.3, 3)
    u0 = rng.normal(size=(ops.n_interior, 3))
    traj = full_tensor_solve(ops, grid, u0)
    MH = dense(ops.skew_mass)
    for l in range(3):
        u = u0[:, l]
        S = MH / grid.dt + dense(ops.system(l))
        for n, t in enumerate(grid.times[1:], 1):
            u = np.linalg.solve(S, MH @ u / grid.dt + ops.forcing(t)[:, l])
            np.testing.assert_allclose(traj[n][:, l], u, rtol=1e-10, atol=1e-12)


def test_elliptic_projection(rng):
    ops = build(2, 10, 3)
    v = rng.normal(size=ops.n_interior)
    np.testing.assert_allclose(elliptic_projection(ops.space, ops.spatial, v), v, atol=1e-12)
    # Ritz projection of sin(pi x): gradients of the error are orthogonal to the space
    p = elliptic_projection(ops.space, ops.spatial, lambda x: np.pi * np.cos(np.pi * x))
    exact = ops.space.interpolate(lambda x: np.sin(np.pi * x))
    assert np.abs(p - exact).max() < 1e-4
    mu = DiscreteMeasure.uniform_grid(3)
    cols = elliptic_projection(ops.space, ops.spatial,
                               lambda x, w: (1 + w) * np.pi * np.cos(np.pi * x), measure=mu)
    np.testing.assert_allclose(cols[:, 1], p * (1 + mu.points[1]), rtol=1e-12)


def test_projection_and_interpolation_of_separable_field():
    ops = build(2, 8, 4)
    fn = lambda x, w: x * (1 - x) * (1 + w)
    P = project_field(fn, ops.space, ops.spatial, ops.measure)
    I = interpolate_field(fn, ops.space, ops.measure)
    np.testing.assert_allclose(P, I, atol=1e-13)  # quadratic lies in the P2 space


def test_initial_field_modes():
    ops = build(1, 16, 15)
    field, err = initial_field(ops.coeffs, ops.space, ops.spatial, ops.measure, 3)
    assert field.Y.is_orthonormal(1e-12) and field.rank == 3 and err > 0
    full, err_full = initial_field(ops.coeffs, ops.space, ops.spatial, ops.measure, 15)
    assert err_full < 1e-12
    with pytest.raises(ValueError):
        initial_field(ops.coeffs, ops.space, ops.spatial, ops.measure, 3, mode="bogus")


def test_best_truncation_error_behaviour():
    ops = build(1, 16, 15)
    prob = ManufacturedProblem()
    errs = [best_truncation_error(prob, ops.space, ops.spatial, ops.measure, r, [0.2])[0][0]
            for r in range(1, 16)]
    assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-12
    per, acc = best_truncation_error(prob, ops.space, ops.spatial, ops.measure, 1, [0, 0.1, 0.2])
    assert acc == pytest.approx(np.sqrt(0.1 * per[1] ** 2 + 0.1 * per[2] ** 2))


def test_exact_rank_of_final_snapshot():
    # at t = 1/2 sin(3 pi w) takes five distinct values on w = i/15, so rank 5 is exact
    ops = build(1, 16, 15)
    prob = ManufacturedProblem()
    e4, e5 = (best_truncation_error(prob, ops.space, ops.spatial, ops.measure, r, [0.5])[0][0]
              for r in (4, 5))
    assert e4 > 1e-6 and e5 < 1e-12


def test_l2_norm_of_exact_solution_by_adaptive_quadrature():
    prob = ManufacturedProblem()
    ref = si.quad(lambda x: prob.u(0.5, x, 0.4) ** 2, 0, 1, epsabs=1e-14)[0]
    ops = build(2, 64, 3)
    t = ops.space.error_quadrature()
    ours = np.einsum("q,eq->", t.weights, prob.u(0.5, t.x, 0.4) ** 2)
    assert ours == pytest.approx(ref, rel=1e-8)
