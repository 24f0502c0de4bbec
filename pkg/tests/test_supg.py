import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import build, random_coefficients
from supg_dlr.errors import ConfigurationError, DimensionError, StabilizationError, ValidationError
from supg_dlr.fem1d import LagrangeSpace, Mesh1D, dense, estimate_inverse_constant
from supg_dlr.measure import DiscreteMeasure
from supg_dlr.oracle import ManufacturedProblem
from supg_dlr.dlr import LowRankField
from supg_dlr.measure import weighted_orthonormalize
from supg_dlr.supg import (ProblemCoefficients, StabilizationParams, assemble_supg, check_coercivity, select_delta,
                           supg_norm, validate_coefa)


def quad_form(ops, u, v, l):
    """a_SUPG(u, v) at collocation index l by direct quadrature."""
    space, co, delta = ops.space, ops.coeffs, ops.params.delta
    t = space.error_quadrature()
    U = [space.evaluate(u, t, d) for d in range(3)]
    V = [space.evaluate(v, t, d) for d in range(2)]
    c = co.c(t.x, ops.measure.points[l])
    integrand = (co.epsilon * U[1] * V[1] + co.b * U[1] * V[0] + c * U[0] * V[0]
                 + delta * (-co.epsilon * U[2] + co.b * U[1] + c * U[0]) * co.b * V[1])
    return np.einsum("q,eq->", t.weights, integrand)


def const_coeffs(eps=1e-8, b=1.0, c=1.0):
    return ProblemCoefficients(epsilon=eps, b=b, c=lambda x, w: c + 0 * x * w,
                               f=lambda t, x, w: 0 * x * w, u0=lambda x, w: 0 * x * w)


def test_select_delta_takes_minimum_of_bounds():
    co = const_coeffs(eps=1e-3, b=2.0)
    co = ProblemCoefficients(**{**co.__dict__, "c0": 1.0, "c_sup": 4.0})
    h, dt, ci = 0.1, 1.0, 3.0
    p = select_delta(h, dt, co, ci)
    bounds = [1 / 8, h * h / (2e-3 * 9), h / (2 * 3), dt / 4]
    assert p.delta == pytest.approx(min(bounds))
    assert p.delta == pytest.approx(1 / 60)
    assert p.admissible
    assert select_delta(h, 0.01, co, ci).delta == pytest.approx(0.0025)
    assert select_delta(h, dt, co, ci, safety=0.5).delta == pytest.approx(1 / 120)
    with pytest.raises(ConfigurationError):
        select_delta(h, dt, co, ci, safety=1.5)


def test_diffusion_dominated_mesh_rejected():
    co = ProblemCoefficients(**{**const_coeffs(eps=1.0).__dict__, "c0": 1.0, "c_sup": 1.0})
    with pytest.raises(ConfigurationError):
        select_delta(0.1, 0.1, co, 3.0)


def test_validate_coefa_default_problem():
    mu = DiscreteMeasure.uniform_grid(15)
    space = LagrangeSpace(Mesh1D(0, 1, 16), 1)
    rep = validate_coefa(ManufacturedProblem().coefficients(), space, mu)
    assert rep.passed and rep.c0 >= 1 + 1 / 15 - 1e-14 and rep.c_sup == pytest.approx(2.0)


@pytest.mark.parametrize("coeffs, fragment", [
    (const_coeffs(c=0.0), "c0"),
    (const_coeffs(eps=1.0), "advection"),
])
def test_validate_coefa_reports_violations(coeffs, fragment):
    mu = DiscreteMeasure.uniform_grid(3)
    space = LagrangeSpace(Mesh1D(0, 1, 10), 1)
    with pytest.raises(ValidationError) as info:
        validate_coefa(coeffs, space, mu)
    assert any(fragment in v for v in info.value.violations)
    assert not validate_coefa(coeffs, space, mu, raise_on_failure=False).passed


def test_stabilization_off_leaves_galerkin_matrix():
    mu = DiscreteMeasure.uniform_grid(3)
    space = LagrangeSpace(Mesh1D(0, 1, 6), 2)
    co = ProblemCoefficients(epsilon=1.0, b=1.0, c=lambda x, w: 0 * x, f=None, u0=None,
                             c0=1.0, c_sup=0.0)
    ops = assemble_supg(space, co, StabilizationParams(0.0, 0.1), mu, check=False)
    sp_ops = ops.spatial
    for l in range(3):
        np.testing.assert_allclose(dense(ops.system(l)),
                                   dense(sp_ops.stiffness + sp_ops.convection), atol=1e-12)


@pytest.mark.parametrize("degree", [1, 2])
def test_system_matches_quadrature_loop(degree, rng):
    ops = build(degree, 6, 5, dt=0.2, coeffs=ManufacturedProblem(epsilon=1e-3).coefficients())
    n = ops.n_interior
    for l in range(ops.n_points):
        u, v = rng.normal(size=n), rng.normal(size=n)
        assert v @ ops.system(l) @ u == pytest.approx(quad_form(ops, u, v, l), rel=1e-12,
                                                     abs=1e-12)


def test_p1_has_no_second_derivative_term():
    a = build(1, 8, 3, coeffs=ManufacturedProblem(epsilon=1e-3).coefficients())
    assert abs(dense(a.spatial.laplace_streamline)).max() == 0


def test_apply_and_bilinear_match_per_point_loops(ops_p1, rng):
    X = rng.normal(size=(ops_p1.n_interior, ops_p1.n_points))
    Z = rng.normal(size=X.shape)
    AX = np.column_stack([ops_p1.system(l) @ X[:, l] for l in range(ops_p1.n_points)])
    np.testing.assert_allclose(ops_p1.apply(X), AX, rtol=1e-13, atol=1e-12)
    expected = sum(m * Z[:, l] @ AX[:, l] for l, m in enumerate(ops_p1.measure.weights))
    assert ops_p1.bilinear(X, Z) == pytest.approx(expected, rel=1e-12)
    stacked = rng.normal(size=(ops_p1.n_interior, 3, ops_p1.n_points))
    np.testing.assert_allclose(ops_p1.apply(stacked)[:, 1], ops_p1.apply(stacked[:, 1]),
                               rtol=1e-13, atol=1e-12)
    with pytest.raises(DimensionError):
        ops_p1.apply(np.ones((3, 3)))


def test_combined_is_weighted_sum(ops_p2, rng):
    w = rng.normal(size=ops_p2.n_points)
    expected = sum(wl * dense(ops_p2.system(l)) for l, wl in enumerate(w))
    np.testing.assert_allclose(dense(ops_p2.combined(w)), expected, atol=1e-12)


def test_supg_norm_matches_quadrature(ops_p2, rng):
    X = rng.normal(size=(ops_p2.n_interior, ops_p2.n_points))
    space, co, d = ops_p2.space, ops_p2.coeffs, ops_p2.params.delta
    t = space.error_quadrature()
    u, du = space.evaluate(X, t), space.evaluate(X, t, 1)
    c = co.c(t.x[..., None], ops_p2.measure.points)
    per = np.einsum("q,eql->l", t.weights, co.epsilon * du ** 2 + d * (co.b * du) ** 2 + c * u ** 2)
    assert ops_p2.supg_norm(X) == pytest.approx(np.sqrt(per @ ops_p2.measure.weights), rel=1e-12)


def test_supg_norm_examples(ops_p1, rng):
    assert supg_norm(np.zeros((ops_p1.n_interior, ops_p1.n_points)), ops_p1) == 0
    U, Y = rng.normal(size=(ops_p1.n_interior, 2)), rng.normal(size=(ops_p1.n_points, 2))
    modes, _ = weighted_orthonormalize(Y, ops_p1.measure)
    field = LowRankField(U, modes)
    per_point = ops_p1.supg_norm_sq_per_point(field.expand())
    assert supg_norm(field, ops_p1) == pytest.approx(np.sqrt(per_point @ ops_p1.measure.weights),
                                                     rel=1e-12)
    with pytest.raises(DimensionError):
        supg_norm(np.zeros((2, 2)), ops_p1)


def test_pure_reaction_norm_is_l2():
    mu = DiscreteMeasure.uniform_grid(1)
    space = LagrangeSpace(Mesh1D(0, 1, 8), 1)
    co = ProblemCoefficients(epsilon=0.0, b=1.0, c=lambda x, w: 1 + 0 * x, f=None, u0=None,
                             c0=1.0, c_sup=1.0)
    ops = assemble_supg(space, co, StabilizationParams(0.0, 1.0), mu, check=False)
    v = space.interpolate(lambda x: np.sin(np.pi * x))[:, None]
    assert ops.supg_norm(v) == pytest.approx(ops.norm(v), rel=1e-14)


def test_forcing_of_constant_source():
    co = ProblemCoefficients(epsilon=1e-8, b=1.0, c=lambda x, w: 1 + 0 * x,
                             f=lambda t, x, w: 2.0 + 0 * x * w, u0=None)
    ops = build(1, 10, 3, dt=0.1, coeffs=co)
    # (2, phi_i) = 2h; the streamline test term (2, delta b phi_i') vanishes for interior hats
    np.testing.assert_allclose(ops.forcing(0.3), 0.2, rtol=1e-13)
    assert ops.forcing_norm_sq(0.3) == pytest.approx(4.0, rel=1e-13)


@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]))
def test_coercivity_and_skew_bound_random_configs(seed, degree):
    rng = np.random.default_rng(seed)
    ops = build(degree, int(rng.integers(4, 20)), int(rng.integers(2, 8)),
                dt=float(rng.uniform(0.01, 0.5)), safety=float(rng.uniform(0.2, 1.0)),
                coeffs=random_coefficients(rng))
    assert check_coercivity(ops, 30, seed) >= 0.5 - 1e-10
    V = rng.normal(size=(ops.n_interior, ops.n_points))
    H = ops.skew_mass
    # ||v + delta b v'||^2 = ||v||^2 + 2 delta (v, b v') + delta^2 ||b v'||^2
    d = ops.params.delta
    sq = ops.norm(V) ** 2 + np.einsum("il,il,l->", V, (2 * d * ops.spatial.mass_streamline
                                                       + d * d * ops.spatial.streamline) @ V,
                                      ops.measure.weights)
    assert np.sqrt(sq) <= 2 * ops.norm(V) * (1 + 1e-12)
    assert np.allclose(dense(H), dense(ops.spatial.mass) + d * dense(ops.spatial.mass_streamline))


def test_continuity_constant_and_norm_bound(rng):
    ops = build(2, 16, 15, dt=0.05)
    c_i = estimate_inverse_constant(ops.space, ops.spatial)
    C1 = (c_i + 2) * abs(ops.coeffs.b) + 2 * ops.coeffs.c_sup / np.pi
    c0 = ops.coeffs.c0
    for _ in range(50):
        U, V = rng.normal(size=(2, ops.n_interior, ops.n_points))
        grad = np.sqrt(np.einsum("il,il,l->", U, ops.spatial.stiffness @ U, ops.measure.weights))
        assert abs(ops.bilinear(U, V)) <= C1 * grad * ops.norm(V)
        assert ops.norm(U) <= c0 ** -0.5 * ops.supg_norm(U) * (1 + 1e-12)


def test_coercivity_failure_is_detected():
    mu = DiscreteMeasure.uniform_grid(2)
    space = LagrangeSpace(Mesh1D(0, 1, 8), 1)
    # (c v, b v') = -1/2 (c' v, v) b, so a steep c with a huge delta breaks coercivity
    co = ProblemCoefficients(epsilon=1e-8, b=1.0, c=lambda x, w: 1 + 1e4 * x, f=None, u0=None,
                             c0=1.0, c_sup=1e4 + 1)
    with pytest.raises(StabilizationError):
        assemble_supg(space, co, StabilizationParams(50.0, 1.0), mu)
