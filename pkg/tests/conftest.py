"""Shared builders for the test suite."""
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import settings

from supg_dlr.fem1d import LagrangeSpace, Mesh1D, assemble, estimate_inverse_constant
from supg_dlr.measure import DiscreteMeasure, orthogonal_complement
from supg_dlr.oracle import ManufacturedProblem
from supg_dlr.supg import ProblemCoefficients, assemble_supg, select_delta

settings.register_profile("suite", deadline=None, max_examples=25)
settings.load_profile("suite")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def build(degree=1, n_el=16, n_c=15, dt=0.05, safety=1.0, coeffs=None, delta=None):
    """Space, operators and measure for the manufactured problem (or ``coeffs``)."""
    measure = DiscreteMeasure.uniform_grid(n_c)
    space = LagrangeSpace(Mesh1D(0.0, 1.0, n_el), degree)
    coeffs = (coeffs or ManufacturedProblem().coefficients()).with_sampled_bounds(space, measure)
    spatial = assemble(space, coeffs)
    c_i = estimate_inverse_constant(space, spatial)
    params = select_delta(space.h, dt, coeffs, c_i, safety)
    if delta is not None:
        params = replace(params, delta=delta)
    ops = assemble_supg(space, coeffs, params, measure, spatial)
    return ops


def random_coefficients(rng):
    """Admissible random data: c in [c_lo, c_lo + amp], smooth f, rank-5 u0."""
    eps = 10.0 ** rng.uniform(-9, -5)
    b = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
    c_lo, amp, kx = rng.uniform(0.1, 2.0), rng.uniform(0.0, 3.0), rng.integers(1, 4)
    fa, fb = rng.normal(size=2)
    amps = rng.uniform(0.3, 1.0, size=5)
    freqs = rng.uniform(3.0, 9.0, size=5)
    phases = rng.uniform(0, 2 * np.pi, size=5)

    def c(x, w):
        return c_lo + amp * w * (1 + np.cos(np.pi * kx * x)) / 2

    def f(t, x, w):
        return fa * np.sin(np.pi * x) * (1 + w) + fb * t * x * (1 - x)

    def u0(x, w):
        # five separable terms with unrelated stochastic profiles: rank 5 data
        return sum(a * np.sin((j + 1) * np.pi * x) * np.sin(fr * w + ph)
                   for j, (a, fr, ph) in enumerate(zip(amps, freqs, phases)))

    return ProblemCoefficients(epsilon=eps, b=b, c=c, f=f, u0=u0)


def tangent_basis(field):
    """Columns spanning {dU Y^T + U dY^T : E[Y dY] = 0}, vectorized row-major."""
    N, R = field.U.shape
    Y = field.Y.values
    Q = orthogonal_complement(Y, field.measure)
    cols = []
    for i in range(N):
        for j in range(R):
            E = np.zeros((N, len(Y)))
            E[i] = Y[:, j]
            cols.append(E.ravel())
    for j in range(R):
        for p in range(Q.shape[1]):
            cols.append(np.outer(field.U[:, j], Q[:, p]).ravel())
    return np.column_stack(cols)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ops_p1():
    return build(1, 16, 15, 0.05)


@pytest.fixture(scope="session")
def ops_p2():
    return build(2, 8, 7, 0.05)
