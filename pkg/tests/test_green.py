import math

import numpy as np
import pytest

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.energy import conformal_constant
from umbilic_yamabe.fpoly import hemisphere_area
from umbilic_yamabe.green import (GreenError, flux_convergence, flux_integral, fundamental_constant,
                                  neumann_kernel, solve_green)
from umbilic_yamabe.quadrature import QuadratureSpec

N = 6


def test_neumann_kernel_normal_derivative_vanishes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, N))
    x[:, -1] = 0.0
    y = rng.normal(size=(50, N))
    y[:, -1] = np.abs(y[:, -1]) + 0.1
    _, g = neumann_kernel(x, y, grad=True)
    assert np.max(np.abs(g[:, -1])) < 1e-12


def test_neumann_kernel_unit_flux_from_boundary_point():
    # outward flux of -a grad K through the half-sphere around a boundary pole is 1
    a = conformal_constant(N)
    delta = 0.7
    x = np.zeros(N)
    x[0] = delta
    _, g = neumann_kernel(x, np.zeros(N), grad=True)
    flux = -a * g[0] * hemisphere_area(N) * delta ** (N - 1)
    assert flux == pytest.approx(1.0, rel=1e-13)
    assert fundamental_constant(N) > 0


def test_neumann_kernel_rejects_bad_points():
    with pytest.raises(ValueError):
        neumann_kernel(np.ones(N), np.ones(N))
    y = np.ones(N)
    y[-1] = -1.0
    with pytest.raises(ValueError):
        neumann_kernel(np.zeros(N), y)


def test_flat_green_is_exact():
    G = solve_green(st.CoeffSet(N, 2, {}))
    assert G.psi.is_zero
    X = np.abs(np.random.default_rng(1).normal(size=(5, N)))
    assert np.allclose(G.G(X), np.linalg.norm(X, axis=1) ** (2 - N), rtol=1e-15)
    for d in (0.5, 0.25, 0.125):
        assert flux_integral(G, d).total == 0.0


def test_residuals_decrease_along_iteration(green_cubic):
    h = green_cubic.history
    assert h["converged"]
    assert h["weak_residual"][-1] < 1e-3 * h["weak_residual"][0]
    s = h["strong_residual_rms"]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(s[:-1], s[1:]))
    assert max(h["contraction"]) < 0.9


def test_cubic_flux_converges_to_mass_term(green_cubic):
    fc = flux_convergence(green_cubic, [0.1, 0.05, 0.025, 0.0125])
    assert all(r >= 2 for r in fc.ratios)
    psi0 = float(green_cubic.psi(np.zeros((1, N)))[0])
    target = conformal_constant(N) * (N - 2) * hemisphere_area(N) * psi0
    assert fc.limit == pytest.approx(target, rel=1e-2)
    assert flux_integral(green_cubic, 0.05).metric_part == 0.0


def test_flux_inputs_validated(green_cubic):
    with pytest.raises(ValueError):
        flux_integral(green_cubic, 0.0)
    with pytest.raises(ValueError):
        flux_integral(green_cubic, 2.0)
    with pytest.raises(ValueError):
        flux_convergence(green_cubic, [0.1, 0.2])


def test_quadratic_response_in_scale():
    # the linearised curvature of an admissible tensor vanishes, so psi starts at second order
    H = st.random_admissible(N, 2, seed=3, nblocks=None)
    spec = QuadratureSpec(samples=60, panels=8, order=8, seed=0)
    X = np.abs(np.random.default_rng(2).normal(size=(20, N))) * 0.5
    a = solve_green(H, 0.02, spec=spec, degree=1, residual_points=50).psi(X)
    b = solve_green(H, 0.04, spec=spec, degree=1, residual_points=50).psi(X)
    assert np.linalg.norm(b) / np.linalg.norm(a) == pytest.approx(4.0, abs=0.5)


def test_large_scale_reports_divergence():
    spec = QuadratureSpec(samples=40, panels=6, order=6, seed=0)
    with pytest.raises(GreenError):
        solve_green(st.standard_cubic_example(N), 8.0, spec=spec, degree=1, residual_points=20)
