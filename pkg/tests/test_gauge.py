import numpy as np
import pytest

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.gauge import (ck_operator, conformal_killing_fields, decay_profile, kernel, solve_V,
                                  tensor_fpoly)
from umbilic_yamabe.metric import (MetricModel, conformal_flat, expm_sym, metric_derivatives, metric_eval,
                                   scalar_curvature, scalar_curvature_exact)

N = 6


def _pts(k, seed, scale):
    X = np.random.default_rng(seed).normal(size=(k, N)) * scale
    X[:, -1] = np.abs(X[:, -1])
    return X


def test_expm_of_traceless_has_unit_determinant():
    A = np.random.default_rng(0).normal(size=(5, 4, 4))
    A = A + A.transpose(0, 2, 1)
    A -= np.trace(A, axis1=1, axis2=2)[:, None, None] * np.eye(4) / 4
    assert np.allclose(np.linalg.det(expm_sym(A)), 1.0, rtol=1e-12)


def test_curvature_of_conformally_flat_metric():
    c = np.array([0.1, -0.05, 0.0, 0.02, 0.0, 0.03])
    f = lambda X: 0.3 * np.tanh(X @ c)
    df = lambda X: (0.3 / np.cosh(X @ c) ** 2)[:, None] * c
    d2f = lambda X: (-0.6 * np.tanh(X @ c) / np.cosh(X @ c) ** 2)[:, None, None] * np.outer(c, c)
    gfun, R = conformal_flat(N, f, df, d2f)
    X = _pts(5, 1, 1.0)
    g, dg, d2g = metric_derivatives(gfun, X, 1e-3)
    assert np.allclose(scalar_curvature(g, dg, d2g), R(X), rtol=1e-6, atol=1e-9)


def test_exact_jet_agrees_with_finite_differences(E0):
    model = MetricModel(N, tensor_fpoly(E0, 0.5), 1.0)
    X = _pts(6, 2, 0.4)
    jet = metric_eval(model, X)
    assert np.allclose(jet.R, scalar_curvature_exact(model, X), rtol=1e-5, atol=1e-8)
    assert np.allclose(jet.det_drift, 0.0, atol=1e-10)


def test_zero_tensor_gives_zero_field():
    sol = solve_V(st.CoeffSet(N, 2, {}), 0.05, 0.25, 3)
    assert all(v.is_zero for v in sol.V)


def test_solution_is_linear_in_H():
    H = st.random_admissible(N, 3, seed=2, nblocks=None)
    a = solve_V(H, 0.05, 0.25, 3)
    b = solve_V(H, 0.05, 0.25, 3, scale=2.0)
    X = _pts(8, 3, 0.2)
    for va, vb in zip(a.V, b.V):
        assert np.allclose(vb(X), 2 * va(X), rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_kernel_matches_conformal_killing_count(D):
    rep = kernel(N, D)
    assert rep.dimension == len(conformal_killing_fields(N, D))
    assert rep.numerical_dimension == rep.dimension
    # a square root of a quadratic form, so roundoff shows at sqrt(machine eps)
    assert rep.max_operator_norm < 1e-6


def test_conformal_killing_fields_are_annihilated():
    from umbilic_yamabe.fpoly import FPoly
    for name, f in conformal_killing_fields(N, 2):
        V = [FPoly(N) for _ in range(N)]
        for (c, e), val in f.items():
            V[c] = V[c] + FPoly(N, [list(e)], [val])
        assert all(p.is_zero for row in ck_operator(V) for p in row), name


def test_solution_orthogonal_to_kernel(E0):
    sol = solve_V(E0, 0.03125, 0.25, 3)
    assert sol.diagnostics["kernel_mass_projection"] < 1e-8 * max(sol.diagnostics["mass_norm2"], 1.0)
    assert sol.diagnostics["orthogonality"] < 1e-10


def test_decay_profile_scales_with_eps(E0):
    # V(x) = eps V~(x/eps), so the profile at radius r*eps is eps-independent up to eps^(2 sigma)
    a = solve_V(E0, 0.05, 0.5, 3)
    b = solve_V(E0, 0.025, 0.5, 3)
    pa = decay_profile(a, radii=(0.05,), sigma=2.0)[0][1]
    pb = decay_profile(b, radii=(0.025,), sigma=2.0)[0][1]
    assert pa > 0 and pb > 0
    assert pa == pytest.approx(pb, rel=0.05)
