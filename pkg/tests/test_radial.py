import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst
from scipy.integrate import quad

from umbilic_yamabe.fpoly import FPoly, QPoly, hemisphere_area
from umbilic_yamabe.quadrature import (QuadratureSpec, chi, chi_derivs, halfball_points, integrate_halfball,
                                       radial_cutoff)
from umbilic_yamabe.radial import RPoly, div_x0, radial_integral_1d

N = 6


def _pts(k=7, seed=0, scale=0.6):
    X = np.random.default_rng(seed).normal(size=(k, N)) * scale
    X[:, -1] = np.abs(X[:, -1])
    return X


def _fd_grad(f, X, h=1e-6):
    out = np.zeros_like(X)
    for j in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[j] = h
        out[:, j] = (f(X + e) - f(X - e)) / (2 * h)
    return out


@settings(max_examples=25, deadline=None)
@given(hst.lists(hst.tuples(hst.lists(hst.integers(0, 3), min_size=N, max_size=N), hst.floats(-2, 2)),
                 min_size=1, max_size=5),
       hst.lists(hst.tuples(hst.lists(hst.integers(0, 3), min_size=N, max_size=N), hst.floats(-2, 2)),
                 min_size=1, max_size=5))
def test_fpoly_product_evaluates_pointwise(a, b):
    P = FPoly(N, [e for e, _ in a], [c for _, c in a])
    Q = FPoly(N, [e for e, _ in b], [c for _, c in b])
    X = _pts()
    assert np.allclose((P * Q)(X), P(X) * Q(X), rtol=1e-10, atol=1e-10)
    assert np.allclose((P + Q)(X), P(X) + Q(X), rtol=1e-12, atol=1e-12)


def test_fpoly_merges_duplicate_monomials():
    e = [[1, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0], [0, 2, 0, 0, 0, 0]]
    P = FPoly(N, e, [1.0, -1.0, 3.0])
    assert len(P) == 1 and P.coefs[0] == 3.0


def test_cutoff_profile():
    assert chi(np.array([0.0, 1.3, 4 / 3]))[0] == 1.0
    assert np.all(chi(np.array([5 / 3, 2.0])) == 0.0)
    t = np.linspace(1.34, 1.66, 9)
    c0, c1, _ = chi_derivs(t)
    h = 1e-6
    assert np.allclose(c1, (chi(t + h) - chi(t - h)) / (2 * h), atol=1e-6)
    X = _pts(seed=2, scale=0.9)
    _, g, _ = radial_cutoff(X, 0.5)
    assert np.allclose(g, _fd_grad(lambda Y: radial_cutoff(Y, 0.5)[0], X), atol=1e-6)


@pytest.mark.parametrize("delta", [0.25, 1.0, 3.0])
def test_rpoly_derivatives_match_fd(delta):
    x0 = FPoly.var(N, 0)
    f = RPoly.cutoff(N, delta) * RPoly.q(N, 0.3, 2.0, x0 * x0) + RPoly.cutoff(N, delta, bar=True) * RPoly.rpow(N, -4)
    X = _pts(9, seed=1, scale=delta)
    X = X[np.linalg.norm(X, axis=1) > 0.05]
    g = np.stack([d(X) for d in f.grad()], axis=1)
    assert np.allclose(g, _fd_grad(f, X), rtol=1e-6, atol=1e-7)
    g2 = f.deriv(1).deriv(1)(X)
    assert np.allclose(g2, _fd_grad(f.deriv(1), X)[:, 1], rtol=1e-5, atol=1e-6)


def test_rpoly_matches_qpoly():
    eps = 0.4
    q = QPoly(N, eps, {2.0: FPoly.var(N, 0) * FPoly.var(N, 0), 3.0: FPoly.const(N, 2.0)})
    r = RPoly.from_qpoly(q)
    X = _pts()
    assert np.allclose(r(X), q(X), rtol=1e-14)
    assert r.integrate(0.1, 2.0) == pytest.approx(q.integrate_shell(0.1, 2.0), rel=1e-12)


def test_rpoly_integral_against_quad():
    delta = 0.5
    f = RPoly.cutoff(N, delta) * RPoly.q(N, 0.2, 3.0) + RPoly.cutoff(N, delta, bar=True) * RPoly.rpow(N, -8)

    def radial(r):
        return float(f(np.array([[r, 0, 0, 0, 0, 0]]))[0])

    ref = sum(quad(lambda r: radial(r) * r ** (N - 1), a, b, limit=200, epsrel=1e-12)[0]
              for a, b in ((0, 0.2), (0.2, 2 / 3), (2 / 3, 5 / 6), (5 / 6, 10), (10, np.inf)))
    assert f.integrate() == pytest.approx(hemisphere_area(N) * ref, rel=1e-10)


def test_div_x0_and_profile_integral():
    f = RPoly.q(N, 0.5, 2.0)
    fr = div_x0(f.deriv(0))
    X = _pts()
    r = np.linalg.norm(X, axis=1)
    assert np.allclose(fr(X), -4.0 * (0.25 + r * r) ** -3, rtol=1e-14)
    val = radial_integral_1d(lambda s: (0.25 + s * s) ** -6, N, [0.5, 1.0])
    assert val == pytest.approx(f.__class__.q(N, 0.5, 6.0).integrate(), rel=1e-12)


def test_quadrature_determinism_and_accuracy():
    spec = QuadratureSpec(samples=300, seed=3)
    f = lambda X: (1.0 + np.einsum("ij,ij->i", X, X)) ** -6
    a = integrate_halfball(f, N, 0.0, 50.0, 1.0, spec)
    b = integrate_halfball(f, N, 0.0, 50.0, 1.0, spec)
    assert a[0] == b[0] and a[1] == b[1]
    assert a[0] == pytest.approx(math.pi ** 3 / 120, rel=1e-6)
    P = halfball_points(N, 100, 1.0, 0)
    assert np.all(P[:, -1] >= 0) and np.all(np.linalg.norm(P, axis=1) <= 1.0)
