import math

import numpy as np
import pytest

from umbilic_yamabe.bubble import (BubbleParams, halfspace_moment, halfspace_moment_mc, identity_residuals,
                                   sphere_constant, u_eval)


def test_value_at_origin():
    for eps in (0.5, 2.0):
        u, g, _ = u_eval(BubbleParams(6, eps), np.zeros(6))
        assert u == pytest.approx(eps ** -2, rel=1e-15)
        assert np.all(g == 0)


def test_scaling_identity():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 6))
    eps = 0.3
    u_eps, _, _ = u_eval(BubbleParams(6, eps), X)
    u_one, _, _ = u_eval(BubbleParams(6, 1.0), X / eps)
    assert np.allclose(u_eps, eps ** -2 * u_one, rtol=1e-14)


def test_laplace_at_origin():
    res = identity_residuals(BubbleParams(6, 1.0), np.zeros((1, 6)))
    _, _, H = u_eval(BubbleParams(6, 1.0), np.zeros(6))
    assert np.trace(H) == pytest.approx(-24.0, rel=1e-14)
    assert abs(res.laplace[0]) < 1e-12


def test_hessian_off_diagonal_on_axis():
    x = np.zeros(6)
    x[0] = 0.7
    _, _, H = u_eval(BubbleParams(6, 1.0), x)
    off = H - np.diag(np.diag(H))
    assert np.all(off == 0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        BubbleParams(6, 0.0)


def test_halfspace_moment_closed_form():
    assert halfspace_moment(6, 6, (0,) * 6) == pytest.approx(math.pi ** 3 / 120, rel=1e-14)
    assert halfspace_moment(6, 6, (1, 0, 0, 0, 0, 0)) == 0.0
    with pytest.raises(ValueError):
        halfspace_moment(6, 3, (0,) * 6)


def test_halfspace_moment_integration_by_parts():
    # d_1 (x_1 q^(1-p)) = q^(1-p) - 2(p-1) x_1^2 q^(-p), integrated over the half-space
    for n, p in ((6, 6), (6, 5), (8, 7)):
        z = (0,) * n
        a = (2,) + (0,) * (n - 1)
        assert halfspace_moment(n, p - 1, z) == pytest.approx(2 * (p - 1) * halfspace_moment(n, p, a), rel=1e-13)


def test_halfspace_moment_against_mc():
    rng = np.random.default_rng(1)
    for _ in range(10):
        alpha = tuple(int(2 * rng.integers(0, 2)) for _ in range(5)) + (int(rng.integers(0, 3)),)
        p = 6 + sum(alpha) / 2 + float(rng.integers(1, 3))
        exact = halfspace_moment(6, p, alpha)
        est, se = halfspace_moment_mc(6, p, alpha, samples=200_000, seed=int(rng.integers(10 ** 6)))
        assert abs(est - exact) <= 4 * se


def test_sphere_constant_eps_invariance_and_sign():
    a = sphere_constant(6, 1.0)
    b = sphere_constant(6, 2.0)
    assert a.moment == pytest.approx(b.moment, rel=1e-14)
    assert sphere_constant(6, mode="radial").value == pytest.approx(a.value, rel=1e-10)
    for n in range(3, 11):
        assert sphere_constant(n).value > 0
