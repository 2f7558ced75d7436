import math

import numpy as np
import pytest

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.bubble import BubbleParams, sphere_constant, u_eval
from umbilic_yamabe.energy import (conformal_constant, integrated_estimate, j_decomposition,
                                   pointwise_identity_scan, yamabe_energy)
from umbilic_yamabe.gauge import solve_V
from umbilic_yamabe.quadrature import QuadratureSpec


class _Bubble:
    n = 6

    def __init__(self, eps, factor=1.0):
        self.p = BubbleParams(6, eps)
        self.factor = factor

    def __call__(self, X):
        u, g, _ = u_eval(self.p, X)
        return self.factor * u, self.factor * g


def test_conformal_constant():
    assert conformal_constant(6) == 5.0
    assert conformal_constant(3) == 8.0


def test_flat_bubble_attains_hemisphere_constant():
    spec = QuadratureSpec(samples=50, panels=24, order=12)
    E = yamabe_energy(_Bubble(0.3), None, scale=0.3, spec=spec)
    assert E.value == pytest.approx(sphere_constant(6).value, rel=1e-6)


def test_energy_is_scale_invariant_in_amplitude():
    spec = QuadratureSpec(samples=50, panels=12, order=8)
    a = yamabe_energy(_Bubble(0.5), None, scale=0.5, spec=spec)
    b = yamabe_energy(_Bubble(0.5, 2.0), None, scale=0.5, spec=spec)
    assert b.value == pytest.approx(a.value, rel=1e-12)


def test_nonpositive_field_rejected():
    with pytest.raises(ValueError):
        yamabe_energy(_Bubble(0.5, -1.0), None, spec=QuadratureSpec(samples=10, panels=2, order=4))


def test_integrated_estimate_bookkeeping(E0):
    sol = solve_V(E0, 0.0625, 0.25, 3)
    est = integrated_estimate(sol)
    assert est.lhs == pytest.approx(sum(est.parts[f"line{k}"] for k in range(1, 5)), rel=1e-12)
    assert est.good == pytest.approx(est.parts["Q_term"] + est.parts["T_term"], rel=1e-12)
    assert est.lam_hat > 0
    with pytest.raises(ValueError):
        integrated_estimate(sol, delta=0.1)


def test_j_decomposition_reconstructs_direct_energy():
    H = st.random_admissible(6, 3, seed=5, nblocks=None)
    sol = solve_V(H, 0.05, 0.2, 3, scale=0.3)
    br = j_decomposition(sol, spec=QuadratureSpec(samples=400, panels=10, order=8))
    assert abs(br.reconstruction_gap) <= 4 * br.reconstruction_se + 1e-9 * abs(br.total)
    assert abs(br.total - br.direct) <= 4 * (br.direct_se + sum(br.J_se.values())) + 1e-9 * abs(br.total)


def test_scan_rejects_large_eps(E0):
    with pytest.raises(ValueError):
        pointwise_identity_scan(E0, [0.2], 0.25)


def test_generic_tensor_boundary_term_scaling():
    H = st.random_admissible(6, 2, seed=7, nblocks=None)
    delta = 0.25
    scan = pointwise_identity_scan(H, [delta / 8, delta / 16, delta / 32], delta)
    assert all(f != 0 for f in scan.flux)
    assert math.isfinite(scan.slope)
    assert scan.slope == pytest.approx(4.0, abs=0.3)
