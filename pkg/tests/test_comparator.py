import math

import numpy as np
import pytest

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.comparator import (DEMONSTRATED, INCONCLUSIVE, NO_CONCLUSION, build_testfunction,
                                       degenerate_verdict, negated, total_energy_report)
from umbilic_yamabe.gauge import solve_V
from umbilic_yamabe.green import flux_convergence, solve_green
from umbilic_yamabe.quadrature import QuadratureSpec

N = 6
EPS, DELTA = 0.0625, 0.25


@pytest.fixture(scope="module")
def flat_tf():
    flat = st.CoeffSet(N, 2, {})
    return build_testfunction(EPS, DELTA, solve_V(flat, EPS, DELTA, 3), solve_green(flat))


@pytest.fixture(scope="module")
def e0_tf():
    E0 = st.standard_example(N)
    G = solve_green(E0, 0.5, spec=QuadratureSpec(samples=100, panels=8, order=8))
    return build_testfunction(EPS, DELTA, solve_V(E0, EPS, DELTA, 3, scale=0.5), G)


def _ray(r):
    X = np.zeros((len(r), N))
    X[:, 0] = r
    return X


def test_value_at_centre_and_far_field(flat_tf):
    assert flat_tf.v(np.zeros((1, N)))[0] == pytest.approx(EPS ** -2, rel=1e-14)
    r = np.array([1.0, 3.0])
    assert np.allclose(flat_tf.v(_ray(r)), EPS ** 2 * r ** -4, rtol=1e-14)
    assert flat_tf.min_value > 0


def test_continuity_across_gluing_annulus(flat_tf):
    r = np.linspace(4 * DELTA / 3 - 0.01, 5 * DELTA / 3 + 0.01, 2001)
    v = flat_tf.v(_ray(r))
    jumps = np.abs(np.diff(v))
    assert jumps.max() < 1e-3 * v.max()
    val, grad = flat_tf(_ray(r[::100]))
    assert np.all(np.isfinite(grad))


def test_construction_checks():
    flat = st.CoeffSet(N, 2, {})
    G = solve_green(flat)
    with pytest.raises(ValueError):
        build_testfunction(0.2, DELTA, solve_V(flat, 0.2, DELTA, 3), G)
    with pytest.raises(ValueError):
        build_testfunction(EPS, DELTA, solve_V(flat, EPS / 2, DELTA, 3), G)
    with pytest.raises(ValueError):
        build_testfunction(EPS, DELTA, solve_V(st.standard_example(N), EPS, DELTA, 3), G)


def test_flat_metric_is_inconclusive(flat_tf):
    rep = total_energy_report(flat_tf, QuadratureSpec(samples=50, panels=8, order=8))
    assert rep.E > rep.Y
    assert rep.verdict == INCONCLUSIVE
    assert rep.flux_term == 0.0
    assert rep.recomputed_margin() == pytest.approx(rep.margin, rel=1e-12)


def test_budget_shrinks_with_samples(e0_tf):
    lo = total_energy_report(e0_tf, QuadratureSpec(samples=50, panels=8, order=8))
    hi = total_energy_report(e0_tf, QuadratureSpec(samples=200, panels=8, order=8))
    ratio = lo.budget["quadrature_sigma"] / hi.budget["quadrature_sigma"]
    assert ratio == pytest.approx(2.0, rel=0.3)
    assert lo.recomputed_margin() == pytest.approx(lo.margin, rel=1e-12)
    assert abs(lo.margin - hi.margin) < 5 * (lo.total_budget + hi.total_budget)


def test_degenerate_verdict_follows_flux_sign(green_cubic):
    fc = flux_convergence(green_cubic, [0.1, 0.05, 0.025, 0.0125])
    assert fc.limit > 0
    assert degenerate_verdict(negated(fc)) == NO_CONCLUSION
    assert degenerate_verdict(fc) is None
    assert negated(fc).limit == -fc.limit
    assert DEMONSTRATED != INCONCLUSIVE
