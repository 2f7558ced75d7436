"""Acceptance suite: twelve criteria, each at its stated tolerance.

Every test records a one-line outcome that is printed in the terminal summary
(see conftest.py).  Criteria that do not hold for the data at hand fail
honestly; nothing here is loosened to force a pass.
"""
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from umbilic_yamabe import symtensor as st
from umbilic_yamabe.bubble import BubbleParams, identity_residuals, sphere_constant, u_eval
from umbilic_yamabe.fpoly import FPoly

from conftest import record

ROOT = Path(__file__).resolve().parents[1]


def test_acceptance_01_exact_identity_suite():
    t0 = time.time()
    bad = []
    for n in (6, 8, 10):
        d = st.degree_cap(n)
        for j in range(25):
            H = st.make_H(st.random_admissible(n, d, seed=j))
            div = st.divergence_identity_residual(H)
            bnd = st.boundary_A_normal(H)
            if div.nonzero() or not all(p.is_zero for p in bnd):
                bad.append((n, j))
    dt = time.time() - t0
    ok = not bad and dt < 120
    record(1, "exact identity suite", ok, f"75 cases, failures {bad}, {dt:.1f}s (limit 120s)")
    assert not bad
    assert dt < 120


def test_acceptance_02_z_kernel_trivial():
    t0 = time.time()
    k6 = st.z_kernel(6, 2)
    k8 = st.z_kernel(8, 3)
    dt = time.time() - t0
    ok = not k6 and not k8 and dt < 600
    record(2, "Z-kernel triviality", ok, f"dim ker (6,2) = {len(k6)}, (8,3) = {len(k8)}, {dt:.1f}s (limit 600s)")
    assert k6 == [] and k8 == []
    assert dt < 600


def test_acceptance_03_k1_positivity_and_scaling():
    r1 = st.gram_K1(6, 2)
    r2 = st.gram_K1(6, 2)
    repro = abs(r1.lambda_min - r2.lambda_min)
    defects = []
    for seed in range(3):
        c = st.random_admissible(6, 2, seed=seed)
        h = st.homogeneous_part(c, 2)
        for r in (2, Fraction(1, 3)):
            defects.append(st.scaling_defect(h, r))
    exact = all(d == 0 for d in defects)
    ok = r1.lambda_min > 0 and repro <= 1e-10 and exact
    record(3, "K1 positivity", ok,
           f"lambda_min = {r1.lambda_min:.6e}, rerun difference {repro:.1e}, scaling defects exact zero: {exact}")
    assert r1.lambda_min > 0
    assert repro <= 1e-10
    assert exact


def test_acceptance_04_bubble_identities():
    rng = np.random.default_rng(4)
    worst_id, worst_fd = 0.0, 0.0
    for eps in (0.25, 1.0, 4.0):
        p = BubbleParams(6, eps)
        X = rng.normal(size=(100, 6)) * eps
        X[:, -1] = np.abs(X[:, -1])
        res = identity_residuals(p, X)
        worst_id = max(worst_id, float(np.max(res.laplace_relative)), float(np.max(res.hessian_relative)))
        u, g, H = u_eval(p, X)
        h = 1e-5 * eps
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            up, gp, _ = u_eval(p, X + e)
            um, gm, _ = u_eval(p, X - e)
            fd_g = (up - um) / (2 * h)
            fd_H = (gp - gm) / (2 * h)
            worst_fd = max(worst_fd, float(np.max(np.abs(fd_g - g[:, k]) / np.max(np.abs(g), axis=1))),
                           float(np.max(np.abs(fd_H - H[:, :, k]) / np.max(np.abs(H), axis=(1, 2))[:, None])))
    ok = worst_id < 1e-10 and worst_fd < 1e-6
    record(4, "bubble identities", ok, f"identity residual {worst_id:.1e} (< 1e-10), FD mismatch {worst_fd:.1e} (< 1e-6)")
    assert worst_id < 1e-10
    assert worst_fd < 1e-6


def test_acceptance_05_hemisphere_constant():
    oracle = 120 * (math.pi ** 3 / 120) ** (1 / 3)
    ex = sphere_constant(6)
    mc = sphere_constant(6, mode="mc", samples=10 ** 6, seed=5)
    rel = abs(ex.value - oracle) / oracle
    z = abs(mc.value - oracle) / mc.stderr
    ok = rel < 1e-8 and z < 3
    record(5, "hemisphere constant", ok, f"exact rel. error {rel:.1e} (< 1e-8), MC {z:.2f} sigma (< 3)")
    assert rel < 1e-8
    assert z < 3


def _fields6():
    n = 6
    x = [FPoly.var(n, j) for j in range(n)]
    z = FPoly(n)
    one = FPoly.const(n, 1.0)
    return {
        "translation e1": [one] + [z] * 5,
        "translation e3": [z, z, one, z, z, z],
        "x1 x2 e1": [x[0] * x[1]] + [z] * 5,
        "rotation-like": [x[1] * x[2], x[0] * x[3] * -1.0, z, z, z, z],
        "normal x6 x3": [z] * 5 + [x[5] * x[2]],
    }


def test_acceptance_06_hemisphere_identity():
    from umbilic_yamabe.gauge import hemisphere_identity
    worst, worst_dv = 0.0, 0.0
    for name, V in _fields6().items():
        r = hemisphere_identity(V)
        worst = max(worst, r.relative_residual)
        if name.startswith("translation"):
            worst_dv = max(worst_dv, r.DV2 / r.gradV2)
    ok = worst < 1e-4 and worst_dv < 1e-8
    record(6, "hemisphere identity", ok, f"max relative residual {worst:.1e} (< 1e-4), translations |DV|^2/|grad V|^2 {worst_dv:.1e}")
    assert worst < 1e-4
    assert worst_dv < 1e-8


def test_acceptance_07_gauge_solver():
    from umbilic_yamabe.gauge import solve_V, strong_residual, boundary_lemma_check, xi_n_eval
    from umbilic_yamabe.quadrature import boundary_disk_points
    H = st.random_admissible(6, 3, seed=11, nblocks=None)
    orth, strong, dnS, xin, parity = [], [], [], [], []
    for D in (3, 4, 5):
        sol = solve_V(H, 0.05, 0.5, D)
        orth.append(sol.diagnostics["orthogonality"])
        strong.append(strong_residual(sol, 500, seed=0).rms)
        b = boundary_lemma_check(sol, 200, seed=0)
        parity.append(max(b["S_in"], b["dn_S_ik"], b["dn_w"]))
        dnS.append(b["dn_S_nn"])
        Xb = boundary_disk_points(6, 200, sol.delta, 1)
        xin.append(float(np.max(np.abs(xi_n_eval(sol, Xb)[0]))))
    dec = all(b < a * 1.05 for a, b in zip(strong[:-1], strong[1:])) and strong[-1] < strong[0]
    noninc = all(b <= a for a, b in zip(dnS[:-1], dnS[1:])) and all(b <= a for a, b in zip(xin[:-1], xin[1:]))
    ok = max(orth) < 1e-10 and dec and max(parity) == 0 and noninc
    record(7, "gauge solver", ok,
           f"orthogonality {max(orth):.1e}, strong residual {[f'{s:.3e}' for s in strong]}, "
           f"parity {max(parity)}, |d_n S_nn| {dnS}, |xi_n| {xin}")
    assert max(orth) < 1e-10
    assert dec
    assert max(parity) == 0
    assert noninc


def test_acceptance_08_integrated_estimate(E0):
    from umbilic_yamabe.energy import integrated_estimate
    from umbilic_yamabe.gauge import solve_V
    delta = 0.25
    lams = []
    for r in (1 / 2, 1 / 4, 1 / 8):
        sol = solve_V(E0, delta * r, delta, 3)
        lams.append(integrated_estimate(sol).lam_hat)
    ok = all(l > 0 for l in lams)
    record(8, "integrated estimate", ok, "lambda_hat = " + ", ".join(f"{l:.4e}" for l in lams))
    assert ok


def test_acceptance_09_flux_scaling(E0):
    from umbilic_yamabe.energy import pointwise_identity_scan
    delta = 0.25
    scan = pointwise_identity_scan(E0, [delta / 8, delta / 16, delta / 32], delta)
    ok = math.isfinite(scan.slope) and abs(scan.slope - 4) <= 0.3
    record(9, "flux scaling for E0", ok,
           f"|int rho| = {[f'{abs(f):.2e}' for f in scan.flux]}, slope {scan.slope} (target 4 +/- 0.3)")
    assert ok, f"slope {scan.slope}; the pointwise identity closes exactly for this tensor"


def test_acceptance_10_flat_calibration():
    from umbilic_yamabe.comparator import build_testfunction, total_energy_report
    from umbilic_yamabe.gauge import solve_V
    from umbilic_yamabe.green import flux_integral, solve_green
    flat = st.CoeffSet(6, 2, {})
    G = solve_green(flat, 1.0, 1.0)
    flux = [flux_integral(G, d).total for d in (0.5, 0.25, 0.125, 0.0625)]
    delta = 0.25
    ratios = [1 / 4, 1 / 8, 1 / 16]
    gap = []
    for r in ratios:
        sol = solve_V(flat, delta * r, delta, 3)
        rep = total_energy_report(build_testfunction(delta * r, delta, sol, G))
        gap.append(rep.E - rep.Y)
    pos_dec = all(g > 0 for g in gap) and all(b < a for a, b in zip(gap[:-1], gap[1:]))
    slope = float(np.polyfit(np.log(ratios), np.log(gap), 1)[0]) if all(g > 0 for g in gap) else float("nan")
    ok = all(f == 0 for f in flux) and pos_dec and abs(slope - 4) <= 0.5
    record(10, "flat calibration", ok,
           f"flux {flux}, E - Y = {[f'{g:.3e}' for g in gap]}, slope {slope:.2f} (target 4 +/- 0.5)")
    assert all(f == 0 for f in flux)
    assert pos_dec
    assert abs(slope - 4) <= 0.5, f"measured slope {slope:.2f}"


def test_acceptance_11_headline_inequality():
    from umbilic_yamabe.cli import _compare_cfg, _run_compare
    from umbilic_yamabe.comparator import DEMONSTRATED
    cfg = json.loads((ROOT / "experiments" / "headline.json").read_text())
    t0 = time.time()
    tv = _run_compare(_compare_cfg(cfg))
    dt = time.time() - t0
    b = tv.best
    ok = tv.verdict == DEMONSTRATED and b.margin > 5 * b.total_budget and dt < 3600
    record(11, "headline inequality", ok,
           f"scale {cfg['scale']}, eps {b.eps:g}, delta {b.delta:g}: E = {b.E:.8f} < Y = {b.Y:.8f}, "
           f"margin {b.margin:.3e}, budget {b.total_budget:.3e} ({b.margin / b.total_budget:.0f}x), {dt:.0f}s")
    assert tv.verdict == DEMONSTRATED
    assert b.E < b.Y
    assert b.margin > 5 * b.total_budget
    assert dt < 3600


@pytest.fixture(scope="module")
def degenerate_runs():
    from umbilic_yamabe.cli import _compare_cfg, _run_compare
    out = {}
    for name in ("degenerate_positive", "degenerate_sign_flip"):
        cfg = json.loads((ROOT / "experiments" / f"{name}.json").read_text())
        out[name] = _run_compare(_compare_cfg(cfg))
    return out


def test_acceptance_12_degenerate_machinery(degenerate_runs):
    from umbilic_yamabe.comparator import DEMONSTRATED, NO_CONCLUSION
    pos = degenerate_runs["degenerate_positive"]
    neg = degenerate_runs["degenerate_sign_flip"]
    fc = pos.flux
    halves = all(r >= 2 for r in fc.ratios)
    ok = halves and pos.verdict == DEMONSTRATED and neg.verdict == NO_CONCLUSION
    m = pos.best
    record(12, "degenerate-case machinery", ok,
           f"difference ratios {[round(r, 2) for r in fc.ratios]}, limit {fc.limit:.3f} +/- {fc.limit_error:.3f}; "
           f"positive: {pos.verdict}" + (f" (margin {m.margin:.2e}, budget {m.total_budget:.2e})" if m else "")
           + f"; sign flip: {neg.verdict}")
    assert halves
    assert pos.verdict == DEMONSTRATED
    assert neg.verdict == NO_CONCLUSION
