"""The glued test function and its Yamabe energy against the hemisphere constant.

``v = chi_delta (u_eps + w) + (1 - chi_delta) eps^((n-2)/2) G``.

The energy is split so that nothing large is computed by Monte Carlo:

* the radial flat profile ``f = chi u + (1-chi) eps^((n-2)/2) |x|^(2-n)``
  is integrated in one dimension;
* the flat energy of ``Delta = v - f`` (cross terms included) is a
  polynomial-times-radial integral done in closed form;
* the metric terms use the quadratic models ``A2`` and ``R2`` in closed form
  where h equals the polynomial tensor, and quadrature only for the remainder;
* the critical norm is expanded to second order in Delta in closed form, the
  third-order remainder by quadrature.

``E - Y`` is then assembled from these differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .bubble import sphere_constant
from .energy import _metric_at, conformal_constant, quadratic_models
from .fpoly import FPoly
from .gauge import GaugeSolution, solve_V, tensor_fpoly
from .green import GreenModel, flux_integral, flux_convergence, solve_green, FluxConvergence
from .metric import MetricModel
from .quadrature import QuadratureSpec, halfball_points, integrate_halfball, chi
from .radial import RPoly, div_x0, radial_integral_1d, rsum

DEMONSTRATED = "inequality demonstrated"
INCONCLUSIVE = "inconclusive"
NO_CONCLUSION = "no conclusion from this criterion"
BUDGET_FACTOR = 5.0


def _same_tensor(A, B, tol=1e-14):
    for ra, rb in zip(A, B):
        for p, q in zip(ra, rb):
            d = p - q
            if d.max_abs_coef() > tol * max(1.0, p.max_abs_coef()):
                return False
    return True


@dataclass
class TestFunction:
    n: int
    eps: float
    delta: float
    sol: GaugeSolution
    green: GreenModel
    v: RPoly
    f: RPoly          # radial part
    dv: RPoly         # v - f
    vm: RPoly         # f + chi w (the part used with the metric models)
    min_value: float = float("nan")

    __test__ = False   # keep pytest from collecting the class

    def __call__(self, X):
        X = np.atleast_2d(X)
        return self.v(X), np.stack([d(X) for d in self.grad], axis=1)

    @property
    def grad(self):
        if not hasattr(self, "_grad"):
            self._grad = self.v.grad()
        return self._grad

    def f_radial(self, r):
        """The radial part as a function of r (vectorised)."""
        r = np.asarray(r, dtype=float)
        X = np.zeros((r.size, self.n))
        X[:, 0] = r.ravel()
        return self.f(X).reshape(r.shape)


def build_testfunction(eps: float, delta: float, sol: GaugeSolution, Gm: GreenModel,
                       samples: int = 4000, seed: int = 0) -> TestFunction:
    """Glue ``u + w`` to ``eps^((n-2)/2) G`` across ``4 delta/3 < |x| < 5 delta/3``."""
    if not (0 < 2 * eps <= delta):
        raise ValueError("need 0 < 2 eps <= delta")
    if abs(sol.eps - eps) > 1e-15 * eps or abs(sol.delta - delta) > 1e-15 * delta:
        raise ValueError("gauge solution was built for different (eps, delta)")
    if not _same_tensor(sol.H, Gm.H):
        raise ValueError("gauge solution and Green's function use different tensors")
    n = sol.n
    k = (n - 2) / 2
    c = RPoly.cutoff(n, delta)
    cb = RPoly.cutoff(n, delta, bar=True)
    u = RPoly.from_qpoly(sol.u)
    w = RPoly.from_qpoly(sol.w)
    f = c * u + cb * RPoly.rpow(n, 2 - n, eps ** k)
    dv = c * w + cb * Gm.psi * eps ** k
    tf = TestFunction(n, eps, delta, sol, Gm, f + dv, f, dv, f + c * w)
    # positivity on samples (dense near the bubble and across the gluing annulus)
    R = max(4 * delta, 2 * Gm.rho0)
    pts = [halfball_points(n, samples, R, seed), halfball_points(n, samples, 2 * delta, seed + 1),
           halfball_points(n, samples, 4 * eps, seed + 2)]
    vals = np.concatenate([tf.v(P) for P in pts])
    tf.min_value = float(vals.min())
    if not np.all(vals > 0):
        raise ValueError(f"test function not positive (min {vals.min():.3e}); parameters outside the construction's regime")
    return tf


# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    n: int
    eps: float
    delta: float
    scale: float
    E: float
    Y: float
    margin: float
    flux_term: float                 # eps^(n-2) I(p, delta)
    budget: dict
    total_budget: float
    verdict: str
    breakdown: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)

    def recomputed_margin(self):
        b = self.breakdown
        return -(b["E_flat_minus_Y"] + b["E_minus_E_flat"])


def _breaks(eps, delta, rho0):
    pts = [eps * 2.0 ** j for j in range(-3, 60) if eps * 2.0 ** j < 64 * max(delta, rho0)]
    return sorted(set(pts + [4 * delta / 3, 5 * delta / 3, 4 * rho0 / 3, 5 * rho0 / 3]))


def _exact_parts(tf: TestFunction, A2, R2, r_in, order):
    n = tf.n
    a = conformal_constant(n)
    eps, delta = tf.eps, tf.delta
    p_star = 2.0 * n / (n - 2)
    # radial flat part
    grad_f = tf.f.grad()
    N0 = a * sum((g * g).integrate(order=order) for g in grad_f)
    fr = tf.f_radial
    brk = _breaks(eps, delta, tf.green.rho0)
    D0 = radial_integral_1d(lambda r: fr(r) ** p_star, n, brk, order=order)
    # flat energy of the difference
    grad_d = tf.dv.grad()
    dN_flat = a * sum((2.0 * gf * gd + gd * gd).integrate(order=order) for gf, gd in zip(grad_f, grad_d))
    # metric models on B_{r_in}, applied to vm = f + chi w
    fp_over_r = div_x0(grad_f[0])
    cw = tf.vm - tf.f
    grad_cw = cw.grad()
    xAx = sum((A2[i][k] * FPoly.var(n, i) * FPoly.var(n, k) for i in range(n) for k in range(n)), FPoly(n))
    Ax = [sum((A2[i][k] * FPoly.var(n, k) for k in range(n)), FPoly(n)) for i in range(n)]
    acc = fp_over_r * fp_over_r * xAx * a + tf.vm * tf.vm * R2
    if not cw.is_zero:
        acc = acc + rsum([fp_over_r * grad_cw[i] * Ax[i] * (2 * a) for i in range(n) if not Ax[i].is_zero], n)
        acc = acc + rsum([grad_cw[i] * grad_cw[k] * A2[i][k] * a
                          for i in range(n) for k in range(n) if not A2[i][k].is_zero], n)
    dN_met = acc.integrate(0.0, r_in, order=order)
    # critical norm to second order in the difference
    prof1 = RPoly.profile(n, lambda r: fr(r) ** (p_star - 1), breaks=brk)
    prof2 = RPoly.profile(n, lambda r: fr(r) ** (p_star - 2), breaks=brk)
    dD1 = p_star * (prof1 * tf.dv).integrate(order=order)
    dD2 = 0.5 * p_star * (p_star - 1) * (prof2 * tf.dv * tf.dv).integrate(order=order)
    return dict(N0=N0, D0=D0, dN_flat=dN_flat, dN_metric_model=dN_met, dD_first=dD1, dD_second=dD2)


def total_energy_report(tf: TestFunction, spec: QuadratureSpec | None = None,
                        want_flux: bool = True) -> ComparisonReport:
    """Energy of the glued test function and its margin below the hemisphere constant."""
    n, eps, delta = tf.n, tf.eps, tf.delta
    Gm = tf.green
    spec = QuadratureSpec(samples=200, panels=16, order=8) if spec is None else spec
    a = conformal_constant(n)
    p = (n - 2) / n
    p_star = 2.0 * n / (n - 2)
    rho0 = Gm.rho0
    r_in, r_out = 4 * rho0 / 3, 5 * rho0 / 3
    model = MetricModel(n, Gm.H, rho0)
    flat = model.is_flat
    A2, R2 = quadratic_models(Gm.H)
    ex = _exact_parts(tf, A2, R2, r_in, 32)
    ex_lo = _exact_parts(tf, A2, R2, r_in, 24)
    radial_err = {k: abs(ex[k] - ex_lo[k]) for k in ex}

    grad_v = tf.grad
    grad_vm = tf.vm.grad()
    fr = tf.f_radial

    def fields(X):
        v = tf.v(X)
        dv = np.stack([g(X) for g in grad_v], axis=1)
        return v, dv

    def met_in(X):
        v, dv = fields(X)
        vm = tf.vm(X)
        dvm = np.stack([g(X) for g in grad_vm], axis=1)
        A, R = _metric_at(model, X)
        A2e = np.zeros_like(A)
        for i in range(n):
            for k in range(i, n):
                if not A2[i][k].is_zero:
                    A2e[:, i, k] = A2e[:, k, i] = A2[i][k](X)
        full = a * np.einsum("pik,pi,pk->p", A, dv, dv) + R * v ** 2
        mod = a * np.einsum("pik,pi,pk->p", A2e, dvm, dvm) + R2(X) * vm ** 2
        return full - mod

    def met_out(X):
        v, dv = fields(X)
        A, R = _metric_at(model, X)
        return a * np.einsum("pik,pi,pk->p", A, dv, dv) + R * v ** 2

    def crit_rem(X):
        v = tf.v(X)
        f = fr(np.linalg.norm(X, axis=1))
        d = v - f
        return v ** p_star - f ** p_star - p_star * f ** (p_star - 1) * d \
            - 0.5 * p_star * (p_star - 1) * f ** (p_star - 2) * d ** 2

    if flat:
        mc_in = mc_out = mc_D = (0.0, 0.0)
    else:
        mc_in = integrate_halfball(met_in, n, 0.0, r_in, eps, spec)
        mc_out = integrate_halfball(met_out, n, r_in, r_out, rho0, spec)
        mc_D = integrate_halfball(crit_rem, n, 0.0, 8 * max(delta, rho0), eps, spec)
    N0, D0 = ex["N0"], ex["D0"]
    dN = ex["dN_flat"] + ex["dN_metric_model"] + float(mc_in[0]) + float(mc_out[0])
    dD = ex["dD_first"] + ex["dD_second"] + float(mc_D[0])
    Y = sphere_constant(n).value
    E_flat = N0 / D0 ** p
    E_flat_minus_Y = E_flat - Y
    E_minus_E_flat = E_flat * math.expm1(math.log1p(dN / N0) - p * math.log1p(dD / D0))
    E = E_flat + E_minus_E_flat
    margin = -(E_flat_minus_Y + E_minus_E_flat)
    sN = math.hypot(float(mc_in[1]), float(mc_out[1]))
    sD = float(mc_D[1])
    sigma = E * math.hypot(sN / N0, p * sD / D0)
    rad = E * (math.fsum([radial_err["N0"], radial_err["dN_flat"], radial_err["dN_metric_model"]]) / N0
               + p * math.fsum([radial_err["D0"], radial_err["dD_first"], radial_err["dD_second"]]) / D0)
    budget = {
        "quadrature_sigma": sigma,
        "radial_quadrature": rad,
        "galerkin_residual_proxy": float(tf.sol.diagnostics.get("orthogonality", 0.0)),
        "green_residual_proxy": float(Gm.history.get("strong_residual_rms", [0.0])[-1]),
    }
    total = sigma + rad
    verdict = DEMONSTRATED if margin > BUDGET_FACTOR * total and margin > 0 else INCONCLUSIVE
    flux = flux_integral(Gm, delta).total if want_flux and delta <= r_in else float("nan")
    breakdown = dict(ex)
    breakdown.update({
        "dN_metric_mc_inner": float(mc_in[0]), "dN_metric_mc_outer": float(mc_out[0]),
        "dD_mc": float(mc_D[0]), "dN": dN, "dD": dD,
        "E_flat": E_flat, "E_flat_minus_Y": E_flat_minus_Y, "E_minus_E_flat": E_minus_E_flat,
        "min_v": tf.min_value,
    })
    return ComparisonReport(n, eps, delta, Gm.scale, E, Y, margin, eps ** (n - 2) * flux,
                            budget, total, verdict, breakdown)


# ---------------------------------------------------------------------------
# theorem-level experiments


def default_grid(rho0: float):
    deltas = [rho0 / 4, rho0 / 8, rho0 / 16]
    ratios = [1 / 2, 1 / 4, 1 / 8, 1 / 16]
    return [(d * r, d) for d in deltas for r in ratios]


@dataclass
class TheoremVerdict:
    verdict: str
    best: ComparisonReport | None
    reports: list
    flux: FluxConvergence | None = None
    notes: str = ""

    def to_json(self):
        return {
            "verdict": self.verdict, "notes": self.notes,
            "best": self.best.to_json() if self.best else None,
            "reports": [r.to_json() for r in self.reports],
            "flux": self.flux.to_json() if self.flux else None,
        }


def run_point(H, scale, eps, delta, Gm: GreenModel, D: int = 3, spec: QuadratureSpec | None = None):
    sol = solve_V(H, eps, delta, D, scale=scale)
    tf = build_testfunction(eps, delta, sol, Gm)
    return total_energy_report(tf, spec)


def theorem_check_nondegenerate(H, scale: float, rho0: float = 1.0, grid=None, D: int = 3,
                                spec: QuadratureSpec | None = None, green: GreenModel | None = None,
                                stop_early: bool = False) -> TheoremVerdict:
    """Search the (eps, delta) grid for a demonstrated strict inequality."""
    Gm = solve_green(H, scale, rho0) if green is None else green
    grid = default_grid(rho0) if grid is None else grid
    reports = []
    for eps, delta in grid:
        rep = run_point(H, scale, eps, delta, Gm, D, spec)
        reports.append(rep)
        if stop_early and rep.verdict == DEMONSTRATED:
            break
    best = max(reports, key=lambda r: r.margin - BUDGET_FACTOR * r.total_budget)
    verdict = DEMONSTRATED if any(r.verdict == DEMONSTRATED for r in reports) else INCONCLUSIVE
    if verdict == DEMONSTRATED:
        best = max((r for r in reports if r.verdict == DEMONSTRATED), key=lambda r: r.margin / r.total_budget
                   if r.total_budget > 0 else math.inf)
    return TheoremVerdict(verdict, best, reports)


def degenerate_verdict(flux: FluxConvergence, sigmas: float = 3.0) -> str | None:
    """``None`` when the limit is positive beyond its error, else the final verdict."""
    if flux.limit - sigmas * flux.limit_error > 0 and flux.limit > 0:
        return None
    return NO_CONCLUSION


def theorem_check_degenerate(H, scale: float, rho0: float = 1.0, deltas=None, eps_ratios=(1 / 2, 1 / 4, 1 / 8, 1 / 16),
                             D: int = 3, spec: QuadratureSpec | None = None, green: GreenModel | None = None,
                             flux: FluxConvergence | None = None, flux_deltas=None) -> TheoremVerdict:
    """Positive flux limit first; then delta, then eps, in that order."""
    Gm = solve_green(H, scale, rho0) if green is None else green
    if flux is None:
        fd = flux_deltas or [rho0 * 2.0 ** (-k) for k in range(1, 7)]
        flux = flux_convergence(Gm, fd)
    if Gm.is_flat or degenerate_verdict(flux) is not None:
        return TheoremVerdict(NO_CONCLUSION, None, [], flux, "flux limit not positive beyond its error")
    deltas = deltas or [rho0 / 4, rho0 / 8]
    reports = []
    for delta in deltas:
        for r in eps_ratios:
            rep = run_point(H, scale, delta * r, delta, Gm, D, spec)
            reports.append(rep)
            if rep.verdict == DEMONSTRATED:
                return TheoremVerdict(DEMONSTRATED, rep, reports, flux)
    best = max(reports, key=lambda r: r.margin - BUDGET_FACTOR * r.total_budget)
    return TheoremVerdict(INCONCLUSIVE, best, reports, flux, "positive flux but no grid point cleared the budget")


def negated(flux: FluxConvergence) -> FluxConvergence:
    """The same measurement with the sign of every flux value reversed."""
    return FluxConvergence(list(flux.deltas), [-v for v in flux.values], [-d for d in flux.differences],
                           list(flux.ratios), -flux.limit, flux.cauchy_defect, flux.limit_error)
