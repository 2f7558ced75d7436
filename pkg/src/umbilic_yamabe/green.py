"""Green's function of the conformal Laplacian on the half-space.

The pole sits at the boundary origin and the boundary condition is Neumann.
The metric is ``g = exp(h)`` with ``h = chi(|x|/rho0) H``, so G is flat
outside ``B_{5 rho0/3}``.  We write ``G = |x|^(2-n) + psi``.  The correction
solves the weak problem

    B_flat(psi, phi) + B_pert(psi, phi) = -B_pert(|x|^(2-n), phi)

with ``B_flat(f, phi) = a int df.dphi`` and
``B_pert(f, phi) = int a (g^{-1} - I) df dphi + R_g f phi``.  The Neumann
condition is natural in this formulation.  The unknown psi is expanded in a
Ritz basis ``x^e (s^2 + |x|^2)^(-(n-2+|e|)/2)`` over a few scales s, which has
the harmonic ``|x|^(2-n)`` tail.  ``B_flat`` is assembled in closed form and
``B_pert`` by quadrature.  The system is solved by the Born fixed-point
iteration ``B_flat c_{k+1} = -f - B_pert c_k``, whose contraction factor is
recorded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .energy import _metric_at, conformal_constant, quadratic_models
from .fpoly import FPoly, hemisphere_area
from .gauge import tensor_fpoly
from .metric import MetricModel, metric_jet_exact
from .quadrature import QuadratureSpec, hemisphere_directions, radial_panels, halfball_points
from .radial import RPoly, _mk, radial_moment, rsum


class GreenError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# image kernel


def fundamental_constant(n: int) -> float:
    """``c_n`` with ``-a Delta (c_n |x|^(2-n)) = delta_0``, ``a = 4(n-1)/(n-2)``."""
    area = 2 * math.pi ** (n / 2) / math.exp(gammaln(n / 2))
    return 1.0 / (conformal_constant(n) * (n - 2) * area)


@dataclass(frozen=True)
class KernelSpec:
    n: int

    @property
    def constant(self):
        return fundamental_constant(self.n)

    @staticmethod
    def image(y):
        y = np.array(y, dtype=float)
        y[..., -1] = -y[..., -1]
        return y


def neumann_kernel(x, y, n: int | None = None, grad: bool = False):
    """``c_n (|x-y|^(2-n) + |x-ybar|^(2-n))`` and optionally its x-gradient."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    n = x.shape[-1] if n is None else n
    ks = KernelSpec(n)
    d1 = x - y
    d2 = x - ks.image(y)
    r1 = np.linalg.norm(d1, axis=-1)
    r2 = np.linalg.norm(d2, axis=-1)
    if np.any(r1 == 0.0):
        raise ValueError("kernel evaluated at coincident points")
    if np.any(y[..., -1] < 0) or np.any(x[..., -1] < 0):
        raise ValueError("points must lie in the closed upper half-space")
    c = ks.constant
    val = c * (r1 ** (2 - n) + r2 ** (2 - n))
    if not grad:
        return val
    g = c * (2 - n) * (d1 * (r1 ** (-n))[..., None] + d2 * (r2 ** (-n))[..., None])
    return val, g


# ---------------------------------------------------------------------------
# Ritz basis


def _monos(n, deg):
    out = [()]
    res = []

    def rec(prefix, left, start):
        res.append(prefix)
        if left == 0:
            return
        for j in range(start, n):
            rec(prefix + (j,), left - 1, j)

    rec((), deg, 0)
    exps = []
    for t in res:
        e = [0] * n
        for j in t:
            e[j] += 1
        exps.append(tuple(e))
    del out
    return sorted(set(exps), key=lambda e: (sum(e), e[::-1]))


@dataclass
class RitzBasis:
    n: int
    exps: np.ndarray       # (m, n)
    scales: np.ndarray     # (m,)
    powers: np.ndarray     # (m,)  b in (s^2 + r^2)^(-b)

    def __len__(self):
        return len(self.scales)

    def eval(self, X, hess: bool = False):
        """Values ``(N, m)``, gradients ``(N, m, n)`` and optionally Hessians."""
        X = np.atleast_2d(X)
        E, s, b = self.exps, self.scales, self.powers
        n = self.n
        r2 = np.einsum("ij,ij->i", X, X)
        q = s[None, :] ** 2 + r2[:, None]                       # (N, m)
        qb = q ** (-b[None, :])
        mon = np.prod(X[:, None, :] ** E[None], axis=2)          # (N, m)
        val = mon * qb
        dmon = np.zeros((len(X), len(s), n))
        for k in range(n):
            Ek = E.copy()
            Ek[:, k] = np.maximum(Ek[:, k] - 1, 0)
            dmon[:, :, k] = E[None, :, k] * np.prod(X[:, None, :] ** Ek[None], axis=2)
        g = dmon * qb[:, :, None] - 2 * (b[None, :] * mon * qb / q)[:, :, None] * X[:, None, :]
        if not hess:
            return val, g
        Hs = np.zeros((len(X), len(s), n, n))
        for k in range(n):
            for l in range(k, n):
                Ekl = E.copy()
                Ekl[:, k] -= 1
                Ekl[:, l] -= 1
                coef = E[:, k] * (E[:, l] - (1 if k == l else 0))
                ok = np.all(Ekl >= 0, axis=1)
                d2 = np.zeros((len(X), len(s)))
                if ok.any():
                    d2[:, ok] = coef[ok][None] * np.prod(X[:, None, :] ** np.maximum(Ekl[ok], 0)[None], axis=2)
                t = d2 * qb
                t = t - 2 * b[None] * qb / q * (dmon[:, :, k] * X[:, None, l] + dmon[:, :, l] * X[:, None, k])
                t = t + 4 * b[None] * (b[None] + 1) * mon * qb / q ** 2 * X[:, None, k] * X[:, None, l]
                if k == l:
                    t = t - 2 * b[None] * mon * qb / q
                Hs[:, :, k, l] = Hs[:, :, l, k] = t
        return val, g, Hs

    def rpoly(self, c):
        """``sum c_j phi_j`` as an RPoly, grouped by (scale, power)."""
        n = self.n
        groups: dict = {}
        for e, s, b, cj in zip(self.exps, self.scales, self.powers, c):
            if cj == 0.0:
                continue
            groups.setdefault((float(s), float(b)), []).append((e, cj))
        out = RPoly(n)
        for (s, b), items in groups.items():
            P = FPoly(n, np.array([e for e, _ in items]), [cj for _, cj in items])
            out = out + RPoly.q(n, s, b, P)
        return out


def build_basis(n: int, rho0: float, degree: int = 2, scales=(0.125, 0.25, 0.5, 1.0)) -> RitzBasis:
    exps, sc, pw = [], [], []
    for s in scales:
        for e in _monos(n, degree):
            exps.append(e)
            sc.append(s * rho0)
            pw.append((n - 2 + sum(e)) / 2.0)
    return RitzBasis(n, np.array(exps, dtype=np.int64), np.array(sc), np.array(pw))


def _hemi(e):
    e = np.asarray(e)
    if np.any(e[:-1] % 2):
        return 0.0
    n = len(e)
    return math.exp(gammaln((e + 1) / 2.0).sum() - gammaln((e.sum() + n) / 2.0))


def flat_stiffness(B: RitzBasis) -> np.ndarray:
    """``a int grad phi_i . grad phi_j`` over the half-space, in closed form."""
    n, m = B.n, len(B)
    a = conformal_constant(n)
    K = np.zeros((m, m))

    def R(deg, s1, b1, s2, b2):
        key = _mk(((s1, b1), (s2, b2)), 0, ())
        return radial_moment(key, int(deg) + n - 1, 0.0, math.inf)

    for i in range(m):
        ei, si, bi = B.exps[i], float(B.scales[i]), float(B.powers[i])
        for j in range(i, m):
            ej, sj, bj = B.exps[j], float(B.scales[j]), float(B.powers[j])
            g = ei + ej
            dg = int(g.sum())
            tot = 0.0
            for k in range(n):
                if ei[k] and ej[k]:
                    gk = g.copy()
                    gk[k] -= 2
                    S = _hemi(gk)
                    if S:
                        tot += ei[k] * ej[k] * S * R(dg - 2, si, bi, sj, bj)
            S = _hemi(g)
            if S:
                tot += S * (-2 * bj * ei.sum() * R(dg, si, bi, sj, bj + 1)
                            - 2 * bi * ej.sum() * R(dg, si, bi + 1, sj, bj)
                            + 4 * bi * bj * R(dg + 2, si, bi + 1, sj, bj + 1))
            K[i, j] = K[j, i] = a * tot
    return K


# ---------------------------------------------------------------------------
# the model


@dataclass
class GreenModel:
    n: int
    scale: float
    rho0: float
    H: list                      # n x n FPoly (scaled)
    basis: RitzBasis
    coef: np.ndarray
    psi: RPoly
    history: dict = field(default_factory=dict)
    spec: QuadratureSpec | None = None

    @property
    def model(self) -> MetricModel:
        return MetricModel(self.n, self.H, self.rho0)

    @property
    def is_flat(self):
        return all(p.is_zero for row in self.H for p in row)

    def G(self, X):
        X = np.atleast_2d(X)
        r = np.linalg.norm(X, axis=1)
        return r ** (2 - self.n) + self.psi(X)

    def grad_G(self, X):
        X = np.atleast_2d(X)
        r = np.linalg.norm(X, axis=1)
        g0 = (2 - self.n) * X * (r ** (-self.n))[:, None]
        _, gb = self.basis.eval(X)
        return g0 + np.einsum("nmk,m->nk", gb, self.coef)

    def Phi(self, X):
        """``|x|^(n-2) G - 1``."""
        X = np.atleast_2d(X)
        r = np.linalg.norm(X, axis=1)
        return r ** (self.n - 2) * self.psi(X)

    def G_rpoly(self):
        """``|x|^(2-n) + psi`` as an RPoly (singular at 0)."""
        return RPoly.rpow(self.n, 2 - self.n) + self.psi

    def to_json(self, samples: int = 0, seed: int = 0):
        out = {
            "n": self.n, "scale": self.scale, "support_radius": 5 * self.rho0 / 3, "rho0": self.rho0,
            "basis_size": len(self.basis), "coefficients": [float(c) for c in self.coef],
            "diagnostics": self.history,
        }
        if samples:
            X = halfball_points(self.n, samples, 5 * self.rho0 / 3, seed)
            out["phi_samples"] = [{"x": [float(v) for v in x], "phi": float(p)} for x, p in zip(X, self.Phi(X))]
        return out


def _perturbation_terms(B: RitzBasis, model: MetricModel, spec: QuadratureSpec, chunk_dirs: int = 64):
    """``B_pert`` and ``f_j = B_pert(|x|^(2-n), phi_j)``.

    ``f`` uses the quadratic metric model in closed form where h equals the
    polynomial tensor and quadrature for the remainder; ``B_pert`` is
    integrated by quadrature only.
    """
    n, m = B.n, len(B)
    a = conformal_constant(n)
    rho0 = model.rho0
    r_in, r1 = 4 * rho0 / 3, 5 * rho0 / 3
    A2, R2 = quadratic_models(model.H)
    A2x = [sum((A2[i][k] * FPoly.var(n, k) for k in range(n)), FPoly(n)) for i in range(n)]
    f_exact = np.zeros(m)
    G0 = RPoly.rpow(n, 2 - n)
    dG0A2 = [RPoly.rpow(n, -n, 2.0 - n) * A2x[i] for i in range(n)]
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        phi = B.rpoly(e)
        acc = G0 * phi * R2
        for i in range(n):
            if not A2x[i].is_zero:
                acc = acc + dG0A2[i] * phi.deriv(i) * a
        f_exact[j] = acc.integrate(0.0, r_in)
    A2e = _eval_tensor_list(A2)
    Kp = np.zeros((m, m))
    fdir = []
    for lo, hi, sub in ((0.0, r_in, True), (r_in, r1, False)):
        rn, rw = radial_panels(lo, hi, rho0 / 8, spec.panels, spec.order)
        dirs = hemisphere_directions(n, spec.samples, spec.seed)
        area = hemisphere_area(n)
        part = []
        for s0 in range(0, len(dirs), chunk_dirs):
            th = dirs[s0:s0 + chunk_dirs]
            X = (th[:, None, :] * rn[None, :, None]).reshape(-1, n)
            w = np.tile(rw * rn ** (n - 1), len(th)) * area / len(dirs)
            A, R = _metric_at(model, X)
            val, g = B.eval(X)
            r = np.linalg.norm(X, axis=1)
            G0v = r ** (2 - n)
            dG0 = (2 - n) * X * (r ** (-n))[:, None]
            Ag = np.einsum("pik,pmk->pmi", A, g)
            Kp += np.tensordot(g * (a * w)[:, None, None], Ag, axes=([0, 2], [0, 2]))
            Kp += (val * (w * R)[:, None]).T @ val
            if sub:
                A = A - A2e(X)
                R = R - R2(X)
            fp = a * np.einsum("pi,pik,pmk->pm", dG0, A, g) + (R * G0v)[:, None] * val
            wr = rw * rn ** (n - 1)
            part.append(np.einsum("drm,r->dm", fp.reshape(len(th), len(rn), m), wr) * area)
        fdir.append(np.concatenate(part, axis=0))
    Kp = 0.5 * (Kp + Kp.T)
    fd = fdir[0] + fdir[1]
    f = f_exact + fd.mean(axis=0)
    fse = fd.std(axis=0, ddof=1) / math.sqrt(len(fd)) if len(fd) > 1 else np.zeros(m)
    return Kp, f, fse


def _eval_tensor_list(T):
    n = len(T)

    def ev(X):
        out = np.zeros((len(X), n, n))
        for i in range(n):
            for k in range(i, n):
                if not T[i][k].is_zero:
                    out[:, i, k] = out[:, k, i] = T[i][k](X)
        return out

    return ev


def _strong_rows(B: RitzBasis, model: MetricModel, X):
    """``L_g phi_j`` and ``L_g |x|^(2-n)`` at points, with a term-size scale."""
    n = B.n
    a = conformal_constant(n)
    h, g, dg, d2g, _ = metric_jet_exact(model, X)
    lam, Q = np.linalg.eigh(h)
    ginv = (Q * np.exp(-lam)[:, None, :]) @ np.swapaxes(Q, -1, -2)
    from .metric import scalar_curvature
    R = scalar_curvature(g, dg, d2g)
    # d_i g^{ik} = -(g^-1 (d_i g) g^-1)_{ik}
    dginv = -np.einsum("pab,pibc,pcd->piad", ginv, dg, ginv)
    divg = np.einsum("piik->pk", dginv)
    val, gr, Hs = B.eval(X, hess=True)
    rows = -a * (np.einsum("pk,pmk->pm", divg, gr) + np.einsum("pik,pmik->pm", ginv, Hs)) + R[:, None] * val
    r = np.linalg.norm(X, axis=1)
    G0 = r ** (2 - n)
    dG0 = (2 - n) * X * (r ** (-n))[:, None]
    eye = np.eye(n)
    H0 = (2 - n) * (r ** (-n))[:, None, None] * (eye[None] - n * X[:, :, None] * X[:, None, :] / (r ** 2)[:, None, None])
    row0 = -a * (np.einsum("pk,pk->p", divg, dG0) + np.einsum("pik,pik->p", ginv, H0)) + R * G0
    size = a * np.linalg.norm(H0, axis=(1, 2)) + np.abs(R * G0) + a * np.abs(np.einsum("pk,pk->p", divg, dG0))
    return rows, row0, size


def _spd_solver(K, rcond=1e-10):
    d = np.sqrt(np.diag(K))
    Ks = K / np.outer(d, d)
    lam, U = np.linalg.eigh(Ks)
    keep = lam > rcond * lam[-1]

    def solve(b):
        y = U[:, keep].T @ (b / d)
        return (U[:, keep] @ (y / lam[keep])) / d

    return solve, float(lam[-1] / lam[keep][0])


def solve_green(H, scale: float = 1.0, rho0: float = 1.0, tol: float = 1e-10,
                spec: QuadratureSpec | None = None, degree: int = 2,
                scales=(0.25, 0.5, 1.0), max_iter: int = 200,
                residual_points: int = 400, seed: int = 0, rcond: float = 1e-10) -> GreenModel:
    """Ritz-Born solve for ``G = |x|^(2-n) + psi``."""
    Hx = tensor_fpoly(H, scale)
    n = len(Hx)
    spec = QuadratureSpec(samples=400, panels=16, order=8, seed=seed) if spec is None else spec
    B = build_basis(n, rho0, degree, scales)
    m = len(B)
    model = MetricModel(n, Hx, rho0)
    if model.is_flat:
        hist = {"iterations": 0, "contraction": [], "weak_residual": [0.0], "strong_residual_rms": [0.0],
                "converged": True, "basis_size": m}
        return GreenModel(n, scale, rho0, Hx, B, np.zeros(m), RPoly(n), hist, spec)
    K0 = flat_stiffness(B)
    solve, cond = _spd_solver(K0, rcond)
    Kp, f, fse = _perturbation_terms(B, model, spec)
    Xr = halfball_points(n, residual_points, 5 * rho0 / 3, seed + 101)
    Xr = Xr[np.linalg.norm(Xr, axis=1) > 0.05 * rho0]
    rows, row0, size = _strong_rows(B, model, Xr)
    c = np.zeros(m)
    hist = {"contraction": [], "weak_residual": [], "strong_residual_rms": [], "flat_condition": cond,
            "basis_size": m, "rhs_stderr_max": float(np.max(fse)) if len(fse) else 0.0}

    def bnorm(v):
        return math.sqrt(max(float(v @ K0 @ v), 0.0))

    def record(cv):
        r = -f - (K0 + Kp) @ cv
        hist["weak_residual"].append(math.sqrt(max(float(r @ solve(r)), 0.0)))
        s = row0 + rows @ cv
        hist["strong_residual_rms"].append(float(np.sqrt(np.mean((s / size) ** 2))))

    record(c)
    prev = None
    converged = False
    for it in range(max_iter):
        cn = solve(-f - Kp @ c)
        step = bnorm(cn - c)
        if prev is not None and prev > 0:
            hist["contraction"].append(step / prev)
            if it >= 2 and hist["contraction"][-1] > 0.9 and hist["contraction"][-2] > 0.9:
                raise GreenError(f"Born iteration does not contract (factor {hist['contraction'][-1]:.3f}); "
                                 f"reduce the scale (currently {scale})")
        c = cn
        record(c)
        prev = step
        if step <= tol * max(bnorm(c), 1e-300):
            converged = True
            break
    hist["iterations"] = len(hist["contraction"]) + 1
    hist["converged"] = converged
    hist["psi_energy"] = bnorm(c)
    return GreenModel(n, scale, rho0, Hx, B, c, B.rpoly(c), hist, spec)


# ---------------------------------------------------------------------------
# flux integral


def _h_flux_poly(H, n):
    """``sum_ik x_i (|x|^2 d_k H_ik - 2n x_k H_ik)`` as an FPoly."""
    r2 = sum((FPoly.var(n, j) * FPoly.var(n, j) for j in range(n)), FPoly(n))
    acc = FPoly(n)
    for i in range(n):
        xi = FPoly.var(n, i)
        for k in range(n):
            p = H[i][k]
            if p.is_zero:
                continue
            acc = acc + xi * (r2 * p.deriv(k) - FPoly.var(n, k) * p * (2.0 * n))
    return acc


@dataclass
class FluxValue:
    delta: float
    total: float
    green_part: float
    metric_part: float


def flux_integral(Gm: GreenModel, delta: float) -> FluxValue:
    """The flux integral over ``{|x| = delta, x_n > 0}``.

    The ``|x|^(2-n)`` part of G cancels in the first integrand, leaving
    ``a int |x|^(2-n) d_r psi + (n-2) |x|^(1-n) psi``.
    """
    n = Gm.n
    if not delta > 0:
        raise ValueError("delta must be positive")
    if delta > 4 * Gm.rho0 / 3:
        raise ValueError("delta must lie inside the region where h equals the polynomial tensor")
    a = conformal_constant(n)
    psi = Gm.psi
    if psi.is_zero:
        gp = 0.0
    else:
        radial = rsum([psi.deriv(i) * FPoly.var(n, i) for i in range(n)], n)    # r d_r psi
        integrand = radial * (delta ** (1 - n)) + psi * ((n - 2) * delta ** (1 - n))
        gp = a * integrand.integrate_sphere(delta)
    P = _h_flux_poly(Gm.H, n)
    mp = -RPoly.poly(P).integrate_sphere(delta) * delta ** (1 - 2 * n) if not P.is_zero else 0.0
    return FluxValue(float(delta), gp + mp, gp, mp)


@dataclass
class FluxConvergence:
    deltas: list
    values: list
    differences: list
    ratios: list              # successive |difference| ratios (>= 2 means halving)
    limit: float              # extrapolated with the observed (or O(delta)) contraction rate
    cauchy_defect: float      # max successive |difference|
    limit_error: float

    def to_json(self):
        return self.__dict__


def flux_convergence(Gm: GreenModel, deltas) -> FluxConvergence:
    deltas = [float(d) for d in deltas]
    if any(b >= a for a, b in zip(deltas[:-1], deltas[1:])):
        raise ValueError("delta list must be decreasing")
    vals = [flux_integral(Gm, d).total for d in deltas]
    diffs = [b - a for a, b in zip(vals[:-1], vals[1:])]
    ratios = [abs(d0) / abs(d1) if d1 != 0 else math.inf for d0, d1 in zip(diffs[:-1], diffs[1:])]
    if len(vals) >= 2:
        # geometric tail of the differences; the observed contraction rate when it is
        # available and faster than the O(delta) rate, else O(delta)
        q = deltas[-2] / deltas[-1]
        if ratios and math.isfinite(ratios[-1]) and ratios[-1] > q:
            q = ratios[-1]
        limit = vals[-1] + (vals[-1] - vals[-2]) / (q - 1)
        err = abs(limit - vals[-1])
    else:
        limit, err = vals[-1], math.inf
    return FluxConvergence(deltas, vals, diffs, ratios, limit,
                           max((abs(d) for d in diffs), default=0.0), err)


def green_bound_constant(Gm: GreenModel, samples: int = 500, seed: int = 0) -> float:
    """``max |G - |x|^(2-n)| / sum_alpha |h_alpha| |x|^(|alpha|+2-n)`` over ``|x| < rho0``."""
    from .energy import coefficient_profile
    n = Gm.n
    X = halfball_points(n, samples, Gm.rho0, seed)
    r = np.linalg.norm(X, axis=1)
    prof: dict = {}
    for row in Gm.H:
        for p in row:
            for e, c in zip(p.exps, p.coefs):
                d = int(e.sum())
                prof[d] = prof.get(d, 0.0) + abs(float(c))
    w = sum(v * r ** (d + 2 - n) for d, v in prof.items())
    if np.all(w == 0):
        return 0.0
    return float(np.max(np.abs(Gm.psi(X)) / w))
