"""Pointwise evaluation of ``g = exp(h)`` and its curvature by finite differences.

``h(x) = chi(|x| / rho0) * H(x)`` with H a polynomial tensor (the scale is
folded into H).  Because h is symmetric, ``exp(h)`` is computed from a batched
eigendecomposition, which is exact up to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import chi


class MetricError(ValueError):
    pass


def expm_sym(h):
    """Matrix exponential of a batch of symmetric matrices."""
    lam, Q = np.linalg.eigh(h)
    return np.einsum("...ij,...j,...kj->...ik", Q, np.exp(lam), Q)


@dataclass
class MetricModel:
    """Compactly supported perturbation of the flat half-space."""
    n: int
    H: list            # n x n FPoly, already multiplied by the scale
    rho0: float = 1.0

    def h(self, X):
        X = np.atleast_2d(X)
        n = self.n
        out = np.zeros((len(X), n, n))
        cut = chi(np.linalg.norm(X, axis=1) / self.rho0)
        live = cut > 0
        if not live.any():
            return out
        Y = X[live]
        blk = np.zeros((len(Y), n, n))
        for i in range(n):
            for k in range(i, n):
                p = self.H[i][k]
                if not p.is_zero:
                    v = p(Y)
                    blk[:, i, k] = blk[:, k, i] = v
        out[live] = blk * cut[live, None, None]
        return out

    def g(self, X):
        return expm_sym(self.h(X))

    @property
    def support_radius(self):
        return 5.0 * self.rho0 / 3.0

    @property
    def is_flat(self):
        return all(p.is_zero for row in self.H for p in row)


# central-difference weights
_D1 = {2: ([-1, 1], [-0.5, 0.5]),
       4: ([-2, -1, 1, 2], [1 / 12, -2 / 3, 2 / 3, -1 / 12])}
_D2 = {2: ([-1, 0, 1], [1.0, -2.0, 1.0]),
       4: ([-2, -1, 0, 1, 2], [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12])}


def metric_derivatives(gfun, X, step, order=4):
    """``(g, dg, d2g)`` with ``dg[..., a, i, k] = d_a g_ik`` and ``d2g[..., a, b, i, k]``."""
    if order not in _D1:
        raise ValueError("order must be 2 or 4")
    X = np.atleast_2d(np.asarray(X, float))
    N, n = X.shape
    o1, w1 = _D1[order]
    o2, w2 = _D2[order]
    # collect all stencil offsets
    offs = {(): None}
    for a in range(n):
        for s in set(o1) | set(o2):
            if s:
                offs[((a, s),)] = None
        for b in range(a + 1, n):
            for s in o1:
                for t in o1:
                    offs[((a, s), (b, t))] = None
    keys = list(offs)
    D = np.zeros((len(keys), n))
    for j, key in enumerate(keys):
        for a, s in key:
            D[j, a] += s * step
    P = (X[:, None, :] + D[None, :, :]).reshape(-1, n)
    G = gfun(P).reshape(N, len(keys), n, n)
    at = {key: j for j, key in enumerate(keys)}
    g0 = G[:, at[()]].copy()
    G = G - g0[:, None]
    dg = np.zeros((N, n, n, n))
    d2g = np.zeros((N, n, n, n, n))
    for a in range(n):
        for s, w in zip(o1, w1):
            dg[:, a] += w * G[:, at[((a, s),)]]
        for s, w in zip(o2, w2):
            key = () if s == 0 else ((a, s),)
            d2g[:, a, a] += w * G[:, at[key]]
        for b in range(a + 1, n):
            acc = 0.0
            for s, ws in zip(o1, w1):
                for t, wt in zip(o1, w1):
                    acc = acc + ws * wt * G[:, at[((a, s), (b, t))]]
            d2g[:, a, b] = d2g[:, b, a] = acc
    dg /= step
    d2g /= step * step
    return g0, dg, d2g


def scalar_curvature(g, dg, d2g):
    """Scalar curvature from a 2-jet of the metric (batched)."""
    gi = np.linalg.inv(g)
    # Gamma_{a,ij} = 1/2 (d_i g_ja + d_j g_ia - d_a g_ij)
    Gl = 0.5 * (np.einsum("...ija->...aij", dg) + np.einsum("...jia->...aij", dg) - dg)
    Gam = np.einsum("...ka,...aij->...kij", gi, Gl)
    # d_m Gamma_{a,ij}
    dGl = 0.5 * (np.einsum("...mija->...maij", d2g) + np.einsum("...mjia->...maij", d2g)
                 - d2g)
    dgi = -np.einsum("...kb,...mbc,...ca->...mka", gi, dg, gi)
    dGam = np.einsum("...mka,...aij->...mkij", dgi, Gl) + np.einsum("...ka,...maij->...mkij", gi, dGl)
    # R = g^ij (d_k G^k_ij - d_j G^k_ik + G^k_kl G^l_ij - G^k_jl G^l_ik)
    t1 = np.einsum("...kkij->...ij", dGam)
    t2 = np.einsum("...jkik->...ij", dGam)
    t3 = np.einsum("...kkl,...lij->...ij", Gam, Gam)
    t4 = np.einsum("...kjl,...lik->...ij", Gam, Gam)
    return np.einsum("...ij,...ij->...", gi, t1 - t2 + t3 - t4)


@dataclass
class MetricJet:
    x: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray
    R: np.ndarray
    R_linear: np.ndarray        # sum_ik d_i d_k h_ik
    normal_defect: float        # max |g_in - delta_in|
    det_drift: np.ndarray       # det g - 1
    mean_curvature: np.ndarray  # max |d_n g_ik| at boundary points, nan elsewhere

    @property
    def R_minus_linear(self):
        return self.R - self.R_linear


def default_step(model: MetricModel, order: int) -> float:
    return model.rho0 * (2e-3 if order == 4 else 1e-4)


def metric_eval(model: MetricModel, X, step: float | None = None, order: int = 4) -> MetricJet:
    X = np.atleast_2d(np.asarray(X, float))
    n = model.n
    h0 = model.h(X)
    lam = np.linalg.eigvalsh(h0)
    if not np.all(np.isfinite(lam)) or np.max(np.abs(lam)) > 30:
        raise MetricError("metric exponent too large; g is numerically degenerate (reduce the scale)")
    step = default_step(model, order) if step is None else step
    g, dg, d2g = metric_derivatives(model.g, X, step, order)
    ev = np.linalg.eigvalsh(g)
    if np.min(ev) <= 0:
        raise MetricError("g is not positive definite")
    R = scalar_curvature(g, dg, d2g)
    # linear model sum d_i d_k h_ik from the same stencil of h
    _, dh, d2h = metric_derivatives(model.h, X, step, order)
    Rlin = np.einsum("...ikik->...", d2h)
    e = np.zeros(n)
    e[-1] = 1.0
    nd = float(np.max(np.abs(g[..., :, -1] - e))) if len(X) else 0.0
    det = np.linalg.det(g) - 1.0
    on_bdry = np.abs(X[:, -1]) < 1e-14
    mc = np.where(on_bdry, np.max(np.abs(dg[:, -1]), axis=(1, 2)), np.nan)
    return MetricJet(X, g, dg, d2g, R, Rlin, nd, det, mc)


# ---------------------------------------------------------------------------
# conformally flat oracle: g = exp(2f) delta


def conformal_flat(n, f, df, d2f):
    """Metric function and exact scalar curvature for ``g = e^(2f) delta``.

    ``f, df, d2f`` map ``(N, n)`` points to values, gradients, Hessians.
    """
    def gfun(X):
        return np.exp(2 * f(X))[:, None, None] * np.eye(n)[None]

    def R(X):
        lap = np.trace(d2f(X), axis1=1, axis2=2)
        gr = df(X)
        return -np.exp(-2 * f(X)) * (2 * (n - 1) * lap + (n - 2) * (n - 1) * np.einsum("ij,ij->i", gr, gr))

    return gfun, R


# ---------------------------------------------------------------------------
# analytic 2-jet of exp(h) through divided differences in the eigenbasis


_NTERMS = 60


def _divided_differences(lam):
    """First and second divided differences of exp on the eigenvalues.

    Uses ``f[a,b] = sum_m h_(m-1)(a,b)/m!`` and ``f[a,b,c] = sum_m h_(m-2)(a,b,c)/m!``
    (complete homogeneous symmetric polynomials) after shifting by the mean,
    which is stable for coincident eigenvalues.
    """
    s = lam.mean(axis=-1, keepdims=True)
    mu = lam - s
    if np.max(np.abs(mu), initial=0.0) > 12:
        raise MetricError("eigenvalue spread of h too large for the jet series")
    a = mu[..., :, None, None]
    b = mu[..., None, :, None]
    c = mu[..., None, None, :]
    shape = np.broadcast_shapes(a.shape, b.shape, c.shape)
    # h_k(a), h_k(a,b), h_k(a,b,c) by recurrence
    ha = np.ones(shape)
    hab = np.ones(shape)
    habc = np.ones(shape)
    F1 = np.zeros(shape)
    F2 = np.zeros(shape)
    fact = 1.0
    F1 += hab          # m = 1 term: h_0 / 1!
    rad = float(np.max(np.abs(mu), initial=0.0))
    for m in range(2, _NTERMS):
        if m > 4 and (rad ** (m - 2)) * m * m / fact < 1e-18:
            break
        fact *= m
        # advance: h_(m-2)(a,b,c) is current habc; add to F2
        F2 += habc / fact
        ha = ha * a
        hab = hab * b + ha
        habc = habc * c + hab
        F1 += hab / fact
    e = np.exp(s)
    return e[..., None] * F1[..., :, :, 0], e[..., None, None] * F2


def metric_jet_exact(model: MetricModel, X):
    """``(h, g, dg, d2g)`` from the polynomial jets of h and the exponential's divided differences."""
    X = np.atleast_2d(np.asarray(X, float))
    N, n = X.shape
    from .quadrature import radial_cutoff
    c0, c1, c2 = radial_cutoff(X, model.rho0)
    H = np.zeros((N, n, n))
    dH = np.zeros((N, n, n, n))
    d2H = np.zeros((N, n, n, n, n))
    for i in range(n):
        for k in range(i, n):
            p = model.H[i][k]
            if p.is_zero:
                continue
            H[:, i, k] = H[:, k, i] = p(X)
            for a in range(n):
                pa = p.deriv(a)
                if pa.is_zero:
                    continue
                dH[:, a, i, k] = dH[:, a, k, i] = pa(X)
                for b in range(a, n):
                    v = pa.deriv(b)(X)
                    d2H[:, a, b, i, k] = d2H[:, a, b, k, i] = v
                    d2H[:, b, a, i, k] = d2H[:, b, a, k, i] = v
    h = c0[:, None, None] * H
    dh = c0[:, None, None, None] * dH + c1[:, :, None, None] * H[:, None]
    d2h = (c0[:, None, None, None, None] * d2H
           + c1[:, :, None, None, None] * dH[:, None] + c1[:, None, :, None, None] * dH[:, :, None]
           + c2[:, :, :, None, None] * H[:, None, None])
    lam, Q = np.linalg.eigh(h)
    F1, F2 = _divided_differences(lam)
    Qt = np.swapaxes(Q, -1, -2)
    g = (Q * np.exp(lam)[:, None, :]) @ Qt
    A = Qt[:, None] @ dh @ Q[:, None]
    C = Qt[:, None, None] @ d2h @ Q[:, None, None]
    dgh = F1[:, None] * A
    # d_a d_b g = F1 o C_ab + sum_k F2_ikj (A_a,ik A_b,kj + A_b,ik A_a,kj)
    P = np.einsum("nikj,naik,nbkj->nabij", F2, A, A, optimize=True)
    d2gh = F1[:, None, None] * C + P + np.swapaxes(P, 1, 2)
    dg = Q[:, None] @ dgh @ Qt[:, None]
    d2g = Q[:, None, None] @ d2gh @ Qt[:, None, None]
    return h, g, dg, d2g, np.einsum("nikik->n", d2h)


def scalar_curvature_exact(model: MetricModel, X):
    _, g, dg, d2g, _ = metric_jet_exact(model, X)
    return scalar_curvature(g, dg, d2g)
