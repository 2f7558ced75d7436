"""Seeded sampling, radial Gauss-Legendre panels and the smooth cutoff."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .fpoly import hemisphere_area


# ---------------------------------------------------------------------------
# smooth cutoff: chi(t) = 1 for t <= 4/3, 0 for t >= 5/3


def _f(tau):
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    m = tau > 0
    out[m] = np.exp(-1.0 / tau[m])
    return out


def _f1(tau):
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    m = tau > 0
    out[m] = np.exp(-1.0 / tau[m]) / tau[m] ** 2
    return out


def _f2(tau):
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    m = tau > 0
    t = tau[m]
    out[m] = np.exp(-1.0 / t) * (1.0 / t ** 4 - 2.0 / t ** 3)
    return out


def chi(t):
    t = np.asarray(t, dtype=float)
    a, b = 5.0 - 3.0 * t, 3.0 * t - 4.0
    fa, fb = _f(a), _f(b)
    return fa / (fa + fb)


def chi_derivs(t):
    """``(chi, chi', chi'')`` in the scalar variable t."""
    t = np.asarray(t, dtype=float)
    a, b = 5.0 - 3.0 * t, 3.0 * t - 4.0
    N, S = _f(a), _f(a) + _f(b)
    N1 = -3.0 * _f1(a)
    S1 = -3.0 * _f1(a) + 3.0 * _f1(b)
    N2 = 9.0 * _f2(a)
    S2 = 9.0 * _f2(a) + 9.0 * _f2(b)
    c0 = N / S
    c1 = (N1 * S - N * S1) / S ** 2
    c2 = (N2 * S - N * S2) / S ** 2 - 2.0 * S1 * (N1 * S - N * S1) / S ** 3
    return c0, c1, c2


def radial_cutoff(X, delta):
    """``chi(|x|/delta)`` with its gradient and Hessian in x."""
    X = np.atleast_2d(X)
    r = np.linalg.norm(X, axis=1)
    c0, c1, c2 = chi_derivs(r / delta)
    rs = np.where(r > 0, r, 1.0)
    e = X / rs[:, None]
    grad = (c1 / delta)[:, None] * e
    n = X.shape[1]
    eye = np.eye(n)
    # d_i d_k chi = chi'' e_i e_k / delta^2 + chi' (delta_ik - e_i e_k) / (r delta)
    hess = (c2 / delta ** 2)[:, None, None] * e[:, :, None] * e[:, None, :] \
        + (c1 / (rs * delta))[:, None, None] * (eye[None] - e[:, :, None] * e[:, None, :])
    return c0, grad, hess


# ---------------------------------------------------------------------------
# sampling


def hemisphere_directions(n: int, count: int, seed: int) -> np.ndarray:
    """Uniform directions on the upper unit half-sphere ``theta_n >= 0``."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1)[:, None]
    g[:, -1] = np.abs(g[:, -1])
    return g


def boundary_disk_points(n: int, count: int, radius: float, seed: int) -> np.ndarray:
    """Uniform points of ``{|x| < radius, x_n = 0}``."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, n - 1))
    g /= np.linalg.norm(g, axis=1)[:, None]
    r = radius * rng.random(count) ** (1.0 / (n - 1))
    out = np.zeros((count, n))
    out[:, :-1] = g * r[:, None]
    return out


def halfball_points(n: int, count: int, radius: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1)[:, None]
    g[:, -1] = np.abs(g[:, -1])
    r = radius * rng.random(count) ** (1.0 / n)
    return g * r[:, None]


def radial_panels(r0: float, r1: float, scale: float, panels: int = 24, order: int = 12):
    """Gauss-Legendre nodes on log-spaced panels, clustered near ``scale``.

    The first panel starts at ``r0`` (which may be 0); breakpoints are
    geometric between ``max(r0, scale/64)`` and ``r1``.
    """
    lo = max(r0, min(scale / 64.0, r1 / 64.0))
    brk = np.geomspace(lo, r1, panels)
    if r0 < lo:
        brk = np.concatenate([[r0], brk])
    xg, wg = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(brk[:-1], brk[1:]):
        nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def compensated_sum(values) -> float:
    return math.fsum(np.ravel(np.asarray(values, dtype=float)).tolist())


@dataclass(frozen=True)
class QuadratureSpec:
    mode: str = "radial-mc"      # "exact-moment" or "radial-mc"
    samples: int = 20000         # angular directions
    seed: int = 0
    panels: int = 24
    order: int = 12

    def to_json(self):
        return asdict(self)


def integrate_halfball(f, n: int, r0: float, r1: float, scale: float, spec: QuadratureSpec,
                       chunk: int = 512):
    """``int_{r0<|x|<r1, x_n>0} f(x) dx`` by radial panels times angular MC.

    ``f`` maps an ``(m, n)`` array to ``(m,)`` or ``(m, k)`` values.
    Returns ``(estimate, standard_error)`` (arrays when f is vector valued).
    """
    rn, rw = radial_panels(r0, r1, scale, spec.panels, spec.order)
    dirs = hemisphere_directions(n, spec.samples, spec.seed)
    area = hemisphere_area(n)
    w = rw * rn ** (n - 1)
    per_dir = []
    for s in range(0, len(dirs), chunk):
        th = dirs[s:s + chunk]
        X = (th[:, None, :] * rn[None, :, None]).reshape(-1, n)
        v = np.asarray(f(X), dtype=float)
        v = v.reshape(len(th), len(rn), *v.shape[1:])
        per_dir.append(np.tensordot(w, v, axes=([0], [1])) if v.ndim > 2 else v @ w)
    I = np.concatenate(per_dir, axis=0)
    est = area * I.mean(axis=0)
    se = area * I.std(axis=0, ddof=1) / math.sqrt(len(I))
    return est, se


def integrate_halfsphere(f, n: int, R: float, spec: QuadratureSpec, chunk: int = 8192):
    """``int_{|x|=R, x_n>0} f dS`` by angular MC; returns ``(estimate, se)``."""
    dirs = hemisphere_directions(n, spec.samples, spec.seed + 7919)
    area = hemisphere_area(n) * R ** (n - 1)
    vals = np.concatenate([np.asarray(f(R * dirs[s:s + chunk]), float)
                           for s in range(0, len(dirs), chunk)])
    return area * vals.mean(axis=0), area * vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
