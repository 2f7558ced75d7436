"""The standard bubble ``u_eps = (eps / (eps^2 + |x|^2))^((n-2)/2)`` and related constants."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .fpoly import hemisphere_area, radial_integral


@dataclass(frozen=True)
class BubbleParams:
    n: int
    eps: float

    def __post_init__(self):
        if self.n < 3 or not self.eps > 0:
            raise ValueError("need n >= 3 and eps > 0")


def u_eval(p: BubbleParams, x):
    """Value, gradient and Hessian of ``u_eps`` at one point or a batch of points."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    n, eps = p.n, p.eps
    q = eps * eps + np.einsum("ij,ij->i", X, X)
    u = (eps / q) ** ((n - 2) / 2)
    grad = -(n - 2) * X * (u / q)[:, None]
    eye = np.eye(n)
    hess = -(n - 2) * ((u / q)[:, None, None] * eye[None]
                       - n * (u / q ** 2)[:, None, None] * X[:, :, None] * X[:, None, :])
    if single:
        return u[0], grad[0], hess[0]
    return u, grad, hess


@dataclass
class IdentityResiduals:
    laplace: np.ndarray
    hessian: np.ndarray
    laplace_scale: np.ndarray
    hessian_scale: np.ndarray

    @property
    def laplace_relative(self):
        return np.abs(self.laplace) / self.laplace_scale

    @property
    def hessian_relative(self):
        return self.hessian / self.hessian_scale


def identity_residuals(p: BubbleParams, x) -> IdentityResiduals:
    """Residuals of ``Delta u + n(n-2) u^((n+2)/(n-2)) = 0`` and of the trace-free Hessian identity."""
    n = p.n
    u, g, h = u_eval(p, np.atleast_2d(x))
    lap = np.trace(h, axis1=1, axis2=2)
    src = n * (n - 2) * u ** ((n + 2) / (n - 2))
    lres = lap + src
    c = n / (n - 2)
    gg = g[:, :, None] * g[:, None, :]
    M = u[:, None, None] * h - c * gg
    tr = u * lap - c * np.einsum("ij,ij->i", g, g)
    M = M - (tr / n)[:, None, None] * np.eye(n)[None]
    hres = np.abs(M).max(axis=(1, 2))
    hscale = np.maximum(np.abs(u[:, None, None] * h).max(axis=(1, 2)), c * np.abs(gg).max(axis=(1, 2)))
    return IdentityResiduals(lres, hres, np.maximum(np.abs(lap), src), hscale)


# ---------------------------------------------------------------------------
# half-space moments


def halfspace_moment(n: int, p: float, alpha) -> float:
    """``int_{R^n_+} (1 + |x|^2)^(-p) x^alpha dx`` in closed form."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != n:
        raise ValueError("multi-index length must equal n")
    if not 2 * p > n + sum(alpha):
        raise ValueError(f"divergent moment: need 2p > n + |alpha| (p={p}, |alpha|={sum(alpha)})")
    if any(a % 2 for a in alpha[:-1]):
        return 0.0
    s = sum(gammaln((a + 1) / 2) for a in alpha) + gammaln(p - (sum(alpha) + n) / 2) - gammaln(p)
    return 0.5 * math.exp(s)


def halfspace_moment_mc(n: int, p: float, alpha, samples: int = 200_000, seed: int = 0):
    """MC estimate and standard error with ``r = s/(1-s)``, ``s`` uniform."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((samples, n))
    g /= np.linalg.norm(g, axis=1)[:, None]
    g[:, -1] = np.abs(g[:, -1])
    s = rng.random(samples)
    r = s / (1.0 - s)
    a = np.asarray(alpha)
    f = np.prod(g ** a, axis=1) * r ** (n - 1 + a.sum()) * (1 + r * r) ** (-p) / (1.0 - s) ** 2
    area = hemisphere_area(n)
    return area * f.mean(), area * f.std(ddof=1) / math.sqrt(samples)


@dataclass
class SphereConstant:
    n: int
    value: float
    moment: float
    stderr: float = 0.0
    mode: str = "exact-moment"

    def to_json(self):
        return {"n": self.n, "value": self.value, "moment": self.moment,
                "stderr": self.stderr, "mode": self.mode}


def critical_moment(n: int, eps: float = 1.0, mode: str = "exact-moment",
                    samples: int = 1_000_000, seed: int = 0):
    """``int_{R^n_+} u_eps^(2n/(n-2))`` and a standard error (0 for deterministic modes)."""
    if mode == "exact-moment":
        # eps^n int (eps^2+|x|^2)^-n = eps^n eps^-n int (1+|y|^2)^-n
        return eps ** n * eps ** (-n) * halfspace_moment(n, n, (0,) * n), 0.0
    if mode == "radial":
        return eps ** n * hemisphere_area(n) * radial_integral(n - 1, float(n), eps, 0.0, math.inf), 0.0
    if mode == "mc":
        rng = np.random.default_rng(seed)
        s = rng.random(samples)
        r = eps * s / (1.0 - s)
        f = eps ** n * r ** (n - 1) * (eps * eps + r * r) ** (-n) * eps / (1.0 - s) ** 2
        area = hemisphere_area(n)
        return area * f.mean(), area * f.std(ddof=1) / math.sqrt(samples)
    raise ValueError(f"unknown mode {mode!r}")


def sphere_constant(n: int, eps: float = 1.0, mode: str = "exact-moment",
                    samples: int = 1_000_000, seed: int = 0) -> SphereConstant:
    """Yamabe constant of the round hemisphere, ``4n(n-1) * moment^(2/n)``."""
    if n < 3:
        raise ValueError("need n >= 3")
    m, se = critical_moment(n, eps, mode, samples, seed)
    val = 4 * n * (n - 1) * m ** (2.0 / n)
    # delta method
    vse = val * (2.0 / n) * se / m
    return SphereConstant(n, val, m, vse, mode)
