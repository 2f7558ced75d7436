"""Floating-point multivariate polynomials and radial-rational integrands.

``FPoly`` stores a polynomial as an exponent matrix plus a coefficient vector,
so that products, derivatives and batched evaluation are numpy operations.

``QPoly`` represents sums ``sum_b P_b(x) * q(x)**(-b)`` with
``q = eps**2 + |x|**2``.  Every integrand built from the bubble, a polynomial
tensor and a polynomial vector field has this shape, which lets integrals over
half-balls, half-annuli and half-spheres be reduced to closed-form angular
moments times one-dimensional radial integrals.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln

_CHUNK = 4096


def _combine(exps, coefs):
    """Merge equal exponent rows (sorted by a packed integer key)."""
    if len(exps) == 0:
        return exps, coefs
    base = int(exps.max()) + 1
    if base ** exps.shape[1] < 2 ** 62 and exps.min() >= 0:
        key = exps @ (base ** np.arange(exps.shape[1] - 1, -1, -1, dtype=np.int64))
        uk, first, inv = np.unique(key, return_index=True, return_inverse=True)
        return exps[first], np.bincount(inv.reshape(-1), weights=coefs, minlength=len(uk))
    u, inv = np.unique(exps, axis=0, return_inverse=True)
    return u, np.bincount(inv.reshape(-1), weights=coefs, minlength=len(u))


class FPoly:
    __slots__ = ("n", "exps", "coefs")

    def __init__(self, n, exps=None, coefs=None, _canonical=False):
        self.n = int(n)
        if exps is None or len(exps) == 0:
            self.exps = np.zeros((0, self.n), dtype=np.int64)
            self.coefs = np.zeros(0)
            return
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, self.n)
        coefs = np.asarray(coefs, dtype=float).reshape(-1)
        if not _canonical:
            exps, coefs = _combine(exps, coefs)
        keep = coefs != 0.0
        self.exps = exps[keep]
        self.coefs = coefs[keep]

    @classmethod
    def zero(cls, n):
        return cls(n)

    @classmethod
    def const(cls, n, c):
        return cls(n, np.zeros((1, n), dtype=np.int64), [float(c)])

    @classmethod
    def var(cls, n, j):
        e = np.zeros((1, n), dtype=np.int64)
        e[0, j] = 1
        return cls(n, e, [1.0])

    @classmethod
    def from_dict(cls, n, terms):
        if not terms:
            return cls(n)
        keys = list(terms)
        return cls(n, np.array(keys, dtype=np.int64), [float(terms[k]) for k in keys])

    def to_dict(self):
        return {tuple(int(a) for a in e): float(c) for e, c in zip(self.exps, self.coefs)}

    @property
    def is_zero(self):
        return len(self.coefs) == 0

    @property
    def degree(self):
        return int(self.exps.sum(axis=1).max()) if len(self.coefs) else -1

    def __len__(self):
        return len(self.coefs)

    def __repr__(self):
        return f"FPoly(n={self.n}, terms={len(self)}, degree={self.degree})"

    def _coerce(self, other):
        if isinstance(other, FPoly):
            return other
        return FPoly.const(self.n, other)

    def __add__(self, other):
        other = self._coerce(other)
        if other.is_zero:
            return self
        if self.is_zero:
            return other
        return FPoly(self.n, np.vstack([self.exps, other.exps]),
                     np.concatenate([self.coefs, other.coefs]))

    __radd__ = __add__

    def __neg__(self):
        return FPoly(self.n, self.exps, -self.coefs, _canonical=True)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, FPoly):
            c = float(other)
            if c == 0.0:
                return FPoly(self.n)
            return FPoly(self.n, self.exps, self.coefs * c, _canonical=True)
        if self.is_zero or other.is_zero:
            return FPoly(self.n)
        e = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, self.n)
        c = np.outer(self.coefs, other.coefs).reshape(-1)
        return FPoly(self.n, e, c)

    __rmul__ = __mul__

    def deriv(self, j):
        if self.is_zero:
            return self
        p = self.exps[:, j]
        keep = p > 0
        e = self.exps[keep].copy()
        c = self.coefs[keep] * p[keep]
        e[:, j] -= 1
        return FPoly(self.n, e, c, _canonical=True)

    def substitute_zero(self, j):
        """Restriction to the hyperplane ``x_j = 0``."""
        keep = self.exps[:, j] == 0
        return FPoly(self.n, self.exps[keep], self.coefs[keep], _canonical=True)

    def max_abs_coef(self):
        return float(np.abs(self.coefs).max()) if len(self.coefs) else 0.0

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X))
        if self.is_zero:
            return out
        top = int(self.exps.max())
        for s in range(0, len(X), _CHUNK):
            blk = X[s:s + _CHUNK]
            # powers table (N, n, top+1), gathered per coordinate
            pw = np.ones((len(blk), self.n, top + 1))
            for d in range(1, top + 1):
                pw[:, :, d] = pw[:, :, d - 1] * blk
            mon = pw[:, 0, self.exps[:, 0]]
            for k in range(1, self.n):
                mon = mon * pw[:, k, self.exps[:, k]]
            out[s:s + _CHUNK] = mon @ self.coefs
        return out


def dot(ps, qs):
    """Sum of elementwise products of two equally shaped nested lists of FPoly."""
    acc = None
    for p, q in zip(np.ravel(np.asarray(ps, dtype=object)), np.ravel(np.asarray(qs, dtype=object))):
        term = p * q
        acc = term if acc is None else acc + term
    return acc


# ---------------------------------------------------------------------------
# angular moments on the upper unit half-sphere


@lru_cache(maxsize=None)
def hemisphere_moment(gamma):
    """Integral of ``theta**gamma`` over ``S^{n-1} ∩ {theta_n >= 0}``."""
    gamma = tuple(gamma)
    if any(g % 2 for g in gamma[:-1]):
        return 0.0
    n = len(gamma)
    s = sum(gammaln((g + 1) / 2) for g in gamma) - gammaln((sum(gamma) + n) / 2)
    return float(np.exp(s))


def hemisphere_area(n):
    return hemisphere_moment((0,) * n)


# ---------------------------------------------------------------------------


def _qkey(b):
    return round(float(b) * 2) / 2


@lru_cache(maxsize=None)
def radial_integral(a, b, eps, r0, r1):
    """``int_{r0}^{r1} r**a (eps**2 + r**2)**(-b) dr`` to near machine precision."""
    if r1 <= r0:
        return 0.0
    if r0 == 0.0 and np.isinf(r1):
        # Beta integral
        s = (a + 1) / 2.0
        return 0.5 * eps ** (a + 1 - 2 * b) * math.exp(gammaln(s) + gammaln(b - s) - gammaln(b))
    f = lambda r: r ** a * (eps * eps + r * r) ** (-b)
    pts = [r0]
    # split at eps * 4^k so quad sees the bubble scale and the tail
    m = 1.0
    while m * eps < r1 and m < 4.0 ** 30:
        if m * eps > r0:
            pts.append(m * eps)
        m *= 4.0
    pts.append(r1)
    tot = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        if np.isinf(hi):
            # r = lo / t maps the tail onto (0, 1]
            g = lambda t, lo=lo: f(lo / t) * lo / (t * t) if t > 0 else 0.0
            val, _ = integrate.quad(g, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=400)
        else:
            val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)
        tot += val
    return tot


class QPoly:
    """Sum of ``P_b(x) * (eps**2 + |x|**2)**(-b)``."""

    __slots__ = ("n", "eps", "parts")

    def __init__(self, n, eps, parts=None):
        self.n = n
        self.eps = float(eps)
        self.parts = {}
        for b, p in (parts or {}).items():
            if not p.is_zero:
                k = _qkey(b)
                self.parts[k] = self.parts[k] + p if k in self.parts else p

    @classmethod
    def poly(cls, p, eps, b=0.0):
        return cls(p.n, eps, {b: p})

    def _coerce(self, other):
        if isinstance(other, QPoly):
            return other
        if isinstance(other, FPoly):
            return QPoly(self.n, self.eps, {0.0: other})
        return QPoly(self.n, self.eps, {0.0: FPoly.const(self.n, other)})

    def __add__(self, other):
        other = self._coerce(other)
        parts = dict(self.parts)
        for b, p in other.parts.items():
            parts[b] = parts[b] + p if b in parts else p
        return QPoly(self.n, self.eps, parts)

    __radd__ = __add__

    def __neg__(self):
        return QPoly(self.n, self.eps, {b: -p for b, p in self.parts.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __mul__(self, other):
        if not isinstance(other, (QPoly, FPoly)):
            return QPoly(self.n, self.eps, {b: p * other for b, p in self.parts.items()})
        other = self._coerce(other)
        parts = {}
        for b1, p1 in self.parts.items():
            for b2, p2 in other.parts.items():
                k = _qkey(b1 + b2)
                pr = p1 * p2
                parts[k] = parts[k] + pr if k in parts else pr
        return QPoly(self.n, self.eps, parts)

    __rmul__ = __mul__

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        q = self.eps ** 2 + np.einsum("ij,ij->i", X, X)
        out = np.zeros(len(X))
        for b, p in self.parts.items():
            out += p(X) * q ** (-b)
        return out

    def integrate_shell(self, r0, r1):
        """Integral over ``{r0 < |x| < r1, x_n > 0}``; ``r1`` may be ``inf``."""
        tot = []
        for b, p in self.parts.items():
            for e, c in zip(p.exps, p.coefs):
                s = hemisphere_moment(tuple(int(v) for v in e))
                if s == 0.0:
                    continue
                a = int(e.sum()) + self.n - 1
                tot.append(c * s * radial_integral(a, b, self.eps, float(r0), float(r1)))
        return math.fsum(tot)

    def integrate_sphere(self, R):
        """Integral over the half-sphere ``{|x| = R, x_n > 0}``."""
        tot = []
        q = self.eps ** 2 + R * R
        for b, p in self.parts.items():
            for e, c in zip(p.exps, p.coefs):
                s = hemisphere_moment(tuple(int(v) for v in e))
                if s:
                    tot.append(c * s * R ** (int(e.sum()) + self.n - 1) * q ** (-b))
        return math.fsum(tot)

    def deriv(self, j):
        """``d_j (P q^-b) = (d_j P) q^-b - 2 b x_j P q^(-b-1)``."""
        xj = FPoly.var(self.n, j)
        parts = {}
        for b, p in self.parts.items():
            dp = p.deriv(j)
            if not dp.is_zero:
                parts[b] = parts[b] + dp if b in parts else dp
            if b:
                k = _qkey(b + 1)
                t = p * xj * (-2.0 * b)
                parts[k] = parts[k] + t if k in parts else t
        return QPoly(self.n, self.eps, parts)

    def restrict(self, j):
        """Restriction to ``x_j = 0`` (q keeps its form)."""
        return QPoly(self.n, self.eps, {b: p.substitute_zero(j) for b, p in self.parts.items()})

    @property
    def is_zero(self):
        return not self.parts

    def max_abs_coef(self):
        return max((p.max_abs_coef() for p in self.parts.values()), default=0.0)


def qsum(items, n, eps):
    acc = QPoly(n, eps)
    for it in items:
        acc = acc + it
    return acc
