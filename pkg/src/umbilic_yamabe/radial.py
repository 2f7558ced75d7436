"""Polynomials times products of radial profiles.

An ``RPoly`` is a finite sum ``sum_k P_k(x) F_k(|x|)`` where each radial factor
``F_k`` is a product of atoms

* ``(s^2 + r^2)^(-b)``            (several scales s may appear),
* ``r^p``,
* ``chi^(m)(r/delta)`` for m = 0, 1, 2 and ``1 - chi(r/delta)``.

This family is closed under products and derivatives and contains the bubble,
the corrector w, the flat Green's function, the Ritz basis used for the
Green's correction and the cutoff.  Integrals over half-shells reduce to
closed-form hemisphere moments times one-dimensional radial integrals, which
are done with Gauss-Legendre panels.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .fpoly import FPoly, QPoly
from .quadrature import chi_derivs

_GL = {}


def _gl(order):
    if order not in _GL:
        _GL[order] = np.polynomial.legendre.leggauss(order)
    return _GL[order]


def _h(x):
    return round(float(x) * 2) / 2


def _mk(qs, p, chis):
    qd: dict = {}
    for s, b in qs:
        qd[s] = qd.get(s, 0.0) + b
    cd: dict = {}
    for a, c in chis:
        cd[a] = cd.get(a, 0) + c
    return (tuple(sorted((s, _h(b)) for s, b in qd.items() if _h(b) != 0.0)),
            _h(p), tuple(sorted((a, c) for a, c in cd.items() if c)))


ONE = ((), 0.0, ())

# externally supplied radial profiles: id -> (callable, lo, hi, breakpoints)
_PROFILES: dict = {}


def register_profile(func, lo=0.0, hi=math.inf, breaks=()):
    pid = len(_PROFILES)
    _PROFILES[pid] = (func, float(lo), float(hi), tuple(float(b) for b in breaks))
    return pid


def _key_mul(k1, k2):
    return _mk(k1[0] + k2[0], k1[1] + k2[1], k1[2] + k2[2])


def _atom_eval(atom, r):
    kind, delta, m = atom
    if kind == "x":
        return _PROFILES[int(delta)][0](r)
    c = chi_derivs(r / delta)
    if kind == "b":
        return 1.0 - c[0]
    if m > 2:
        raise ValueError("cutoff derivatives above order 2 are not available")
    return c[m] / delta ** m


def key_eval(key, r):
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    for s, b in key[0]:
        out = out * (s * s + r * r) ** (-b)
    if key[1]:
        out = out * r ** key[1]
    for atom, c in key[2]:
        out = out * _atom_eval(atom, r) ** c
    return out


def key_support(key):
    lo, hi = 0.0, math.inf
    for (kind, delta, m), _ in key[2]:
        if kind == "x":
            _, plo, phi, _ = _PROFILES[int(delta)]
            lo, hi = max(lo, plo), min(hi, phi)
        elif kind == "b":
            lo = max(lo, 4 * delta / 3)
        elif m == 0:
            hi = min(hi, 5 * delta / 3)
        else:
            lo, hi = max(lo, 4 * delta / 3), min(hi, 5 * delta / 3)
    return lo, hi


def _breaks(key, r0, r1):
    lo, hi = key_support(key)
    a, b = max(r0, lo), min(r1, hi)
    if not a < b:
        return None
    pts = {a, b}
    for s, _ in key[0]:
        for k in range(-2, 40):
            t = s * 2.0 ** k
            if t > b:
                break
            if t > a:
                pts.add(t)
    for (kind, delta, m), _ in key[2]:
        cand = _PROFILES[int(delta)][3] if kind == "x" else (4 * delta / 3, 5 * delta / 3)
        for t in cand:
            if a < t < b:
                pts.add(t)
    pts = sorted(pts)
    # refine so every finite panel has ratio <= 1.5 (or width below the smallest scale)
    fine = [pts[0]]
    for u, v in zip(pts[:-1], pts[1:]):
        if math.isinf(v):
            fine.append(v)
            continue
        if u <= 0:
            fine.extend(np.geomspace(v / 1.5 ** 8, v, 9).tolist())
            continue
        m = max(1, math.ceil(math.log(v / u) / math.log(1.5)))
        fine.extend(np.geomspace(u, v, m + 1)[1:].tolist())
    return fine


@lru_cache(maxsize=200_000)
def radial_moment(key, a, r0, r1, order=32):
    """``int_{r0}^{r1} F_key(r) r^a dr``."""
    pts = _breaks(key, r0, r1)
    if pts is None:
        return 0.0
    xg, wg = _gl(order)
    tot = []
    for u, v in zip(pts[:-1], pts[1:]):
        if math.isinf(v):
            # r = u / t on (0, 1]
            for t0, t1 in ((0.0, 0.25), (0.25, 0.5), (0.5, 1.0)):
                t = 0.5 * (t1 - t0) * xg + 0.5 * (t0 + t1)
                r = u / t
                tot.append(float(np.sum(0.5 * (t1 - t0) * wg * key_eval(key, r) * r ** a * u / t ** 2)))
            continue
        r = 0.5 * (v - u) * xg + 0.5 * (u + v)
        tot.append(float(np.sum(0.5 * (v - u) * wg * key_eval(key, r) * r ** a)))
    return math.fsum(tot)


def _angular(p: FPoly):
    """``{deg: sum_{|e|=deg} c_e S(e)}`` over the upper half-sphere."""
    n = p.n
    E, c = p.exps, p.coefs
    ok = np.all(E[:, :-1] % 2 == 0, axis=1)
    if not ok.any():
        return {}
    E, c = E[ok], c[ok]
    deg = E.sum(axis=1)
    logS = gammaln((E + 1) / 2.0).sum(axis=1) - gammaln((deg + n) / 2.0)
    vals = c * np.exp(logS)
    out: dict = {}
    for d in np.unique(deg):
        out[int(d)] = math.fsum(vals[deg == d].tolist())
    return out


class RPoly:
    __slots__ = ("n", "parts")

    def __init__(self, n, parts=None):
        self.n = n
        self.parts = {}
        for k, p in (parts or {}).items():
            if not p.is_zero:
                self.parts[k] = self.parts[k] + p if k in self.parts else p

    # -- constructors ------------------------------------------------------

    @classmethod
    def poly(cls, p: FPoly):
        return cls(p.n, {ONE: p})

    @classmethod
    def const(cls, n, c):
        return cls.poly(FPoly.const(n, c))

    @classmethod
    def q(cls, n, s, b, p: FPoly | None = None):
        """``P (s^2 + r^2)^(-b)``."""
        return cls(n, {_mk(((float(s), b),), 0, ()): FPoly.const(n, 1.0) if p is None else p})

    @classmethod
    def rpow(cls, n, power, c=1.0):
        return cls(n, {_mk((), power, ()): FPoly.const(n, c)})

    @classmethod
    def cutoff(cls, n, delta, bar=False):
        """``chi(|x|/delta)`` or ``1 - chi(|x|/delta)``."""
        atom = ("b", float(delta), 0) if bar else ("c", float(delta), 0)
        return cls(n, {_mk((), 0, ((atom, 1),)): FPoly.const(n, 1.0)})

    @classmethod
    def profile(cls, n, func, lo=0.0, hi=math.inf, breaks=()):
        """An arbitrary radial profile ``func(r)`` (no derivatives)."""
        pid = register_profile(func, lo, hi, breaks)
        return cls(n, {_mk((), 0, ((("x", float(pid), 0), 1),)): FPoly.const(n, 1.0)})

    @classmethod
    def from_qpoly(cls, q: QPoly):
        return cls(q.n, {_mk(((q.eps, b),), 0, ()): p for b, p in q.parts.items()})

    # -- algebra -----------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, RPoly):
            return other
        if isinstance(other, QPoly):
            return RPoly.from_qpoly(other)
        if isinstance(other, FPoly):
            return RPoly.poly(other)
        return RPoly.const(self.n, other)

    def __add__(self, other):
        other = self._coerce(other)
        parts = dict(self.parts)
        for k, p in other.parts.items():
            parts[k] = parts[k] + p if k in parts else p
        return RPoly(self.n, parts)

    __radd__ = __add__

    def __neg__(self):
        return RPoly(self.n, {k: -p for k, p in self.parts.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, (RPoly, QPoly, FPoly)):
            return RPoly(self.n, {k: p * float(other) for k, p in self.parts.items()})
        other = self._coerce(other)
        parts: dict = {}
        for k1, p1 in self.parts.items():
            for k2, p2 in other.parts.items():
                k = _key_mul(k1, k2)
                pr = p1 * p2
                parts[k] = parts[k] + pr if k in parts else pr
        return RPoly(self.n, parts)

    __rmul__ = __mul__

    @property
    def is_zero(self):
        return not self.parts

    def __len__(self):
        return sum(len(p) for p in self.parts.values())

    def deriv(self, j):
        n = self.n
        xj = FPoly.var(n, j)
        parts: dict = {}

        def put(k, p):
            if not p.is_zero:
                parts[k] = parts[k] + p if k in parts else p

        for key, P in self.parts.items():
            qs, pw, chis = key
            put(key, P.deriv(j))
            xP = P * xj
            for s, b in qs:
                put(_mk(qs + ((s, 1.0),), pw, chis), xP * (-2.0 * b))
            if pw:
                put(_mk(qs, pw - 2, chis), xP * pw)
            for atom, c in chis:
                kind, delta, m = atom
                if kind == "x":
                    raise ValueError("external radial profiles cannot be differentiated")
                new = ("c", delta, m + 1) if kind == "c" else ("c", delta, 1)
                sign = 1.0 if kind == "c" else -1.0
                put(_mk(qs, pw - 1, chis + ((atom, -1), (new, 1))), xP * (sign * c))
        return RPoly(n, parts)

    def grad(self):
        return [self.deriv(j) for j in range(self.n)]

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.linalg.norm(X, axis=1)
        out = np.zeros(len(X))
        for key, P in self.parts.items():
            lo, hi = key_support(key)
            m = (r >= lo) & (r <= hi)
            if not m.any():
                continue
            rr = r[m]
            out[m] += P(X[m]) * key_eval(key, rr)
        return out

    # -- integration -------------------------------------------------------

    def integrate(self, r0=0.0, r1=math.inf, order=32):
        """Integral over ``{r0 < |x| < r1, x_n > 0}``."""
        tot = []
        for key, P in self.parts.items():
            for d, a in _angular(P).items():
                if a:
                    tot.append(a * radial_moment(key, d + self.n - 1, float(r0), float(r1), order))
        return math.fsum(tot)

    def integrate_sphere(self, R):
        """Integral over ``{|x| = R, x_n > 0}``."""
        tot = []
        for key, P in self.parts.items():
            lo, hi = key_support(key)
            if not lo <= R <= hi:
                continue
            F = float(key_eval(key, np.array([R]))[0])
            for d, a in _angular(P).items():
                tot.append(a * F * R ** (d + self.n - 1))
        return math.fsum(tot)


def div_x0(rp: RPoly) -> RPoly:
    """Divide every polynomial by ``x_0`` (used for ``f'(r)/r`` from ``d_0 f``)."""
    parts = {}
    for k, P in rp.parts.items():
        if np.any(P.exps[:, 0] < 1):
            raise ValueError("polynomial not divisible by x_0")
        e = P.exps.copy()
        e[:, 0] -= 1
        parts[k] = FPoly(rp.n, e, P.coefs, _canonical=True)
    return RPoly(rp.n, parts)


def radial_integral_1d(func, n, breaks, r1=math.inf, order=32):
    """``int_{x_n>0, |x|<r1} func(|x|) dx`` for a vectorised radial function."""
    pid = register_profile(func, 0.0, math.inf, breaks)
    key = _mk((), 0, ((("x", float(pid), 0), 1),))
    from .fpoly import hemisphere_area
    return hemisphere_area(n) * radial_moment(key, n - 1, 0.0, float(r1), order)


def rsum(items, n):
    acc = RPoly(n)
    for it in items:
        acc = acc + it
    return acc


def dot_grad(A, B):
    """``int``-ready RPoly ``sum_j d_j A d_j B`` (A, B given as gradient lists)."""
    return rsum([a * b for a, b in zip(A, B)], len(A))
