"""Exact rational polynomial tensors on the half-space.

Polynomials carry ``fractions.Fraction`` coefficients, so every identity in
this module is checked by literal zero tests.  Index convention: internally
all indices are 0-based and the normal direction is ``n - 1``; the JSON form of
a ``CoeffSet`` uses 1-based ``i, k`` to match the usual mathematical notation.
"""
from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

import numpy as np


# ---------------------------------------------------------------------------
# polynomials


class Poly:
    """Multivariate polynomial over Q; ``terms`` maps exponent tuples to Fractions."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: dict | None = None):
        self.n = n
        self.terms = {e: Fraction(c) for e, c in (terms or {}).items() if c != 0}

    @classmethod
    def _raw(cls, n, terms):
        p = cls.__new__(cls)
        p.n = n
        p.terms = terms
        return p

    @classmethod
    def monomial(cls, n, alpha, c=1):
        return cls(n, {tuple(alpha): Fraction(c)})

    @classmethod
    def var(cls, n, j):
        e = [0] * n
        e[j] = 1
        return cls(n, {tuple(e): Fraction(1)})

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=-1)

    def __eq__(self, other):
        if isinstance(other, Poly):
            return self.n == other.n and self.terms == other.terms
        if other == 0:
            return not self.terms
        return NotImplemented

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for e in sorted(self.terms, reverse=True):
            mon = "*".join(f"x{j + 1}^{a}" if a > 1 else f"x{j + 1}" for j, a in enumerate(e) if a)
            parts.append(f"{self.terms[e]}" + (f"*{mon}" if mon else ""))
        return " + ".join(parts)

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly(self.n, {(0,) * self.n: other})
        t = dict(self.terms)
        for e, c in other.terms.items():
            v = t.get(e, 0) + c
            if v:
                t[e] = v
            else:
                t.pop(e, None)
        return Poly._raw(self.n, t)

    __radd__ = __add__

    def __neg__(self):
        return Poly._raw(self.n, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            c = Fraction(other)
            if c == 0:
                return Poly._raw(self.n, {})
            return Poly._raw(self.n, {e: v * c for e, v in self.terms.items()})
        t: dict = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                v = t.get(e, 0) + c1 * c2
                if v:
                    t[e] = v
                else:
                    t.pop(e, None)
        return Poly._raw(self.n, t)

    __rmul__ = __mul__

    def deriv(self, j: int) -> "Poly":
        t = {}
        for e, c in self.terms.items():
            a = e[j]
            if a:
                f = list(e)
                f[j] = a - 1
                t[tuple(f)] = c * a
        return Poly._raw(self.n, t)

    def restrict_zero(self, j: int) -> "Poly":
        """Substitute ``x_j = 0``."""
        return Poly._raw(self.n, {e: c for e, c in self.terms.items() if e[j] == 0})

    def __call__(self, x):
        x = [Fraction(v) if not isinstance(v, float) else v for v in x]
        tot = 0
        for e, c in self.terms.items():
            m = c
            for xi, a in zip(x, e):
                if a:
                    m = m * xi ** a
            tot = tot + m
        return tot

    def to_float_terms(self) -> dict:
        return {e: float(c) for e, c in self.terms.items()}


def _zero(n):
    return Poly._raw(n, {})


def _acc(target: dict, key, poly: Poly, coef):
    """``target[key] += coef * poly`` on raw term dicts."""
    t = target.setdefault(key, {})
    for e, c in poly.terms.items():
        v = t.get(e, 0) + c * coef
        if v:
            t[e] = v
        else:
            t.pop(e, None)


# ---------------------------------------------------------------------------
# tensors


class PolyTensor:
    """Dense tensor of ``Poly`` entries, rank 2, 3 or 4."""

    def __init__(self, n: int, rank: int, entries=None, trace_free: bool = False):
        self.n = n
        self.rank = rank
        arr = np.empty((n,) * rank, dtype=object)
        z = _zero(n)
        for idx in itertools.product(range(n), repeat=rank):
            arr[idx] = z
        if entries:
            for idx, p in entries.items():
                arr[idx] = p
        self.entries = arr
        self.trace_free = trace_free

    def __getitem__(self, idx):
        return self.entries[idx]

    def nonzero(self):
        return {idx: p for idx, p in np.ndenumerate(self.entries) if not p.is_zero}

    @property
    def is_zero(self) -> bool:
        return all(p.is_zero for p in self.entries.flat)

    def trace(self) -> Poly:
        if self.rank != 2:
            raise ValueError("trace is defined for rank-2 tensors")
        acc = _zero(self.n)
        for i in range(self.n):
            acc = acc + self.entries[i, i]
        return acc

    def scaled(self, t) -> "PolyTensor":
        return PolyTensor(self.n, self.rank, {k: p * t for k, p in self.nonzero().items()}, self.trace_free)

    def __add__(self, other: "PolyTensor") -> "PolyTensor":
        out = PolyTensor(self.n, self.rank)
        out.entries = np.frompyfunc(lambda a, b: a + b, 2, 1)(self.entries, other.entries)
        return out

    def is_symmetric(self) -> bool:
        return all(self.entries[i, k] == self.entries[k, i] for i in range(self.n) for k in range(i))


# ---------------------------------------------------------------------------
# coefficient sets


def degree_cap(n: int) -> int:
    return (n - 2) // 2


@dataclass
class CoeffSet:
    """Coefficients ``h_{ik,alpha}`` (0-based, ``i <= k``) of a polynomial 2-tensor."""

    n: int
    d: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (i, k, alpha), v in self.entries.items():
            if i > k:
                i, k = k, i
            v = Fraction(v)
            if v:
                clean[(i, k, tuple(alpha))] = clean.get((i, k, tuple(alpha)), 0) + v
        self.entries = {key: v for key, v in clean.items() if v}

    @property
    def is_zero(self) -> bool:
        return not self.entries

    def norm2(self) -> Fraction:
        """``sum_{i,k,alpha} |h_{ik,alpha}|^2`` over ordered pairs ``(i,k)``."""
        return sum(((1 if i == k else 2) * v * v for (i, k, _), v in self.entries.items()), Fraction(0))

    def abs_sum(self) -> Fraction:
        return sum((abs(v) * (1 if i == k else 2) for (i, k, _), v in self.entries.items()), Fraction(0))

    def degrees(self) -> set:
        return {sum(a) for (_, _, a) in self.entries}

    def scaled(self, t) -> "CoeffSet":
        return CoeffSet(self.n, self.d, {key: v * Fraction(t) for key, v in self.entries.items()})

    def __add__(self, other):
        e = dict(self.entries)
        for key, v in other.entries.items():
            e[key] = e.get(key, 0) + v
        return CoeffSet(self.n, self.d, e)

    def to_json(self) -> dict:
        rows = []
        for (i, k, a), v in sorted(self.entries.items()):
            rows.append({"i": i + 1, "k": k + 1, "alpha": list(a), "value": f"{v.numerator}/{v.denominator}"})
        return {"n": self.n, "d": self.d, "entries": rows}

    @classmethod
    def from_json(cls, obj) -> "CoeffSet":
        if isinstance(obj, str):
            obj = json.loads(obj)
        n, d = int(obj["n"]), int(obj["d"])
        entries = {}
        for k, row in enumerate(obj.get("entries", [])):
            try:
                i, kk = int(row["i"]) - 1, int(row["k"]) - 1
                alpha = tuple(int(a) for a in row["alpha"])
                val = Fraction(str(row["value"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"entries[{k}]: malformed entry ({exc})") from exc
            if len(alpha) != n or not (0 <= i < n and 0 <= kk < n) or min(alpha) < 0:
                raise ValueError(f"entries[{k}]: index or multi-index out of range")
            key = (min(i, kk), max(i, kk), alpha)
            entries[key] = entries.get(key, 0) + val
        return cls(n, d, entries)


def make_H(c: CoeffSet) -> PolyTensor:
    """Polynomial tensor ``H_ik = sum_alpha h_{ik,alpha} x^alpha``."""
    n = c.n
    acc: dict = {}
    for (i, k, alpha), v in c.entries.items():
        if len(alpha) != n or not 2 <= sum(alpha) <= c.d:
            raise ValueError(f"degree out of range for entry (i={i + 1}, k={k + 1}, alpha={list(alpha)})")
        for key in {(i, k), (k, i)}:
            t = acc.setdefault(key, {})
            t[alpha] = t.get(alpha, 0) + v
    ents = {key: Poly(n, t) for key, t in acc.items()}
    H = PolyTensor(n, 2, ents)
    H.trace_free = H.trace().is_zero
    return H


def tensor_from_polys(n: int, entries: dict) -> PolyTensor:
    """Symmetric rank-2 tensor from ``{(i,k): Poly}`` with ``i <= k``."""
    ents = {}
    for (i, k), p in entries.items():
        ents[(i, k)] = p
        ents[(k, i)] = p
    return PolyTensor(n, 2, ents)


def standard_example(n: int = 6) -> CoeffSet:
    """The quadratic example ``B(1,2) + B(3,4) - B(1,3) - B(2,4)``.

    ``B(a,b)`` adds ``x_b^2`` to ``H_aa``, ``x_a^2`` to ``H_bb`` and ``-x_a x_b``
    to ``H_ab``.  Needs at least four tangential directions.
    """
    if n < 5:
        raise ValueError("standard example needs n >= 5")
    e: dict = {}

    def mono(*js):
        a = [0] * n
        for j in js:
            a[j] += 1
        return tuple(a)

    def block(a, b, s):
        for key, v in (((a, a, mono(b, b)), s), ((b, b, mono(a, a)), s), ((a, b, mono(a, b)), -s)):
            e[key] = e.get(key, 0) + v

    block(0, 1, 1)
    block(2, 3, 1)
    block(0, 2, -1)
    block(1, 3, -1)
    return CoeffSet(n, max(2, degree_cap(n)), e)


def standard_cubic_example(n: int = 6) -> PolyTensor:
    """``x_5`` times the standard example: cubic, trace-free and admissible.

    In dimension 6 its degree exceeds the coefficient cap, so it models a
    perturbation that vanishes to the cap order at the origin.
    """
    H = make_H(standard_example(n))
    x5 = Poly.var(n, 4)
    return PolyTensor(n, 2, {idx: p * x5 for idx, p in H.nonzero().items()})


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class AdmissibilityReport:
    normal_components_vanish: bool
    radial_rows_vanish_on_boundary: bool
    normal_derivative_vanishes_on_boundary: bool
    trace_free: bool
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.normal_components_vanish and self.radial_rows_vanish_on_boundary
                and self.normal_derivative_vanishes_on_boundary and self.trace_free)

    def to_json(self) -> dict:
        return {"normal_components_vanish": self.normal_components_vanish,
                "radial_rows_vanish_on_boundary": self.radial_rows_vanish_on_boundary,
                "normal_derivative_vanishes_on_boundary": self.normal_derivative_vanishes_on_boundary,
                "trace_free": self.trace_free, "ok": self.ok, "failures": self.failures}


def check_admissible(H: PolyTensor) -> AdmissibilityReport:
    n = H.n
    nn = n - 1
    fails = []
    c1 = True
    for i in range(n):
        if not H[i, nn].is_zero:
            c1 = False
            fails.append(f"H[{i + 1},{n}] != 0")
    c2 = True
    for i in range(n):
        row = _zero(n)
        for k in range(n):
            row = row + H[i, k] * Poly.var(n, k)
        if not row.restrict_zero(nn).is_zero:
            c2 = False
            fails.append(f"sum_k H[{i + 1},k] x_k != 0 on boundary")
    c3 = True
    for i in range(n):
        for k in range(i, n):
            if not H[i, k].deriv(nn).restrict_zero(nn).is_zero:
                c3 = False
                fails.append(f"d_n H[{i + 1},{k + 1}] != 0 on boundary")
    c4 = H.trace().is_zero
    if not c4:
        fails.append("trace != 0")
    return AdmissibilityReport(c1, c2, c3, c4, fails)


# ---------------------------------------------------------------------------
# derived tensors


def _second_derivs(H: PolyTensor) -> dict:
    """Nonzero ``d_a d_b H_cd`` keyed by ``(a, b, c, d)`` over all orderings."""
    n = H.n
    out = {}
    for (c, d), p in H.nonzero().items():
        for a in range(n):
            pa = p.deriv(a)
            if pa.is_zero:
                continue
            for b in range(n):
                q = pa.deriv(b)
                if not q.is_zero:
                    out[(a, b, c, d)] = q
    return out


def _A_from_D(n, D) -> PolyTensor:
    acc: dict = {}
    trace_term: dict = {}
    for (a, b, c, d), p in D.items():
        # sum_m d_i d_m H_mk: a=i, b=m=c, d=k
        if b == c:
            _acc(acc, (a, d), p, 1)
        # sum_m d_m d_k H_im: a=m=d, b=k, c=i
        if a == d:
            _acc(acc, (c, b), p, 1)
        # - Laplacian
        if a == b:
            _acc(acc, (c, d), p, -1)
        if a == c and b == d:
            _acc(trace_term, 0, p, 1)
    tt = trace_term.get(0, {})
    if tt:
        for i in range(n):
            t = acc.setdefault((i, i), {})
            for e, c in tt.items():
                v = t.get(e, 0) - c / Fraction(n - 1)
                if v:
                    t[e] = v
                else:
                    t.pop(e, None)
    return PolyTensor(n, 2, {k: Poly._raw(n, t) for k, t in acc.items() if t})


def compute_A(H: PolyTensor) -> PolyTensor:
    return _A_from_D(H.n, _second_derivs(H))


def _Z_raw(n, D, A: PolyTensor) -> dict:
    acc: dict = {}
    for (a, b, c, d), p in D.items():
        _acc(acc, (a, c, b, d), p, 1)
        _acc(acc, (a, c, d, b), p, -1)
        _acc(acc, (c, a, b, d), p, -1)
        _acc(acc, (c, a, d, b), p, 1)
    s = Fraction(1, n - 2)
    for (p_, q_), P in A.nonzero().items():
        for i in range(n):
            # A_jl delta_ik
            _acc(acc, (i, p_, i, q_), P, s)
            # -A_jk delta_il
            _acc(acc, (i, p_, q_, i), P, -s)
            # -A_il delta_jk
            _acc(acc, (p_, i, i, q_), P, -s)
            # +A_ik delta_jl
            _acc(acc, (p_, i, q_, i), P, s)
    return {k: Poly._raw(n, t) for k, t in acc.items() if t}


def compute_Z(H: PolyTensor, A: PolyTensor | None = None) -> PolyTensor:
    D = _second_derivs(H)
    if A is None:
        A = _A_from_D(H.n, D)
    return PolyTensor(H.n, 4, _Z_raw(H.n, D, A))


def divergence_identity_residual(H: PolyTensor) -> PolyTensor:
    """``sum_l d_l Z_ijkl - (n-3)/(n-2) (d_i A_jk - d_j A_ik)`` as a rank-3 tensor."""
    n = H.n
    D = _second_derivs(H)
    A = _A_from_D(n, D)
    Z = _Z_raw(n, D, A)
    acc: dict = {}
    for (i, j, k, l), p in Z.items():
        _acc(acc, (i, j, k), p.deriv(l), 1)
    c = Fraction(n - 3, n - 2)
    for (j, k), P in A.nonzero().items():
        for i in range(n):
            _acc(acc, (i, j, k), P.deriv(i), -c)
            _acc(acc, (j, i, k), P.deriv(i), c)
    return PolyTensor(n, 3, {k: Poly._raw(n, t) for k, t in acc.items() if t})


def boundary_A_normal(H: PolyTensor) -> list:
    """``A_in`` restricted to ``x_n = 0`` for tangential ``i``."""
    A = compute_A(H)
    return [A[i, H.n - 1].restrict_zero(H.n - 1) for i in range(H.n - 1)]


def z_symmetry_defects(Z: PolyTensor) -> dict:
    """Counts of entries violating each curvature-type symmetry."""
    n = Z.n
    out = {"antisym_ij": 0, "antisym_kl": 0, "pair": 0, "bianchi": 0}
    for i, j, k, l in itertools.product(range(n), repeat=4):
        z = Z[i, j, k, l]
        out["antisym_ij"] += not (z + Z[j, i, k, l]).is_zero
        out["antisym_kl"] += not (z + Z[i, j, l, k]).is_zero
        out["pair"] += not (z - Z[k, l, i, j]).is_zero
        out["bianchi"] += not (z + Z[j, k, i, l] + Z[k, i, j, l]).is_zero
    return out


# ---------------------------------------------------------------------------
# exact linear algebra


def nullspace_exact(rows: list, ncols: int) -> list:
    """Basis of ``{v : R v = 0}`` for sparse rows ``{col: Fraction}``.

    Returns a list of dense Fraction lists (one per free variable).
    """
    pivots: dict = {}  # pivot col -> reduced row dict
    for r in rows:
        r = {c: Fraction(v) for c, v in r.items() if v}
        for pc, prow in pivots.items():
            if pc in r:
                f = r[pc]
                for c, v in prow.items():
                    nv = r.get(c, 0) - f * v
                    if nv:
                        r[c] = nv
                    else:
                        r.pop(c, None)
        if not r:
            continue
        pc = min(r)
        f = r[pc]
        r = {c: v / f for c, v in r.items()}
        for qc, qrow in pivots.items():
            if pc in qrow:
                g = qrow[pc]
                for c, v in r.items():
                    nv = qrow.get(c, 0) - g * v
                    if nv:
                        qrow[c] = nv
                    else:
                        qrow.pop(c, None)
        pivots[pc] = r
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fc in free:
        v = [Fraction(0)] * ncols
        v[fc] = Fraction(1)
        for pc, prow in pivots.items():
            if fc in prow:
                v[pc] = -prow[fc]
        basis.append(v)
    return basis


def solve_exact(M: list, b: list) -> list:
    """Solve a square nonsingular Fraction system by Gauss-Jordan."""
    m = len(M)
    aug = [list(M[i]) + [b[i]] for i in range(m)]
    for col in range(m):
        piv = next(r for r in range(col, m) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        pv = aug[col][col]
        aug[col] = [v / pv for v in aug[col]]
        for r in range(m):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * c for a, c in zip(aug[r], aug[col])]
    return [aug[i][m] for i in range(m)]


# ---------------------------------------------------------------------------
# admissible coefficient space


def _multi_indices(n, m):
    for comb in itertools.combinations_with_replacement(range(n), m):
        a = [0] * n
        for j in comb:
            a[j] += 1
        yield tuple(a)


@dataclass
class AdmissibleBlock:
    degree: int
    parity: tuple
    unknowns: list      # (i, k, alpha)
    basis: list         # dense Fraction vectors over ``unknowns``


@lru_cache(maxsize=None)
def admissible_blocks(n: int, d: int) -> tuple:
    """Exact basis of admissible coefficients, split by degree and parity class.

    Unknowns are ``h_{ik,alpha}`` with tangential ``i <= k`` and
    ``alpha_n != 1``.  The constraints (trace per monomial, boundary radial
    rows) never mix degrees or parity classes of ``alpha + e_i + e_k``.
    """
    if n < 3 or d < 2:
        raise ValueError("need n >= 3 and d >= 2")
    nn = n - 1
    pairs = [(i, k) for i in range(nn) for k in range(i, nn)]
    blocks = []
    for m in range(2, d + 1):
        groups: dict = {}
        for alpha in _multi_indices(n, m):
            if alpha[nn] == 1:
                continue
            for i, k in pairs:
                key = list(a % 2 for a in alpha)
                key[i] ^= 1
                key[k] ^= 1
                groups.setdefault(tuple(key), []).append((i, k, alpha))
        for par in sorted(groups):
            unk = groups[par]
            col = {u: j for j, u in enumerate(unk)}
            rows = []
            # trace-free per monomial
            by_alpha: dict = {}
            for (i, k, a), j in col.items():
                if i == k:
                    by_alpha.setdefault(a, {})[j] = 1
            rows.extend(by_alpha.values())
            # sum_k h_{ik, gamma - e_k} = 0 for gamma with gamma_n = 0
            rad: dict = {}
            for (i, k, a), j in col.items():
                if a[nn] != 0:
                    continue
                for (p, q) in {(i, k), (k, i)}:
                    g = list(a)
                    g[q] += 1
                    rad.setdefault((p, tuple(g)), {})
                    r = rad[(p, tuple(g))]
                    r[j] = r.get(j, 0) + 1
            rows.extend(rad.values())
            basis = nullspace_exact(rows, len(unk))
            if basis:
                blocks.append(AdmissibleBlock(m, par, unk, basis))
    return tuple(blocks)


def admissible_dimension(n, d) -> int:
    return sum(len(b.basis) for b in admissible_blocks(n, d))


def _project(block: AdmissibleBlock, v: list) -> list:
    B = block.basis
    r = len(B)
    G = [[sum(a * b for a, b in zip(B[p], B[q]) if a and b) for q in range(r)] for p in range(r)]
    rhs = [sum(a * b for a, b in zip(B[p], v) if a and b) for p in range(r)]
    coef = solve_exact(G, rhs)
    out = [Fraction(0)] * len(v)
    for c, vec in zip(coef, B):
        if c:
            for j, a in enumerate(vec):
                if a:
                    out[j] += c * a
    return out


def project_admissible(c: CoeffSet) -> CoeffSet:
    """Exact orthogonal projection of ``c`` onto the admissible subspace.

    Cost grows cubically with block size, so this is meant for small n.
    """
    out: dict = {}
    for b in admissible_blocks(c.n, c.d):
        v = [Fraction(c.entries.get(u, 0)) for u in b.unknowns]
        if not any(v):
            continue
        for u, val in zip(b.unknowns, _project(b, v)):
            if val:
                out[u] = val
    return CoeffSet(c.n, c.d, out)


def random_admissible(n: int, d: int | None = None, seed: int = 0, nblocks: int | None = 6,
                      nvec: int = 3, amp: int = 3) -> CoeffSet:
    """Seeded sparse admissible CoeffSet.

    Picks ``nblocks`` random (degree, parity) blocks and adds a random
    small-integer combination of ``nvec`` exact basis vectors in each.
    ``nblocks=None`` visits every block once (a generic element).
    """
    d = degree_cap(n) if d is None else d
    rng = random.Random(seed)
    blocks = admissible_blocks(n, d)
    entries: dict = {}
    nz = [x for x in range(-amp, amp + 1) if x]
    chosen = blocks if nblocks is None else [blocks[rng.randrange(len(blocks))] for _ in range(nblocks)]
    for b in chosen:
        for j in rng.sample(range(len(b.basis)), min(nvec, len(b.basis))):
            a = rng.choice(nz)
            for u, val in zip(b.unknowns, b.basis[j]):
                if val:
                    entries[u] = entries.get(u, 0) + a * val
    return CoeffSet(n, d, entries)


def _coeffset_from_block(n, d, block, vec) -> CoeffSet:
    return CoeffSet(n, d, {u: v for u, v in zip(block.unknowns, vec) if v})


# ---------------------------------------------------------------------------
# kernel of the Z map


def _z_vector(c: CoeffSet) -> dict:
    H = make_H(c)
    D = _second_derivs(H)
    A = _A_from_D(c.n, D)
    out = {}
    for idx, p in _Z_raw(c.n, D, A).items():
        for e, v in p.terms.items():
            out[(idx, e)] = v
    return out


def z_kernel(n: int, d: int) -> list:
    """Exact nullspace of ``CoeffSet -> Z`` restricted to admissible coefficients."""
    if n < 6 or not 2 <= d <= degree_cap(n):
        raise ValueError(f"need n >= 6 and 2 <= d <= {degree_cap(n) if n >= 6 else '(n-2)//2'}")
    kernel = []
    for b in admissible_blocks(n, d):
        cols = [_z_vector(_coeffset_from_block(n, d, b, vec)) for vec in b.basis]
        keys = sorted({k for col in cols for k in col})
        rows = [{j: col[k] for j, col in enumerate(cols) if k in col} for k in keys]
        for null in nullspace_exact(rows, len(cols)):
            comb = [Fraction(0)] * len(b.unknowns)
            for coef, vec in zip(null, b.basis):
                if coef:
                    comb = [x + coef * y for x, y in zip(comb, vec)]
            kernel.append(_coeffset_from_block(n, d, b, comb))
    return kernel


def z_map_rank(cs: Iterable[CoeffSet]) -> int:
    """Exact rank of the Z map restricted to the span of ``cs``."""
    cols = [_z_vector(c) for c in cs]
    keys = sorted({k for col in cols for k in col})
    rows = [{j: col[k] for j, col in enumerate(cols) if k in col} for k in keys]
    return len(cols) - len(nullspace_exact(rows, len(cols)))


# ---------------------------------------------------------------------------
# ball moments


def _centered_even_moment(n: int, beta) -> Fraction:
    """``int_{B_1} y^beta`` divided by ``pi^{n/2}`` (n even, all beta even)."""
    num = Fraction(1)
    for b in beta:
        h = b // 2
        num *= Fraction(math.factorial(2 * h), 4 ** h * math.factorial(h))
    return num / math.factorial(sum(beta) // 2 + n // 2)


def ball_moment_exact(rho, center, alpha) -> Fraction:
    """``int_{B_rho(center)} x^alpha dx / pi^{n/2}`` exactly, for even n."""
    n = len(alpha)
    if n % 2:
        raise ValueError("exact ball moments need even n")
    rho = Fraction(rho)
    center = [Fraction(c) for c in center]
    tot = Fraction(0)
    ranges = [range(a + 1) for a in alpha]
    for beta in itertools.product(*ranges):
        if any(b % 2 for b in beta):
            continue
        coef = Fraction(1)
        for a, b, c in zip(alpha, beta, center):
            if a - b:
                if c == 0:
                    coef = 0
                    break
                coef *= math.comb(a, b) * c ** (a - b)
        if coef == 0:
            continue
        tot += coef * rho ** (n + sum(beta)) * _centered_even_moment(n, beta)
    return tot


def ball_moment(rho, center, alpha) -> float:
    """``int_{B_rho(center)} x^alpha dx``; exact for even n, Gamma functions otherwise."""
    n = len(alpha)
    if n % 2 == 0:
        return float(ball_moment_exact(rho, center, alpha)) * math.pi ** (n / 2)
    from scipy.special import gammaln
    tot = 0.0
    for beta in itertools.product(*[range(a + 1) for a in alpha]):
        if any(b % 2 for b in beta):
            continue
        coef = 1.0
        for a, b, c in zip(alpha, beta, center):
            if a - b:
                coef *= math.comb(a, b) * float(c) ** (a - b)
        if coef == 0.0:
            continue
        lg = sum(gammaln((b + 1) / 2) for b in beta) - gammaln(sum(beta) / 2 + n / 2 + 1)
        tot += coef * float(rho) ** (n + sum(beta)) * math.exp(lg)
    return tot


def ball_moment_mc(rho, center, alpha, samples=200_000, seed=0):
    """Monte-Carlo estimate and standard error, for cross-checking."""
    n = len(alpha)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((samples, n))
    g /= np.linalg.norm(g, axis=1)[:, None]
    r = rng.random(samples) ** (1.0 / n)
    x = np.asarray(center, float) + float(rho) * r[:, None] * g
    f = np.prod(x ** np.asarray(alpha), axis=1)
    vol = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * float(rho) ** n
    return vol * f.mean(), vol * f.std(ddof=1) / math.sqrt(samples)


# ---------------------------------------------------------------------------
# K1 quadratic form


def U_ball(n: int, r=1):
    """Ball ``U_r``: radius ``r/4`` centred at ``(0, ..., 0, 3r/2)``."""
    r = Fraction(r)
    return r / 4, [Fraction(0)] * (n - 1) + [3 * r / 2]


def z_energy_exact(c: CoeffSet, r=1) -> Fraction:
    """``int_{U_r} sum |Z_ijkl|^2 dx / pi^{n/2}`` exactly."""
    rho, ctr = U_ball(c.n, r)
    Z = compute_Z(make_H(c))
    tot = Fraction(0)
    for p in Z.nonzero().values():
        sq = p * p
        for e, v in sq.terms.items():
            tot += v * ball_moment_exact(rho, ctr, e)
    return tot


def _admissible_columns(n, d):
    cols, meta = [], []
    for b in admissible_blocks(n, d):
        for vec in b.basis:
            cols.append(_coeffset_from_block(n, d, b, vec))
            meta.append(b.degree)
    return cols, meta


@dataclass
class K1Result:
    gram: np.ndarray            # form / pi^{n/2}, in admissible basis coordinates
    gram_exact: list
    norm: np.ndarray
    lambda_min: float
    K1_hat: float
    dimension: int


def gram_K1(n: int, d: int, r=1) -> K1Result:
    """Gram matrix of ``h -> int_{U_r} |Z|^2`` on the admissible space.

    ``lambda_min`` is the smallest generalized eigenvalue against the
    coefficient norm ``sum_{i,k,alpha} |h_{ik,alpha}|^2``.  The matrix is kept
    exact (in units of ``pi^{n/2}``); the eigenvalue includes the ``pi`` factor.
    """
    from scipy.linalg import eigh

    cols, _ = _admissible_columns(n, d)
    m = len(cols)
    if m == 0:
        raise ValueError("admissible space is trivial")
    rho, ctr = U_ball(n, r)
    zs = [compute_Z(make_H(c)).nonzero() for c in cols]
    cache: dict = {}

    def bm(e):
        if e not in cache:
            cache[e] = ball_moment_exact(rho, ctr, e)
        return cache[e]

    G = [[Fraction(0)] * m for _ in range(m)]
    for a in range(m):
        for b in range(a, m):
            tot = Fraction(0)
            za, zb = zs[a], zs[b]
            for idx, p in za.items():
                q = zb.get(idx)
                if q is None:
                    continue
                for e, v in (p * q).terms.items():
                    tot += v * bm(e)
            G[a][b] = G[b][a] = tot
    N = np.zeros((m, m))
    for a in range(m):
        for b in range(a, m):
            ea, eb = cols[a].entries, cols[b].entries
            s = sum((1 if k[0] == k[1] else 2) * v * eb[k] for k, v in ea.items() if k in eb)
            N[a, b] = N[b, a] = float(s)
    Gf = np.array([[float(x) for x in row] for row in G]) * math.pi ** (n / 2)
    lam = eigh(Gf, N, eigvals_only=True)
    lmin = float(lam[0])
    return K1Result(Gf / math.pi ** (n / 2), G, N, lmin, 1.0 / lmin if lmin > 0 else math.inf, m)


def scaling_defect(c: CoeffSet, r) -> Fraction:
    """``F_r(h) - r^{2m-4+n} F_1(h)`` for homogeneous ``h`` of degree m (exact)."""
    degs = c.degrees()
    if len(degs) != 1:
        raise ValueError("scaling law applies on homogeneous subspaces")
    m = degs.pop()
    r = Fraction(r)
    return z_energy_exact(c, r) - r ** (2 * m - 4 + c.n) * z_energy_exact(c, 1)


def homogeneous_part(c: CoeffSet, m: int) -> CoeffSet:
    return CoeffSet(c.n, c.d, {k: v for k, v in c.entries.items() if sum(k[2]) == m})
