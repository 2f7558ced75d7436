"""Weighted Galerkin solve for the gauge field V and the derived fields S, T, Q, w.

The weak problem is

    minimise  int u_eps^(2n/(n-2)) |chi_delta H - D V|^2   over V in the ansatz,

where ``D V = dV + dV^T - (2/n) div V`` is the flat conformal Killing
operator.  Tangential components of the ansatz are even in ``x_n`` and the
normal component is odd, which builds in ``V_n = d_n V_i = 0`` on the
boundary.  Integration runs over ``B_R ∩ R^n_+`` (``R = 2 delta`` by default,
``R = inf`` when the ansatz degree keeps the weighted integrals finite).

Internally everything is solved in the bubble-scaled variable ``y = x/eps``
where the weight becomes ``(1 + |y|^2)^(-n)``; V is mapped back by
``V(x) = eps * V~(x/eps)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg

from .fpoly import FPoly, QPoly, hemisphere_moment, radial_integral
from .quadrature import chi, boundary_disk_points, halfball_points
from .symtensor import CoeffSet, PolyTensor, make_H


class GaugeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# polynomial helpers


def tensor_fpoly(H, scale: float = 1.0):
    """Nested ``n x n`` list of FPoly from a CoeffSet, PolyTensor or nested list."""
    if isinstance(H, CoeffSet):
        H = make_H(H)
    if isinstance(H, PolyTensor):
        n = H.n
        out = [[FPoly(n) for _ in range(n)] for _ in range(n)]
        for (i, k), p in H.nonzero().items():
            out[i][k] = FPoly.from_dict(n, p.to_float_terms()) * scale
        return out
    n = len(H)
    return [[H[i][k] * scale if scale != 1.0 else H[i][k] for k in range(n)] for i in range(n)]


def rescale(p: FPoly, s: float) -> FPoly:
    """``y -> p(s y)``."""
    if p.is_zero:
        return p
    return FPoly(p.n, p.exps, p.coefs * s ** p.exps.sum(axis=1), _canonical=True)


def divergence(V):
    acc = FPoly(len(V))
    for i, v in enumerate(V):
        acc = acc + v.deriv(i)
    return acc


def ck_operator(V):
    """Flat conformal Killing operator ``d_i V_k + d_k V_i - (2/n) div V delta_ik``."""
    n = len(V)
    dv = divergence(V) * (2.0 / n)
    S = [[None] * n for _ in range(n)]
    for i in range(n):
        for k in range(i, n):
            s = V[k].deriv(i) + V[i].deriv(k)
            if i == k:
                s = s - dv
            S[i][k] = S[k][i] = s
    return S


# ---------------------------------------------------------------------------
# ansatz


@dataclass
class VectorPolyAnsatz:
    n: int
    D: int
    elements: list          # (component, exponent tuple)

    def __len__(self):
        return len(self.elements)

    def field(self, j):
        c, e = self.elements[j]
        V = [FPoly(self.n) for _ in range(self.n)]
        V[c] = FPoly(self.n, np.array([e]), [1.0])
        return V

    def combine(self, coefs):
        by = [dict() for _ in range(self.n)]
        for (c, e), a in zip(self.elements, coefs):
            if a != 0.0:
                by[c][e] = by[c].get(e, 0.0) + float(a)
        return [FPoly.from_dict(self.n, t) for t in by]

    def index(self):
        return {el: j for j, el in enumerate(self.elements)}


def _monomials(n, maxdeg):
    out = []
    for m in range(maxdeg + 1):
        for comb in itertools.combinations_with_replacement(range(n), m):
            a = [0] * n
            for j in comb:
                a[j] += 1
            out.append(tuple(a))
    return out


def build_ansatz(n: int, D: int) -> VectorPolyAnsatz:
    """Monomial vector fields of degree <= D with the boundary parity built in."""
    if D < 1:
        raise ValueError("ansatz degree must be >= 1")
    els = []
    for e in _monomials(n, D):
        for c in range(n):
            want_odd = c == n - 1
            if (e[-1] % 2 == 1) == want_odd:
                els.append((c, e))
    return VectorPolyAnsatz(n, D, els)


def conformal_killing_fields(n: int, D: int):
    """Exact boundary-compatible conformal Killing fields of degree <= D (as coefficient dicts)."""
    def mono(*js):
        a = [0] * n
        for j in js:
            a[j] += 1
        return tuple(a)

    t = n - 1
    fields = []
    for c in range(t):
        fields.append(("translation", {(c, mono()): 1.0}))
    if D >= 1:
        for a in range(t):
            for b in range(a + 1, t):
                fields.append(("rotation", {(b, mono(a)): 1.0, (a, mono(b)): -1.0}))
        fields.append(("dilation", {(c, mono(c)): 1.0 for c in range(n)}))
    if D >= 2:
        for a in range(t):
            f = {}
            for c in range(n):
                if c != a:
                    f[(c, mono(a, c))] = f.get((c, mono(a, c)), 0.0) + 2.0
                    f[(a, mono(c, c))] = f.get((a, mono(c, c)), 0.0) - 1.0
            f[(a, mono(a, a))] = f.get((a, mono(a, a)), 0.0) + 1.0
            fields.append(("special_conformal", f))
    return fields


# ---------------------------------------------------------------------------
# radial moments in the scaled variable (weight (1+|y|^2)^-b)


@lru_cache(maxsize=None)
def _radial(a: int, b: float, R: float, cut: float | None, power: int) -> float:
    """``int_0^R r^a (1+r^2)^-b chi(r/cut)^power dr``."""
    if cut is None or power == 0:
        return radial_integral(a, b, 1.0, 0.0, R)
    flat = min(R, 4.0 * cut / 3.0)
    val = radial_integral(a, b, 1.0, 0.0, flat)
    hi = min(R, 5.0 * cut / 3.0)
    if hi > flat:
        f = lambda r: r ** a * (1 + r * r) ** (-b) * float(chi(r / cut)) ** power
        v, _ = integrate.quad(f, flat, hi, epsabs=0.0, epsrel=1e-13, limit=200)
        val += v
    return val


def _moment(e, b, R, cut=None, power=0):
    s = hemisphere_moment(tuple(int(v) for v in e))
    if s == 0.0:
        return 0.0
    return s * _radial(int(sum(e)) + len(e) - 1, float(b), float(R), cut, power)


# ---------------------------------------------------------------------------
# Galerkin system


@dataclass
class KernelReport:
    dimension: int
    expected: int
    names: list
    basis: np.ndarray               # columns: kernel vectors in ansatz coordinates
    max_operator_norm: float        # max ||D K|| / ||K||_mass over the exact fields
    numerical_dimension: int


@dataclass
class _System:
    ansatz: VectorPolyAnsatz
    R: float                        # domain radius in y units
    G: np.ndarray
    Mv: np.ndarray
    C: np.ndarray                   # (ncomp, nmon, nb)
    mons: list
    comps: list
    weights: np.ndarray


_SYS_CACHE: dict = {}


def _system(n: int, D: int, R: float) -> _System:
    key = (n, D, R)
    if key in _SYS_CACHE:
        return _SYS_CACHE[key]
    if math.isinf(R) and not 2 * D - 2 < n:
        raise GaugeError(f"degree {D} not integrable on the full half-space for n={n}; use a finite radius")
    ans = build_ansatz(n, D)
    mons = _monomials(n, D - 1)
    midx = {m: a for a, m in enumerate(mons)}
    comps = [(i, k) for i in range(n) for k in range(i, n)]
    cidx = {c: j for j, c in enumerate(comps)}
    weights = np.array([1.0 if i == k else 2.0 for i, k in comps])
    nb = len(ans)
    C = np.zeros((len(comps), len(mons), nb))
    for j, (c, e) in enumerate(ans.elements):
        dc = e[c]
        for i in range(n):
            if e[i] == 0:
                continue
            f = list(e)
            f[i] -= 1
            m = midx[tuple(f)]
            if i == c:
                C[cidx[(c, c)], m, j] += 2.0 * e[i] - 2.0 / n * dc
                for p in range(n):
                    if p != c:
                        C[cidx[(p, p)], m, j] += -2.0 / n * dc
            else:
                C[cidx[(min(i, c), max(i, c))], m, j] += e[i]
    E = np.array(mons)
    Mom = np.zeros((len(mons), len(mons)))
    for a in range(len(mons)):
        for b in range(a, len(mons)):
            Mom[a, b] = Mom[b, a] = _moment(E[a] + E[b], n, R)
    G = np.zeros((nb, nb))
    for ci in range(len(comps)):
        Cc = C[ci]
        if not Cc.any():
            continue
        G += weights[ci] * (Cc.T @ Mom @ Cc)
    G = 0.5 * (G + G.T)
    # mass matrix for the kernel-orthogonality constraint, weight (1+|y|^2)^-(n+2)
    Mv = np.zeros((nb, nb))
    by_comp: dict = {}
    for j, (c, e) in enumerate(ans.elements):
        by_comp.setdefault(c, []).append((j, e))
    for c, lst in by_comp.items():
        for (j1, e1), (j2, e2) in itertools.combinations_with_replacement(lst, 2):
            v = _moment(np.add(e1, e2), n + 2, R)
            Mv[j1, j2] = Mv[j2, j1] = v
    sysm = _System(ans, R, G, Mv, C, mons, comps, weights)
    _SYS_CACHE[key] = sysm
    return sysm


def _kernel_matrix(sysm: _System):
    idx = sysm.ansatz.index()
    fields = conformal_killing_fields(sysm.ansatz.n, sysm.ansatz.D)
    K = np.zeros((len(sysm.ansatz), len(fields)))
    names = []
    for col, (name, f) in enumerate(fields):
        names.append(name)
        for key, v in f.items():
            K[idx[key], col] += v
    return K, names


def kernel(n: int, D: int, R: float = math.inf) -> KernelReport:
    """Conformal Killing fields inside the ansatz, checked against the Galerkin matrix."""
    sysm = _system(n, D, R)
    K, names = _kernel_matrix(sysm)
    mass = np.einsum("ij,ij->j", K, sysm.Mv @ K)
    op = np.einsum("ij,ij->j", K, sysm.G @ K)
    d = np.sqrt(np.where(np.diag(sysm.G) > 0, np.diag(sysm.G), np.diag(sysm.Mv)))
    Gs = sysm.G / np.outer(d, d)
    ev = np.linalg.eigvalsh(Gs)
    numdim = int(np.sum(ev < 1e-11 * ev[-1]))
    return KernelReport(K.shape[1], K.shape[1], names, K, float(np.sqrt(np.max(np.abs(op) / mass))), numdim)


@dataclass
class GaugeSolution:
    n: int
    eps: float
    delta: float
    R: float                    # domain radius in x units
    D: int
    ansatz: VectorPolyAnsatz
    coef_scaled: np.ndarray     # coefficients of V~(y)
    H: list                     # n x n FPoly in x (already multiplied by scale)
    V: list                     # n FPoly in x
    diagnostics: dict = field(default_factory=dict)
    cutoff: bool = True

    # -- basic fields -------------------------------------------------------

    def _q(self, b, p):
        return QPoly(self.n, self.eps, {b: p})

    @property
    def u(self):
        n = self.n
        return self._q((n - 2) / 2, FPoly.const(n, self.eps ** ((n - 2) / 2)))

    @property
    def du(self):
        n = self.n
        c = -(n - 2) * self.eps ** ((n - 2) / 2)
        return [self._q(n / 2, FPoly.var(n, i) * c) for i in range(n)]

    @property
    def u_crit(self):
        """``u^(2n/(n-2))``."""
        return self._q(self.n, FPoly.const(self.n, self.eps ** self.n))

    @property
    def u_4(self):
        """``u^(4/(n-2))``."""
        return self._q(2, FPoly.const(self.n, self.eps ** 2))

    @property
    def divV(self):
        return divergence(self.V)

    @property
    def S(self):
        return ck_operator(self.V)

    @property
    def T(self):
        S = self.S
        return [[self.H[i][k] - S[i][k] for k in range(self.n)] for i in range(self.n)]

    @property
    def w(self):
        n = self.n
        acc = self.u * self.divV * ((n - 2) / (2 * n))
        for l, dl in enumerate(self.du):
            acc = acc + dl * self.V[l]
        return acc

    @property
    def Q(self):
        n = self.n
        T, u, du = self.T, self.u, self.du
        c = 2.0 / (n - 2)
        duT = [sum((du[p] * T[i][p] for p in range(n)), QPoly(n, self.eps)) for i in range(n)]
        out = [[[None] * n for _ in range(n)] for _ in range(n)]
        for i in range(n):
            for k in range(i, n):
                for l in range(n):
                    q = u * T[i][k].deriv(l) - du[i] * T[k][l] * c - du[k] * T[i][l] * c
                    if k == l:
                        q = q + duT[i] * c
                    if i == l:
                        q = q + duT[k] * c
                    out[i][k][l] = out[k][i][l] = q
        return out

    def to_json(self):
        return {
            "n": self.n, "epsilon": self.eps, "delta": self.delta, "domain_radius": self.R,
            "degree": self.D, "cutoff": self.cutoff,
            "basis": [{"component": c + 1, "exponent": list(e)} for c, e in self.ansatz.elements],
            "coefficients_scaled": [repr(float(a)) for a in self.coef_scaled],
            "diagnostics": self.diagnostics,
        }


def solve_V(H, eps: float, delta: float, D: int, scale: float = 1.0, R: float | None = None,
            cutoff: bool = True, cond_max: float = 1e15) -> GaugeSolution:
    """Galerkin solution of the gauge system.

    ``H`` is a CoeffSet, PolyTensor or nested FPoly list; ``scale`` multiplies it.
    ``R`` is the domain radius in x units (default ``2 delta``).
    """
    Hx = tensor_fpoly(H, scale)
    n = len(Hx)
    if not eps > 0 or not delta > 0:
        raise ValueError("eps and delta must be positive")
    R = 2.0 * delta if R is None else float(R)
    Ry = R / eps
    cut = delta / eps if cutoff else None
    sysm = _system(n, D, Ry)
    nb = len(sysm.ansatz)
    midx_mons = np.array(sysm.mons)
    # source: s_j = sum_c w_c int W chi Ht_c (D B_j)_c, with Ht(y) = H(eps y)
    s = np.zeros(nb)
    hnorm2 = 0.0
    for ci, (i, k) in enumerate(sysm.comps):
        p = rescale(Hx[i][k], eps)
        if p.is_zero:
            continue
        wc = sysm.weights[ci]
        vec = np.array([sum(c * _moment(m + e, n, Ry, cut, 1) for e, c in zip(p.exps, p.coefs))
                        for m in midx_mons])
        s += wc * (sysm.C[ci].T @ vec)
        for e1, c1 in zip(p.exps, p.coefs):
            for e2, c2 in zip(p.exps, p.coefs):
                hnorm2 += wc * c1 * c2 * _moment(e1 + e2, n, Ry, cut, 2)
    K, _ = _kernel_matrix(sysm)
    G, Mv = sysm.G, sysm.Mv
    dG = np.diag(G)
    d = np.sqrt(np.where(dG > 1e-14 * dG.max(), dG, np.diag(Mv) * dG.max() / np.diag(Mv).max()))
    sc = 1.0 / d
    Gs = G * np.outer(sc, sc)
    cons = (K.T @ Mv) * sc[None, :]
    P = linalg.null_space(cons)
    Gr = P.T @ Gs @ P
    Gr = 0.5 * (Gr + Gr.T)
    lam, U = np.linalg.eigh(Gr)
    if lam[0] <= 0 or lam[-1] / lam[0] > cond_max:
        raise GaugeError(f"ill-conditioned Galerkin matrix (cond={lam[-1] / max(lam[0], 1e-300):.3e}); "
                         f"lower the degree D={D} or shrink the domain radius")
    sr = P.T @ (s * sc)
    cr = U @ ((U.T @ sr) / lam)
    for _ in range(3):
        r = sr - Gr @ cr
        cr = cr + U @ ((U.T @ r) / lam)
    c = sc * (P @ cr)
    # normal-equation residual per basis element
    Gc = (G.astype(np.longdouble) @ c.astype(np.longdouble))
    res = np.asarray(s.astype(np.longdouble) - Gc, dtype=float)
    nrm = np.sqrt(np.maximum(dG, 0.0)) * math.sqrt(max(hnorm2, 0.0))
    mask = dG > 1e-14 * dG.max()
    orth = float(np.max(np.abs(res[mask]) / nrm[mask])) if hnorm2 > 0 else 0.0
    cGc = float(c @ G @ c)
    resid2 = max(hnorm2 - 2 * float(c @ s) + cGc, 0.0)
    mass = float(c @ Mv @ c)
    # map back: V(x) = eps * V~(x/eps)
    Vy = sysm.ansatz.combine(c)
    Vx = [rescale(v, 1.0 / eps) * eps for v in Vy]
    diag = {
        "basis_size": nb, "kernel_dimension": int(K.shape[1]),
        "condition_number": float(lam[-1] / lam[0]),
        "orthogonality": orth,
        "source_norm2": hnorm2, "operator_norm2": cGc, "residual_norm2": resid2,
        "mass_norm2": mass,
        "kernel_mass_projection": float(np.max(np.abs(K.T @ Mv @ c))) if len(c) else 0.0,
    }
    return GaugeSolution(n, eps, delta, R, D, sysm.ansatz, c, Hx, Vx, diag, cutoff)


# ---------------------------------------------------------------------------
# diagnostics on a solution


def _eval_tensor(T, X):
    n = len(T)
    out = np.zeros((len(X), n, n))
    for i in range(n):
        for k in range(i, n):
            v = T[i][k](X)
            out[:, i, k] = out[:, k, i] = v
    return out


@dataclass
class StrongResidual:
    rms: float
    relative: float
    contracted_mismatch: float


def strong_residual(sol: GaugeSolution, samples: int = 2000, seed: int = 0, radius: float | None = None):
    """RMS of ``sum_k d_k(u^(2n/(n-2)) T_ik)`` over seeded points of ``B_delta ∩ R^n_+``."""
    n = sol.n
    X = halfball_points(n, samples, radius or sol.delta, seed)
    T, W = sol.T, sol.u_crit
    u, du = sol.u, sol.du
    expanded = np.zeros((len(X), n))
    contracted = np.zeros((len(X), n))
    source = np.zeros((len(X), n))
    Wx = W(X)
    dW = [W.deriv(k)(X) for k in range(n)]
    uX = u(X)
    duX = [d(X) for d in du]
    for i in range(n):
        for k in range(n):
            tk = T[i][k](X)
            dtk = T[i][k].deriv(k)(X)
            expanded[:, i] += dW[k] * tk + Wx * dtk
            contracted[:, i] += uX * dtk + (2 * n / (n - 2)) * duX[k] * tk
            hk = sol.H[i][k]
            source[:, i] += dW[k] * hk(X) + Wx * hk.deriv(k)(X)
    contracted *= uX[:, None] ** ((n + 2) / (n - 2))
    rms = float(np.sqrt(np.mean(expanded ** 2)))
    srms = float(np.sqrt(np.mean(source ** 2)))
    mism = float(np.max(np.abs(expanded - contracted)) / max(np.max(np.abs(expanded)), 1e-300))
    return StrongResidual(rms, rms / srms if srms > 0 else 0.0, mism)


def boundary_lemma_check(sol: GaugeSolution, samples: int = 500, seed: int = 0) -> dict:
    """Max over boundary points of the quantities that must vanish on ``x_n = 0``."""
    n = sol.n
    nn = n - 1
    X = boundary_disk_points(n, samples, sol.delta, seed)
    S, T = sol.S, sol.T
    out = {"S_in": 0.0, "T_in": 0.0, "dn_S_ik": 0.0, "dn_S_nn": 0.0, "dn_w": 0.0}
    for i in range(nn):
        out["S_in"] = max(out["S_in"], float(np.max(np.abs(S[i][nn](X)))))
        out["T_in"] = max(out["T_in"], float(np.max(np.abs(T[i][nn](X)))))
        for k in range(nn):
            out["dn_S_ik"] = max(out["dn_S_ik"], float(np.max(np.abs(S[i][k].deriv(nn)(X)))))
    out["dn_S_nn"] = float(np.max(np.abs(S[nn][nn].deriv(nn)(X))))
    out["dn_w"] = float(np.max(np.abs(sol.w.deriv(nn)(X))))
    return out


def xi_n_eval(sol: GaugeSolution, X):
    """The normal component of the flux field xi; returns ``(values, scale)``.

    ``scale`` is the largest absolute value among the individual terms, which
    makes ``|xi_n| / scale`` a cancellation-aware relative size.
    """
    n = sol.n
    nn = n - 1
    X = np.atleast_2d(X)
    u = sol.u(X)
    du = np.stack([d(X) for d in sol.du], axis=1)
    wq = sol.w
    w = wq(X)
    dw = np.stack([wq.deriv(k)(X) for k in range(n)], axis=1)
    H = _eval_tensor(sol.H, X)
    S = _eval_tensor(sol.S, X)
    T = H - S
    dH = np.stack([_eval_tensor([[p.deriv(l) for p in row] for row in sol.H], X) for l in range(n)], axis=-1)
    Sp = sol.S
    dS = np.stack([_eval_tensor([[p.deriv(l) for p in row] for row in Sp], X) for l in range(n)], axis=-1)
    duw = du * w[:, None] + u[:, None] * dw
    divS = np.einsum("nill->ni", dS)
    c = 4 * (n - 1) / (n - 2)
    terms = [
        -2 * u * w * np.einsum("nk->n", dH[:, nn, :, :].diagonal(axis1=1, axis2=2)),
        2 * np.einsum("ni,ni->n", duw, H[:, :, nn]),
        0.5 * u ** 2 * np.einsum("nik,nik->n", dS[..., nn], H),
        -u ** 2 * np.einsum("ni,ni->n", divS, H[:, :, nn]),
        -2 * u * np.einsum("nl,nil,ni->n", du, S, H[:, :, nn]),
        u * w * divS[:, nn],
        -np.einsum("ni,ni->n", duw, S[:, :, nn]),
        -0.25 * u ** 2 * np.einsum("nik,nik->n", dS[..., nn], S),
        0.5 * u ** 2 * np.einsum("ni,ni->n", divS, S[:, :, nn]),
        u * np.einsum("nl,nil,ni->n", du, S, S[:, :, nn]),
        c * w * np.einsum("ni,ni->n", du, S[:, :, nn]),
        -c * w * dw[:, nn],
        (2 / (n - 2)) * u * np.einsum("nk,nik,ni->n", du, T, T[:, :, nn]),
    ]
    vals = np.sum(terms, axis=0)
    scale = np.max(np.abs(np.array(terms)), axis=0)
    return vals, scale


def decay_profile(sol: GaugeSolution, radii=(1.0, 2.0, 4.0, 8.0), sigma: float | None = None):
    """``r^(-2 sigma - n - 2) int_{r<|x|<2r} |V|^2`` for each r."""
    n = sol.n
    if sigma is None:
        degs = [p.degree for row in sol.H for p in row if not p.is_zero]
        sigma = float(max(degs)) if degs else 2.0
    V2 = FPoly(n)
    for v in sol.V:
        V2 = V2 + v * v
    q = QPoly.poly(V2, sol.eps)
    return [(r, r ** (-2 * sigma - n - 2) * q.integrate_shell(r, 2 * r)) for r in radii]


def coefficient_norm2(H) -> float:
    """``sum |h_{ik,alpha}|^2`` over ordered index pairs."""
    Hx = tensor_fpoly(H)
    return float(sum(np.sum(p.coefs ** 2) for row in Hx for p in row))


# ---------------------------------------------------------------------------
# hemisphere identity


@dataclass
class HemisphereNorms:
    DV2: float
    gradV2: float
    divV2: float
    V2: float
    residual: float

    @property
    def relative_residual(self):
        return abs(self.residual) / max(self.gradV2 + self.DV2, 1e-300)


def hemisphere_identity(V) -> HemisphereNorms:
    """Norms of a vector field on the round hemisphere, pulled back to ``R^n_+``.

    The metric is ``phi^2 delta`` with ``phi = (1+|x|^2)^-1`` (curvature 4);
    the residual is ``|DV|^2 + 4(n-1)|V|^2 - |grad V|^2 - (n-2)/n |div V|^2``.
    ``|DV|^2`` is half the Frobenius norm, i.e. the integral of
    ``nabla_i V^k nabla^i V_k + nabla_i V^k nabla_k V^i - (2/n)(div V)^2``.
    """
    n = len(V)
    if not V[n - 1].substitute_zero(n - 1).is_zero:
        raise ValueError("vector field is not tangential along the boundary")
    one = 1.0

    def Q(b, p):
        return QPoly(n, one, {b: p})

    S = ck_operator(V)
    DV2 = sum((Q(n, S[i][k] * S[i][k]) for i in range(n) for k in range(n)), QPoly(n, one))
    V2 = sum((Q(n + 2, V[k] * V[k]) for k in range(n)), QPoly(n, one))
    # d_j log phi = -2 x_j phi
    x = [FPoly.var(n, j) for j in range(n)]
    xV = sum((x[j] * V[j] for j in range(n)), FPoly(n))
    grad = QPoly(n, one)
    for i in range(n):
        for k in range(n):
            # nabla_i V^k = d_i V_k + Gamma^k_{ij} V^j
            #   Gamma^k_ij V^j = d_i(log phi) V_k + delta_ik (V . dlog phi) - V_i d_k(log phi)
            e = Q(0, V[k].deriv(i)) + Q(1, x[i] * V[k] * -2.0) + Q(1, x[k] * V[i] * 2.0)
            if i == k:
                e = e + Q(1, xV * -2.0)
            grad = grad + Q(n, FPoly.const(n, 1.0)) * e * e
    divg = Q(0, divergence(V)) + Q(1, xV * (-2.0 * n))
    div2 = Q(n, FPoly.const(n, 1.0)) * divg * divg
    a = 0.5 * DV2.integrate_shell(0.0, math.inf)
    b = grad.integrate_shell(0.0, math.inf)
    c = div2.integrate_shell(0.0, math.inf)
    d = V2.integrate_shell(0.0, math.inf)
    res = a + 4 * (n - 1) * d - b - (n - 2) / n * c
    return HemisphereNorms(a, b, c, d, res)
