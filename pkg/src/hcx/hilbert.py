"""Punctual Hilbert scheme kernel.

A codimension-n ideal of C[x, y] in generic position has the normal form

    < -p^n + t_1 p^(n-1) + ... + t_n,  -pbar + mu_1 + mu_2 p + ... + mu_n p^(n-1) >

and corresponds to the commuting multiplication pair (A, B) in the monomial
basis (1, p, ..., p^(n-1)): A is the companion matrix of the first generator
and B = mu_1 + mu_2 A + ... + mu_n A^(n-1).  The reduced scheme fixes
tr A = tr B = 0 and the zero fiber is the nilpotent locus.

Hamiltonian vector fields of fiberwise polynomials act on ideals through
Poisson brackets reduced mod the ideal; the bracket convention

    {f, g} = f_p g_z - f_z g_p + f_pbar g_zbar - f_zbar g_pbar

is pinned by the variation d(mu_2) = (dbar - mu_2 del + del(mu_2)) v_2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg as la
from .coeff import _apply, _is_zero, _norm, _one_like, _zero_like, _conj, _invert
from .errors import NonGeneric, NonGenericConjugate, NotCyclic, NotPolynomialInA


@dataclass
class IdealNF:
    """Normal form data: t maps 1..n, mu maps 1..n; entries scalar or Coefficient."""

    n: int
    t: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)

    @property
    def reduced(self):
        return _is_zero(self.t.get(1, 0.0), 1e-12)

    @property
    def zero_fiber(self):
        return (all(_is_zero(v, 1e-12) for v in self.t.values())
                and _is_zero(self.mu.get(1, 0.0), 1e-12))

    def proto(self):
        for v in list(self.t.values()) + list(self.mu.values()):
            return v
        return 1.0

    def tt(self, k):
        v = self.t.get(k)
        return _zero_like(self.proto()) if v is None else v

    def mm(self, k):
        v = self.mu.get(k)
        return _zero_like(self.proto()) if v is None else v


@dataclass
class CommutingPair:
    """Matrix pair with a distinguished cyclic vector (the class of 1)."""

    A: object
    B: object
    cyclic: object = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=complex)
        self.B = np.asarray(self.B, dtype=complex)
        if self.cyclic is None:
            self.cyclic = np.zeros(self.A.shape[0], dtype=complex)
            self.cyclic[0] = 1.0
        else:
            self.cyclic = np.asarray(self.cyclic, dtype=complex)

    @property
    def n(self):
        return self.A.shape[0]

    def commutator_norm(self):
        return float(np.linalg.norm(self.A @ self.B - self.B @ self.A))


@dataclass
class PointCloud:
    """Multiset of points in C^2 with multiplicities."""

    points: list  # [(x, y, multiplicity)]

    def total(self):
        return sum(m for _, _, m in self.points)

    def barycenter(self):
        n = self.total()
        bx = sum(x * m for x, _, m in self.points) / n
        by = sum(y * m for _, y, m in self.points) / n
        return bx, by


# ---------------------------------------------------------------------------
# Ideal <-> pair
# ---------------------------------------------------------------------------

def companion_numeric(n, t):
    A = np.zeros((n, n), dtype=complex)
    for i in range(1, n):
        A[i, i - 1] = 1.0
    for k in range(1, n + 1):
        A[n - k, n - 1] = complex(t.get(k, 0.0))
    return A


def ideal_to_pair(I: IdealNF) -> CommutingPair:
    """Multiplication operators by p and pbar in the monomial basis.

    Exact: A is the companion matrix of p^n - t_1 p^(n-1) - ... - t_n and
    B = sum mu_k A^(k-1), so [A, B] = 0 identically.
    """
    n = I.n
    A = companion_numeric(n, {k: I.t.get(k, 0.0) for k in range(1, n + 1)})
    B = np.zeros((n, n), dtype=complex)
    P = np.eye(n, dtype=complex)
    for k in range(1, n + 1):
        B += complex(I.mu.get(k, 0.0)) * P
        P = P @ A
    return CommutingPair(A, B)


def _krylov_rank(A, B, v, tol=1e-10):
    n = A.shape[0]
    vecs = [v]
    frontier = [v]
    for _ in range(2 * n):
        new = []
        for w in frontier:
            new.append(A @ w)
            new.append(B @ w)
        vecs.extend(new)
        frontier = new
        if len(vecs) > 4 * n * n:
            break
    M = np.stack(vecs, axis=0)
    s = np.linalg.svd(M, compute_uv=False)
    scale = s[0] if s[0] > 0 else 1.0
    return int(np.sum(s > tol * scale))


def pair_to_ideal(P: CommutingPair, tol: float = 1e-9) -> IdealNF:
    """Normal form from a commuting pair.

    t comes from the characteristic polynomial of A; mu solves
    B = sum mu_(k+1) A^k, raising NotPolynomialInA if inconsistent.  The
    distinguished vector must be cyclic.
    """
    n = P.n
    scale = max(np.linalg.norm(P.A), np.linalg.norm(P.B), 1.0)
    if _krylov_rank(P.A, P.B, P.cyclic) < n:
        raise NotCyclic("distinguished vector does not generate C^n")
    # characteristic polynomial p^n - t_1 p^(n-1) - ... - t_n
    cp = np.poly(P.A)  # leading 1
    t = {k: complex(-cp[k]) for k in range(1, n + 1)}
    # solve B = sum mu_{k+1} A^k as a least squares problem over all entries
    cols = []
    Pk = np.eye(n, dtype=complex)
    for _ in range(n):
        cols.append(Pk.reshape(-1))
        Pk = Pk @ P.A
    M = np.stack(cols, axis=1)
    rhs = P.B.reshape(-1)
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    resid = float(np.linalg.norm(M @ sol - rhs))
    if resid > tol * scale:
        raise NotPolynomialInA(f"residual {resid:.2e} solving B as a polynomial in A")
    mu = {k + 1: complex(sol[k]) for k in range(n)}
    return IdealNF(n, t, mu)


def chow(P: CommutingPair, cluster_tol: float = 1e-8) -> PointCloud:
    """Joint spectrum with multiplicities via simultaneous triangularization.

    Schur on A is tried first; when repeated eigenvalues of A leave B
    untriangularized, a generic linear combination is used instead.
    """
    import scipy.linalg as sla
    n = P.n
    scale = max(np.linalg.norm(P.A), np.linalg.norm(P.B), 1.0)
    T_A, Q = sla.schur(P.A, output="complex")
    T_B = Q.conj().T @ P.B @ Q
    if np.max(np.abs(np.tril(T_B, -1))) > 1e-8 * scale:
        rng = np.random.default_rng(99)
        for _ in range(6):
            gamma = complex(rng.standard_normal(), rng.standard_normal())
            T_C, Q = sla.schur(P.A + gamma * P.B, output="complex")
            T_A = Q.conj().T @ P.A @ Q
            T_B = Q.conj().T @ P.B @ Q
            if (np.max(np.abs(np.tril(T_A, -1))) < 1e-8 * scale
                    and np.max(np.abs(np.tril(T_B, -1))) < 1e-8 * scale):
                break
    xs = np.diag(T_A)
    ys = np.diag(T_B)
    used = [False] * n
    points = []
    for i in range(n):
        if used[i]:
            continue
        mult = 1
        used[i] = True
        for j in range(i + 1, n):
            if used[j]:
                continue
            if (abs(xs[j] - xs[i]) <= cluster_tol * max(1.0, abs(xs[i]))
                    and abs(ys[j] - ys[i]) <= cluster_tol * max(1.0, abs(ys[i]))):
                used[j] = True
                mult += 1
        points.append((complex(xs[i]), complex(ys[i]), mult))
    return PointCloud(points)


def symplectic_pairing(P: CommutingPair, d1, d2) -> complex:
    """tr(dA1 dB2 - dA2 dB1) for tangent pairs d1 = (dA1, dB1), d2 = (dA2, dB2)."""
    dA1, dB1 = (np.asarray(m, dtype=complex) for m in d1)
    dA2, dB2 = (np.asarray(m, dtype=complex) for m in d2)
    return complex(np.trace(dA1 @ dB2 - dA2 @ dB1))


def conjugate_structure(I: IdealNF, tol: float = 1e-9) -> IdealNF:
    """Normal form of the conjugated ideal.

    The conjugated multiplication pair is (conj(B), conj(A)); genericity
    requires mu_2 invertible, giving e.g. the n = 2 relation
    new mu_2 = 1 / conj(mu_2).
    """
    m2 = I.mu.get(2, 0.0)
    if _is_zero(m2, 1e-10):
        raise NonGenericConjugate("mu_2 is not invertible")
    pair = ideal_to_pair(I)
    conj_pair = CommutingPair(np.conj(pair.B), np.conj(pair.A))
    try:
        return pair_to_ideal(conj_pair, tol)
    except (NotCyclic, NotPolynomialInA) as exc:
        raise NonGenericConjugate(str(exc)) from exc


# ---------------------------------------------------------------------------
# Poisson action on ideals
# ---------------------------------------------------------------------------

def _ppoly_mul(a, b):
    out = {}
    for i, c1 in a.items():
        for j, c2 in b.items():
            p = c1 * c2
            out[i + j] = out[i + j] + p if i + j in out else p
    return out


def _ppoly_reduce(poly, n, t, proto):
    """Reduce a polynomial in p mod p^n = t_1 p^(n-1) + ... + t_n."""
    work = dict(poly)
    out = {}
    while work:
        i, c = work.popitem()
        if _is_zero(c, 0.0) if not isinstance(c, (int, float, complex)) else c == 0:
            continue
        if i < n:
            out[i] = out[i] + c if i in out else c
            continue
        for k in range(1, n + 1):
            j = i - n + n - k
            add = c * t.get(k, _zero_like(proto))
            work[j] = work[j] + add if j in work else add
    return out


def poisson_action(I: IdealNF, H: dict, mod_t2: bool = False):
    """Variations (dP, dQ) of the generator coefficient tuples.

    H maps powers k >= 1 to coefficients of p^k (no constant term).  Returns
    (dt, dmu) with dt[k] the coefficient of p^(n-k), k = 1..n, of
    {H, p^n - P}, and dmu[k] the coefficient of p^(k-1) of {H, -pbar + Q},
    both reduced mod the ideal.  ``mod_t2`` additionally drops terms
    quadratic in t when the coefficients support the projection.
    """
    n = I.n
    proto = I.proto()
    one = _one_like(proto)
    zero = _zero_like(proto)

    t = {k: I.t.get(k, zero) for k in range(1, n + 1)}
    mu = {k: I.mu.get(k, zero) for k in range(1, n + 1)}

    # polynomials over the ring: {power: coeff}
    h = {k: v for k, v in H.items()}
    f = {n: one}
    for k in range(1, n + 1):
        f[n - k] = f.get(n - k, zero) - t[k]
    q = {k - 1: mu[k] for k in range(1, n + 1)}

    def d_p(poly):
        return {i - 1: c * float(i) for i, c in poly.items() if i > 0}

    def d_dir(poly, op):
        return {i: _apply(c, op) for i, c in poly.items()}

    def bracket_no_pbar(a, b, b_has_pbar):
        """{a, b} for a = a(p, z, zbar), b = b(p, z, zbar) - pbar * [b_has_pbar]."""
        acc = _ppoly_mul(d_p(a), d_dir(b, "d"))
        neg = _ppoly_mul(d_dir(a, "d"), d_p(b))
        for i, c in neg.items():
            acc[i] = acc.get(i, zero) - c
        if b_has_pbar:
            # + f_zbar since g_pbar = -1 enters with the minus convention
            for i, c in d_dir(a, "dbar").items():
                acc[i] = acc.get(i, zero) + c
        return acc

    dP = bracket_no_pbar(h, f, False)
    dQ = bracket_no_pbar(h, q, True)
    dP = _ppoly_reduce(dP, n, t, proto)
    dQ = _ppoly_reduce(dQ, n, t, proto)

    if mod_t2:
        names = set()
        for v in t.values():
            if hasattr(v, "terms"):
                for (_, mono) in v.terms:
                    for (name, _, _) in mono:
                        names.add(name.rstrip("~"))
        if names:
            dP = {k: v.drop_quadratic(names) if hasattr(v, "drop_quadratic") else v
                  for k, v in dP.items()}
            dQ = {k: v.drop_quadratic(names) if hasattr(v, "drop_quadratic") else v
                  for k, v in dQ.items()}

    dt = {k: dP.get(n - k, zero) for k in range(1, n + 1)}
    dmu = {k: dQ.get(k - 1, zero) for k in range(1, n + 1)}
    return dt, dmu
